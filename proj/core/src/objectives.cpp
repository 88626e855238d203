#include "mcalab/objectives.hpp"

#include <cmath>
#include <numeric>

#include "mcalab/errors.hpp"
#include "mcalab/rng.hpp"

namespace mcalab {

namespace {

// Per-row sum over columns as a matmul with a constant ones column.
Tensor rowsum(Tape& tape, const Tensor& a) {
  return tape.matmul(a, Tensor::constant({a.cols(), 1}, 1.0));
}

void check_unit_rows(const Tensor& t, const char* who) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) s += t.value()[i * t.cols() + j] *
                                                    t.value()[i * t.cols() + j];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
      throw ContractError(std::string(who) + ": input row " + std::to_string(i) +
                          " is not unit-norm");
  }
}

}  // namespace

Mixer mixer_from_string(const std::string& s) {
  if (s == "mean_pool") return Mixer::MeanPool;
  if (s == "gated_fusion") return Mixer::GatedFusion;
  if (s == "mfb") return Mixer::Mfb;
  throw InvalidConfigError("unknown mixer '" + s + "' (mean_pool | gated_fusion | mfb)");
}

std::string mixer_to_string(Mixer m) {
  switch (m) {
    case Mixer::MeanPool: return "mean_pool";
    case Mixer::GatedFusion: return "gated_fusion";
    case Mixer::Mfb: return "mfb";
  }
  throw ContractError("unhandled mixer");
}

void MCAConfig::validate() const {
  if (!(tau > 0.0)) throw InvalidConfigError("tau must be > 0");
  if (alpha < 0.0 || beta < 0.0) throw InvalidConfigError("alpha and beta must be >= 0");
  if (mfb_factor < 1) throw InvalidConfigError("mfb_factor must be >= 1");
}

MixerParams init_mixer(Mixer kind, std::size_t d_out, std::size_t mfb_factor,
                       std::uint64_t seed) {
  MixerParams mp;
  mp.kind = kind;
  Rng master(seed);
  switch (kind) {
    case Mixer::MeanPool:
      break;
    case Mixer::GatedFusion:
      // Zero init makes the gate 0.5 everywhere, i.e. exactly mean pooling.
      master.fork();
      mp.params.push_back({"mixer_gate_w", Tensor::zeros({2 * d_out, d_out}, true)});
      master.fork();
      mp.params.push_back({"mixer_gate_b", Tensor::zeros({1, d_out}, true)});
      break;
    case Mixer::Mfb: {
      double std = 1.0 / std::sqrt(static_cast<double>(d_out));
      mp.params.push_back({"mixer_mfb_p", Tensor::gaussian({d_out, mfb_factor * d_out}, 0.0, std,
                                                           master.fork(), true)});
      mp.params.push_back({"mixer_mfb_q", Tensor::gaussian({d_out, mfb_factor * d_out}, 0.0, std,
                                                           master.fork(), true)});
      break;
    }
  }
  return mp;
}

Tensor similarity(Tape& tape, const Tensor& h_a, const Tensor& h_b, double tau) {
  if (h_a.size() != h_b.size()) throw InvalidShapeError("similarity: dimension mismatch");
  check_unit_rows(h_a, "similarity");
  check_unit_rows(h_b, "similarity");
  return tape.scale(tape.sum_all(tape.mul_elementwise(h_a, h_b)), 1.0 / tau);
}

Tensor cl_loss(Tape& tape, const Tensor& query_embs, const Tensor& doc_embs,
               const std::vector<std::size_t>& positive_index, double tau, bool symmetric) {
  std::size_t nq = query_embs.rows(), nd = doc_embs.rows();
  if (nd < 2) throw ContractError("cl_loss: need at least 2 documents");
  if (positive_index.size() != nq)
    throw ContractError("cl_loss: one positive index per query required");
  std::vector<bool> seen(nd, false);
  for (std::size_t p : positive_index) {
    if (p >= nd) throw ContractError("cl_loss: positive index out of range");
    if (seen[p]) throw ContractError("cl_loss: duplicate positive index");
    seen[p] = true;
  }

  Tensor logits =
      tape.scale(tape.matmul(query_embs, tape.transpose(doc_embs)), 1.0 / tau);
  std::vector<double> mask(nq * nd, 0.0);
  for (std::size_t i = 0; i < nq; ++i) mask[i * nd + positive_index[i]] = 1.0;

  Tensor fwd = tape.scale(
      tape.sum_all(tape.mul_elementwise(tape.log_softmax_rows(logits),
                                        Tensor::from({nq, nd}, mask))),
      -1.0 / static_cast<double>(nq));
  if (!symmetric) return fwd;

  std::vector<double> mask_t(nd * nq, 0.0);
  for (std::size_t i = 0; i < nq; ++i) mask_t[positive_index[i] * nq + i] = 1.0;
  Tensor bwd = tape.scale(
      tape.sum_all(tape.mul_elementwise(tape.log_softmax_rows(tape.transpose(logits)),
                                        Tensor::from({nd, nq}, std::move(mask_t)))),
      -1.0 / static_cast<double>(nq));
  return tape.scale(tape.add(fwd, bwd), 0.5);
}

Tensor mcp_loss(Tape& tape, const Tensor& composed_emb, const std::vector<Tensor>& part_embs,
                const Tensor& target_emb, double tau) {
  if (part_embs.empty()) throw ContractError("mcp_loss: empty part set");
  Tensor sim_composed =
      tape.scale(tape.sum_all(tape.mul_elementwise(composed_emb, target_emb)), 1.0 / tau);
  Tensor acc;
  for (const Tensor& part : part_embs) {
    Tensor sim_part =
        tape.scale(tape.sum_all(tape.mul_elementwise(part, target_emb)), 1.0 / tau);
    Tensor diff = tape.sub(sim_part, sim_composed);
    acc = acc.defined() ? tape.add(acc, diff) : diff;
  }
  return acc;
}

Tensor mix(Tape& tape, const MixerParams& mixer, const Tensor& text_embs,
           const Tensor& image_embs) {
  if (text_embs.rows() != image_embs.rows() || text_embs.cols() != image_embs.cols())
    throw InvalidShapeError("mix: part batches must have identical shape");
  switch (mixer.kind) {
    case Mixer::MeanPool:
      return tape.l2_normalize_rows(tape.scale(tape.add(text_embs, image_embs), 0.5));
    case Mixer::GatedFusion: {
      const Tensor& w = mixer.params[0].t;
      const Tensor& b = mixer.params[1].t;
      Tensor gate = tape.sigmoid(
          tape.add_rowvec(tape.matmul(tape.concat_cols(text_embs, image_embs), w), b));
      Tensor inv_gate =
          tape.sub(Tensor::constant({gate.rows(), gate.cols()}, 1.0), gate);
      return tape.l2_normalize_rows(tape.add(tape.mul_elementwise(gate, text_embs),
                                             tape.mul_elementwise(inv_gate, image_embs)));
    }
    case Mixer::Mfb: {
      const Tensor& p = mixer.params[0].t;
      const Tensor& q = mixer.params[1].t;
      std::size_t window = p.cols() / p.rows();
      Tensor joint = tape.mul_elementwise(tape.matmul(text_embs, p), tape.matmul(image_embs, q));
      return tape.l2_normalize_rows(tape.signed_sqrt(tape.sumpool_cols(joint, window)));
    }
  }
  throw ContractError("unhandled mixer");
}

Tensor mcr_loss(Tape& tape, const Tensor& composed_embs, const Tensor& prototype_embs,
                double tau) {
  std::size_t n = composed_embs.rows();
  if (prototype_embs.rows() != n)
    throw ContractError("mcr_loss: one prototype per composed input required");
  if (n < 2) return Tensor::constant({1, 1}, 0.0);

  Tensor logits =
      tape.scale(tape.matmul(composed_embs, tape.transpose(prototype_embs)), 1.0 / tau);
  std::vector<double> mask(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 1.0;
  return tape.scale(
      tape.sum_all(tape.mul_elementwise(tape.log_softmax_rows(logits),
                                        Tensor::from({n, n}, std::move(mask)))),
      -1.0 / static_cast<double>(n));
}

namespace {

// Per-pair MCP contribution for one side (n x 1): either the raw summed
// similarity difference or the per-part margin clamp.
Tensor mcp_side(Tape& tape, const MCAConfig& cfg, const Tensor& composed, const Tensor& img_parts,
                const Tensor& txt_parts, const Tensor& targets) {
  double inv_tau = 1.0 / cfg.tau;
  if (!cfg.mcp_margin_clamp) {
    Tensor delta = tape.sub(tape.add(img_parts, txt_parts), tape.scale(composed, 2.0));
    return tape.scale(rowsum(tape, tape.mul_elementwise(delta, targets)), inv_tau);
  }
  Tensor margin = Tensor::constant({composed.rows(), 1}, cfg.mcp_margin);
  Tensor acc;
  for (const Tensor* part : {&img_parts, &txt_parts}) {
    Tensor diff = tape.scale(
        rowsum(tape, tape.mul_elementwise(tape.sub(*part, composed), targets)), inv_tau);
    Tensor clamped = tape.relu(tape.add(diff, margin));
    acc = acc.defined() ? tape.add(acc, clamped) : clamped;
  }
  return acc;
}

}  // namespace

Tensor total_loss(Tape& tape, const EncoderParams& params, const MixerParams& mixer,
                  const std::vector<Pair>& batch, const MCAConfig& config,
                  LossBreakdown* breakdown) {
  config.validate();
  if (batch.empty()) throw ContractError("total_loss: empty batch");
  std::size_t b = batch.size();

  std::vector<Item> items;
  items.reserve(4 * b);
  for (const Pair& p : batch) items.push_back(p.query);
  for (const Pair& p : batch) items.push_back(p.positive_doc);

  std::vector<std::size_t> composed_q, composed_d;
  for (std::size_t i = 0; i < b; ++i)
    if (batch[i].query.is_composed()) composed_q.push_back(i);
  for (std::size_t i = 0; i < b; ++i)
    if (batch[i].positive_doc.is_composed()) composed_d.push_back(i);

  // Parts are encoded in the same forward pass as the composed items.
  std::size_t parts_q_base = items.size();
  for (std::size_t i : composed_q) {
    auto parts = unimodal_parts(batch[i].query);
    items.push_back(std::move(parts[0]));  // image-only
    items.push_back(std::move(parts[1]));  // text-only
  }
  std::size_t parts_d_base = items.size();
  for (std::size_t i : composed_d) {
    auto parts = unimodal_parts(batch[i].positive_doc);
    items.push_back(std::move(parts[0]));
    items.push_back(std::move(parts[1]));
  }

  Tensor all = encode(tape, params, items);
  auto take = [&](const std::vector<std::size_t>& idx) { return tape.gather_rows(all, idx); };
  auto iota = [](std::size_t from, std::size_t count) {
    std::vector<std::size_t> v(count);
    std::iota(v.begin(), v.end(), from);
    return v;
  };

  Tensor queries = take(iota(0, b));
  Tensor docs = take(iota(b, b));
  Tensor cl = cl_loss(tape, queries, docs, iota(0, b), config.tau, config.cl_symmetric);

  // MCP: query side when the query is composed, document side when the
  // document is composed; mean over pairs with at least one composed side.
  Tensor mcp_sum;
  std::size_t mcp_pairs = 0;
  if (!composed_q.empty()) {
    std::vector<std::size_t> img_rows, txt_rows, doc_rows;
    for (std::size_t k = 0; k < composed_q.size(); ++k) {
      img_rows.push_back(parts_q_base + 2 * k);
      txt_rows.push_back(parts_q_base + 2 * k + 1);
      doc_rows.push_back(b + composed_q[k]);
    }
    mcp_sum = tape.sum_all(mcp_side(tape, config, take(composed_q), take(img_rows),
                                    take(txt_rows), take(doc_rows)));
  }
  if (config.mcp_bidirectional && !composed_d.empty()) {
    std::vector<std::size_t> img_rows, txt_rows, doc_idx, query_rows;
    for (std::size_t k = 0; k < composed_d.size(); ++k) {
      img_rows.push_back(parts_d_base + 2 * k);
      txt_rows.push_back(parts_d_base + 2 * k + 1);
      doc_idx.push_back(b + composed_d[k]);
      query_rows.push_back(composed_d[k]);
    }
    Tensor side = tape.sum_all(mcp_side(tape, config, take(doc_idx), take(img_rows),
                                        take(txt_rows), take(query_rows)));
    mcp_sum = mcp_sum.defined() ? tape.add(mcp_sum, side) : side;
  }
  {
    std::vector<bool> counted(b, false);
    for (std::size_t i : composed_q) counted[i] = true;
    if (config.mcp_bidirectional)
      for (std::size_t i : composed_d) counted[i] = true;
    for (bool c : counted) mcp_pairs += c ? 1 : 0;
  }
  Tensor mcp = mcp_sum.defined()
                   ? tape.scale(mcp_sum, 1.0 / static_cast<double>(mcp_pairs))
                   : Tensor::constant({1, 1}, 0.0);

  // MCR over all composed items in the batch (queries and documents).
  std::vector<std::size_t> comp_rows, comp_img, comp_txt;
  for (std::size_t k = 0; k < composed_q.size(); ++k) {
    comp_rows.push_back(composed_q[k]);
    comp_img.push_back(parts_q_base + 2 * k);
    comp_txt.push_back(parts_q_base + 2 * k + 1);
  }
  for (std::size_t k = 0; k < composed_d.size(); ++k) {
    comp_rows.push_back(b + composed_d[k]);
    comp_img.push_back(parts_d_base + 2 * k);
    comp_txt.push_back(parts_d_base + 2 * k + 1);
  }
  Tensor mcr;
  if (comp_rows.size() >= 2) {
    Tensor prototypes = mix(tape, mixer, take(comp_txt), take(comp_img));
    if (config.prototype_stop_gradient) prototypes = Tape::detach(prototypes);
    mcr = mcr_loss(tape, take(comp_rows), prototypes, config.tau);
  } else {
    mcr = Tensor::constant({1, 1}, 0.0);
  }

  Tensor total = tape.add(cl, tape.add(tape.scale(mcp, config.alpha),
                                       tape.scale(mcr, config.beta)));
  if (breakdown) {
    breakdown->total = total.scalar();
    breakdown->cl = cl.scalar();
    breakdown->mcp = mcp.scalar();
    breakdown->mcr = mcr.scalar();
  }
  return total;
}

}  // namespace mcalab
