#include "mcalab/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "mcalab/binfile.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/rng.hpp"
#include "mcalab/tensor.hpp"

namespace mcalab {

namespace {

// Fixed chunk size keeps results independent of caller batching.
constexpr std::size_t kEncodeChunk = 256;

std::vector<std::vector<double>> encode_rows(const EncoderParams& params,
                                             const std::vector<Item>& items) {
  std::vector<std::vector<double>> out;
  out.reserve(items.size());
  for (std::size_t start = 0; start < items.size(); start += kEncodeChunk) {
    std::size_t count = std::min(kEncodeChunk, items.size() - start);
    std::vector<Item> chunk(items.begin() + static_cast<std::ptrdiff_t>(start),
                            items.begin() + static_cast<std::ptrdiff_t>(start + count));
    Tape tape;
    Tensor e = encode(tape, params, chunk);
    std::size_t d = e.cols();
    for (std::size_t i = 0; i < count; ++i)
      out.emplace_back(e.value().begin() + static_cast<std::ptrdiff_t>(i * d),
                       e.value().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

RetrievalReport evaluate(const EncoderParams& params, const std::vector<EvalCase>& split,
                         const std::string& split_name) {
  RetrievalReport report;
  report.split = split_name;
  report.n_queries = split.size();
  if (split.empty()) return report;

  std::vector<Item> items;
  items.reserve(split.size() * (1 + split[0].pool.size()));
  for (const EvalCase& ec : split) items.push_back(ec.query);
  for (const EvalCase& ec : split)
    for (const Item& cand : ec.pool) items.push_back(cand);
  std::vector<std::vector<double>> embs = encode_rows(params, items);

  std::size_t hits1 = 0, hits5 = 0;
  for (std::size_t qi = 0; qi < split.size(); ++qi) {
    const EvalCase& ec = split[qi];
    std::size_t pool_base = split.size() + qi * ec.pool.size();
    std::vector<double> sims(ec.pool.size());
    for (std::size_t k = 0; k < ec.pool.size(); ++k)
      sims[k] = dot(embs[qi], embs[pool_base + k]);

    // Rank of the gold candidate under lowest-index tie-break: candidates
    // strictly better, plus equal-scored ones at a lower index.
    std::size_t rank = 0;
    double gold_sim = sims[ec.gold_index];
    for (std::size_t k = 0; k < sims.size(); ++k) {
      if (sims[k] > gold_sim || (sims[k] == gold_sim && k < ec.gold_index)) ++rank;
    }
    if (rank == 0) ++hits1;
    if (rank < 5) ++hits5;
  }
  report.accuracy_at_1 = static_cast<double>(hits1) / static_cast<double>(split.size());
  report.accuracy_at_5 = static_cast<double>(hits5) / static_cast<double>(split.size());
  return report;
}

double shortcut_index(const EncoderParams& params, const std::vector<EvalCase>& split,
                      std::size_t n_resample, std::uint64_t seed) {
  if (n_resample < 1) throw InvalidInputError("shortcut_index: n_resample must be >= 1");
  if (params.config.text_vocab < 2)
    throw InvalidInputError("shortcut_index: vocabulary of size 1 leaves nothing to resample");

  std::vector<Item> originals;
  std::vector<Item> resampled;
  Rng rng(seed);
  for (const EvalCase& ec : split) {
    if (!ec.query.is_composed()) continue;
    originals.push_back(ec.query);
    for (std::size_t r = 0; r < n_resample; ++r) {
      std::int32_t t;
      do {
        t = static_cast<std::int32_t>(rng.below(params.config.text_vocab));
      } while (t == *ec.query.token);
      resampled.push_back(Item{ec.query.image, t});
    }
  }
  if (originals.empty()) throw InvalidInputError("shortcut_index: split has no composed queries");

  std::vector<std::vector<double>> orig_embs = encode_rows(params, originals);
  std::vector<std::vector<double>> res_embs = encode_rows(params, resampled);

  double sum = 0.0;
  for (std::size_t i = 0; i < originals.size(); ++i)
    for (std::size_t r = 0; r < n_resample; ++r)
      sum += dot(orig_embs[i], res_embs[i * n_resample + r]);
  return sum / static_cast<double>(originals.size() * n_resample);
}

double composition_margin_rate(const EncoderParams& params, const std::vector<EvalCase>& split) {
  std::vector<Item> composed, img_parts, txt_parts, golds;
  for (const EvalCase& ec : split) {
    if (!ec.query.is_composed()) continue;
    composed.push_back(ec.query);
    auto parts = unimodal_parts(ec.query);
    img_parts.push_back(std::move(parts[0]));
    txt_parts.push_back(std::move(parts[1]));
    golds.push_back(ec.pool[ec.gold_index]);
  }
  if (composed.empty())
    throw ContractError("composition_margin_rate: split has no composed queries");

  auto ce = encode_rows(params, composed);
  auto ie = encode_rows(params, img_parts);
  auto te = encode_rows(params, txt_parts);
  auto ge = encode_rows(params, golds);

  std::size_t wins = 0;
  for (std::size_t i = 0; i < composed.size(); ++i) {
    double part_best = std::max(dot(ie[i], ge[i]), dot(te[i], ge[i]));
    if (dot(ce[i], ge[i]) > part_best) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(composed.size());
}

RetrievalReport full_report(const EncoderParams& params, const std::vector<EvalCase>& split,
                            const std::string& split_name, std::size_t n_resample,
                            std::uint64_t seed) {
  RetrievalReport report = evaluate(params, split, split_name);
  report.shortcut_index = shortcut_index(params, split, n_resample, seed);
  report.composition_margin_rate = composition_margin_rate(params, split);
  return report;
}

void export_embeddings(const EncoderParams& params, const std::vector<EvalCase>& split,
                       const std::filesystem::path& path) {
  std::vector<Item> items;
  std::vector<std::int32_t> groups;
  for (const EvalCase& ec : split) {
    if (!ec.query.is_composed()) continue;
    auto parts = unimodal_parts(ec.query);
    items.push_back(ec.query);
    groups.push_back(0);
    items.push_back(std::move(parts[1]));
    groups.push_back(1);
    items.push_back(std::move(parts[0]));
    groups.push_back(2);
    items.push_back(ec.pool[ec.gold_index]);
    groups.push_back(3);
  }
  auto embs = encode_rows(params, items);

  std::size_t n = embs.size(), d = n ? embs[0].size() : params.config.d_out;
  std::vector<float> flat(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = static_cast<float>(embs[i][j]);

  nlohmann::json meta;
  meta["kind"] = "embeddings";
  meta["d_out"] = d;
  meta["groups"] = {"composed_query", "text_only", "image_only", "target"};
  write_binfile(path, kDatasetMagic, meta,
                {NamedArray::floats("embeddings", {n, d}, std::move(flat)),
                 NamedArray::ints("group", {n}, std::move(groups))});
}

std::vector<std::array<double, 2>> pca_project(
    const std::vector<std::vector<double>>& embeddings) {
  std::size_t n = embeddings.size();
  if (n < 2) throw InvalidInputError("pca_project: need at least 2 embeddings");
  std::size_t d = embeddings[0].size();

  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i),
                                          static_cast<Eigen::Index>(j)) = embeddings[i][j];
  Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success)
    throw DegenerateInputError("pca_project: eigen-decomposition failed");
  // Eigenvalues ascend; take the top two.
  Eigen::Index last = cov.rows() - 1;
  if (solver.eigenvalues()(last) < 1e-300)
    throw DegenerateInputError("pca_project: all points identical");

  std::vector<std::array<double, 2>> out(n);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd axis = solver.eigenvectors().col(last - c);
    // Sign convention: the largest-magnitude loading is positive.
    Eigen::Index imax = 0;
    axis.cwiseAbs().maxCoeff(&imax);
    if (axis(imax) < 0.0) axis = -axis;
    Eigen::VectorXd proj = x * axis;
    for (std::size_t i = 0; i < n; ++i) out[i][static_cast<std::size_t>(c)] =
        proj(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace mcalab
