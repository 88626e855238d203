#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcalab/gradcheck.hpp"
#include "mcalab/model.hpp"
#include "mcalab/tensor.hpp"

namespace mcalab {

enum class Mixer { MeanPool, GatedFusion, Mfb };

Mixer mixer_from_string(const std::string& s);
std::string mixer_to_string(Mixer m);

struct MCAConfig {
  double tau = 0.02;
  double alpha = 0.01;
  double beta = 0.01;
  Mixer mixer = Mixer::GatedFusion;
  std::size_t mfb_factor = 4;
  bool mcp_bidirectional = true;
  bool prototype_stop_gradient = false;
  bool cl_symmetric = false;
  // Default MCP is an unbounded similarity difference; the clamped
  // max(0, diff + margin) form is an optional variant, off by default.
  bool mcp_margin_clamp = false;
  double mcp_margin = 0.0;

  void validate() const;
};

struct MixerParams {
  Mixer kind = Mixer::MeanPool;
  std::vector<NamedTensor> params;  // empty for mean pooling
};

MixerParams init_mixer(Mixer kind, std::size_t d_out, std::size_t mfb_factor, std::uint64_t seed);

// Scaled cosine of two unit-norm row vectors: dot(a, b) / tau.
Tensor similarity(Tape& tape, const Tensor& h_a, const Tensor& h_b, double tau);

// In-batch InfoNCE: mean over queries of -log softmax of the positive's
// scaled similarity against all documents. positive_index[i] is the
// document index paired with query i and must be unique.
Tensor cl_loss(Tape& tape, const Tensor& query_embs, const Tensor& doc_embs,
               const std::vector<std::size_t>& positive_index, double tau,
               bool symmetric = false);

// Single-pair preference term: sum over parts of
// [sim(part, target) - sim(composed, target)], all scaled by 1/tau.
// Negative when the composed similarity already beats every part.
Tensor mcp_loss(Tape& tape, const Tensor& composed_emb, const std::vector<Tensor>& part_embs,
                const Tensor& target_emb, double tau);

// Aggregates two unimodal embedding batches (ordered [text, image]) into
// unit-norm composed prototypes of the same dimension.
Tensor mix(Tape& tape, const MixerParams& mixer, const Tensor& text_embs,
           const Tensor& image_embs);

// Contrastive anchoring of each composed embedding to its own prototype
// against the other in-batch prototypes. Fewer than 2 rows yields 0.
Tensor mcr_loss(Tape& tape, const Tensor& composed_embs, const Tensor& prototype_embs,
                double tau);

struct LossBreakdown {
  double total = 0.0;
  double cl = 0.0;
  double mcp = 0.0;
  double mcr = 0.0;
};

// L = L_CL + alpha * L_MCP + beta * L_MCR, with MCP/MCR computed only over
// the composed subset of the batch. The breakdown always carries all three
// raw term values.
Tensor total_loss(Tape& tape, const EncoderParams& params, const MixerParams& mixer,
                  const std::vector<Pair>& batch, const MCAConfig& config,
                  LossBreakdown* breakdown = nullptr);

}  // namespace mcalab
