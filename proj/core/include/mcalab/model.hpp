#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mcalab/datagen.hpp"
#include "mcalab/gradcheck.hpp"
#include "mcalab/tensor.hpp"

namespace mcalab {

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t d_out = 64;
  std::size_t n_hidden_layers = 2;
  std::size_t image_dim = 32;
  std::size_t text_vocab = 16;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// One parameter set serves composed, image-only and text-only inputs.
// Absent modalities are filled by learned "absent" vectors, so unimodal
// embeddings are full non-degenerate points of the shared space.
struct EncoderParams {
  EncoderConfig config;
  std::vector<NamedTensor> params;  // manifest order is fixed

  Tensor& by_name(const std::string& name);
  const Tensor& by_name(const std::string& name) const;
};

// Initialization: gaussian(0, 1/sqrt(fan_in)) for weights, zeros for biases,
// gaussian(0, 0.02) for the token table and absent vectors.
EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Maps a batch of items to unit-norm rows of shape (batch, d_out). Row i
// depends only on item i, so results are independent of batch composition.
Tensor encode(Tape& tape, const EncoderParams& params, const std::vector<Item>& items);

// Splits a composed item into {image-only part, text-only part}.
std::vector<Item> unimodal_parts(const Item& item);

inline constexpr const char* kCheckpointMagic = "MCACKPT1";

void save_checkpoint(const EncoderParams& params, std::size_t step,
                     const std::filesystem::path& path);
std::pair<EncoderParams, std::size_t> load_checkpoint(const std::filesystem::path& path);
std::pair<EncoderParams, std::size_t> load_checkpoint(const std::filesystem::path& path,
                                                      const EncoderConfig& expected);

}  // namespace mcalab
