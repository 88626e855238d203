#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace mcalab {

// Synthetic composed-retrieval generator. Each example lives on a latent
// unit sphere: a base vector z renders to an image view through a fixed
// projection, and a discrete modification token maps to a latent offset.
// IND tokens carry small offsets (the image alone nearly identifies the
// target), OOD tokens carry large offsets (the text is indispensable).
struct GeneratorConfig {
  std::size_t latent_dim = 16;
  std::size_t image_dim = 32;
  std::size_t vocab = 16;  // first half IND, second half OOD
  double delta_ind = 0.15;
  double delta_ood = 1.2;
  double image_noise_std = 0.03;  // the "resolution" analog
  std::size_t n_train = 8192;
  std::size_t n_ind_test = 1024;
  std::size_t n_ood_test = 1024;
  std::size_t pool_size = 64;
  std::size_t n_hard_distractors = 8;
  double uni_fraction = 0.25;  // unimodal share of train pairs
  std::uint64_t seed = 1;

  void validate() const;
};

struct Item {
  std::optional<std::vector<double>> image;
  std::optional<std::int32_t> token;

  bool is_composed() const { return image.has_value() && token.has_value(); }
};

// Latent fields are for oracle validation only and never feed the encoder.
struct Pair {
  Item query;
  Item positive_doc;
  std::vector<double> latent_base;
  std::vector<double> target_latent;
  std::int32_t modification_id = -1;  // -1 for image->image near-duplicate pairs
};

struct EvalCase {
  Item query;
  std::vector<double> query_latent;  // true composed latent of the gold target
  std::vector<Item> pool;            // image-only candidates
  std::vector<std::vector<double>> pool_latents;
  std::size_t gold_index = 0;
};

struct DatasetBundle {
  GeneratorConfig config;
  std::vector<Pair> train;
  std::vector<EvalCase> ind_test;
  std::vector<EvalCase> ood_test;
};

DatasetBundle generate(const GeneratorConfig& config);

struct SplitAccuracy {
  double ind = 0.0;
  double ood = 0.0;
};

// Ranks each pool by cosine between raw query image and raw candidate
// images; accuracy@1 with lowest-index tie-break.
SplitAccuracy oracle_image_only(const DatasetBundle& bundle);

// Upper bound: ranks by cosine between true composed latent and candidate
// latents; accuracy 1.0 on both splits by construction.
SplitAccuracy oracle_latent(const DatasetBundle& bundle);

inline constexpr const char* kDatasetMagic = "MCALAB01";

void serialize(const DatasetBundle& bundle, const std::filesystem::path& path);
DatasetBundle deserialize(const std::filesystem::path& path);

}  // namespace mcalab
