#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcalab/datagen.hpp"
#include "mcalab/model.hpp"

namespace mcalab {

struct RetrievalReport {
  std::string split;
  double accuracy_at_1 = 0.0;
  double accuracy_at_5 = 0.0;
  std::size_t n_queries = 0;
  double shortcut_index = 0.0;
  double composition_margin_rate = 0.0;
};

// Accuracy@{1,5} over the split's candidate pools; cosine ranking with
// lowest-index tie-break. Does not fill the diagnostic fields.
RetrievalReport evaluate(const EncoderParams& params, const std::vector<EvalCase>& split,
                         const std::string& split_name);

// Mean cosine between encode(img, t) and encode(img, t') over composed
// queries, with t' != t resampled uniformly from the vocabulary. Values
// near 1 mean the text modality is ignored.
double shortcut_index(const EncoderParams& params, const std::vector<EvalCase>& split,
                      std::size_t n_resample, std::uint64_t seed);

// Fraction of composed queries whose composed-vs-gold similarity beats the
// best unimodal-part-vs-gold similarity.
double composition_margin_rate(const EncoderParams& params, const std::vector<EvalCase>& split);

// evaluate + both diagnostics in one report.
RetrievalReport full_report(const EncoderParams& params, const std::vector<EvalCase>& split,
                            const std::string& split_name, std::size_t n_resample = 8,
                            std::uint64_t seed = 0);

// Embedding dump in the dataset binary format with a group-label array:
// 0 = composed query, 1 = text-only part, 2 = image-only part, 3 = gold target.
void export_embeddings(const EncoderParams& params, const std::vector<EvalCase>& split,
                       const std::filesystem::path& path);

// Deterministic 2-D PCA via eigen-decomposition of the centered covariance;
// each component's largest-magnitude loading is made positive.
std::vector<std::array<double, 2>> pca_project(const std::vector<std::vector<double>>& embeddings);

}  // namespace mcalab
