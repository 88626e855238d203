#include "mcalab/config.hpp"

#include <initializer_list>

#include "mcalab/errors.hpp"

namespace mcalab {

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> valid,
                         const char* context) {
  if (!j.is_object()) throw InvalidConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* v : valid)
      if (key == v) {
        known = true;
        break;
      }
    if (!known) {
      std::string keys;
      for (const char* v : valid) {
        if (!keys.empty()) keys += ", ";
        keys += v;
      }
      throw InvalidConfigError(std::string(context) + ": unknown key '" + key +
                               "' (valid keys: " + keys + ")");
    }
  }
}

template <typename T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfigError(std::string("key '") + key + "': " + e.what());
    }
  }
}

}  // namespace

nlohmann::json generator_config_to_json(const GeneratorConfig& c) {
  nlohmann::ordered_json j;
  j["latent_dim"] = c.latent_dim;
  j["image_dim"] = c.image_dim;
  j["vocab"] = c.vocab;
  j["delta_ind"] = c.delta_ind;
  j["delta_ood"] = c.delta_ood;
  j["image_noise_std"] = c.image_noise_std;
  j["n_train"] = c.n_train;
  j["n_ind_test"] = c.n_ind_test;
  j["n_ood_test"] = c.n_ood_test;
  j["pool_size"] = c.pool_size;
  j["n_hard_distractors"] = c.n_hard_distractors;
  j["uni_fraction"] = c.uni_fraction;
  j["seed"] = c.seed;
  return j;
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"latent_dim", "image_dim", "vocab", "delta_ind", "delta_ood",
                       "image_noise_std", "n_train", "n_ind_test", "n_ood_test", "pool_size",
                       "n_hard_distractors", "uni_fraction", "seed"},
                      "generator config");
  GeneratorConfig c;
  get_if_present(j, "latent_dim", c.latent_dim);
  get_if_present(j, "image_dim", c.image_dim);
  get_if_present(j, "vocab", c.vocab);
  get_if_present(j, "delta_ind", c.delta_ind);
  get_if_present(j, "delta_ood", c.delta_ood);
  get_if_present(j, "image_noise_std", c.image_noise_std);
  get_if_present(j, "n_train", c.n_train);
  get_if_present(j, "n_ind_test", c.n_ind_test);
  get_if_present(j, "n_ood_test", c.n_ood_test);
  get_if_present(j, "pool_size", c.pool_size);
  get_if_present(j, "n_hard_distractors", c.n_hard_distractors);
  get_if_present(j, "uni_fraction", c.uni_fraction);
  get_if_present(j, "seed", c.seed);
  return c;
}

nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["d_model"] = c.d_model;
  j["d_out"] = c.d_out;
  j["n_hidden_layers"] = c.n_hidden_layers;
  j["image_dim"] = c.image_dim;
  j["text_vocab"] = c.text_vocab;
  return j;
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"d_model", "d_out", "n_hidden_layers", "image_dim", "text_vocab"},
                      "encoder config");
  EncoderConfig c;
  get_if_present(j, "d_model", c.d_model);
  get_if_present(j, "d_out", c.d_out);
  get_if_present(j, "n_hidden_layers", c.n_hidden_layers);
  get_if_present(j, "image_dim", c.image_dim);
  get_if_present(j, "text_vocab", c.text_vocab);
  return c;
}

nlohmann::json mca_config_to_json(const MCAConfig& c) {
  nlohmann::ordered_json j;
  j["tau"] = c.tau;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["mixer"] = mixer_to_string(c.mixer);
  j["mfb_factor"] = c.mfb_factor;
  j["mcp_bidirectional"] = c.mcp_bidirectional;
  j["prototype_stop_gradient"] = c.prototype_stop_gradient;
  j["cl_symmetric"] = c.cl_symmetric;
  j["mcp_margin_clamp"] = c.mcp_margin_clamp;
  j["mcp_margin"] = c.mcp_margin;
  return j;
}

MCAConfig mca_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"tau", "alpha", "beta", "mixer", "mfb_factor", "mcp_bidirectional",
                       "prototype_stop_gradient", "cl_symmetric", "mcp_margin_clamp",
                       "mcp_margin"},
                      "mca config");
  MCAConfig c;
  get_if_present(j, "tau", c.tau);
  get_if_present(j, "alpha", c.alpha);
  get_if_present(j, "beta", c.beta);
  if (j.contains("mixer")) c.mixer = mixer_from_string(j.at("mixer").get<std::string>());
  get_if_present(j, "mfb_factor", c.mfb_factor);
  get_if_present(j, "mcp_bidirectional", c.mcp_bidirectional);
  get_if_present(j, "prototype_stop_gradient", c.prototype_stop_gradient);
  get_if_present(j, "cl_symmetric", c.cl_symmetric);
  get_if_present(j, "mcp_margin_clamp", c.mcp_margin_clamp);
  get_if_present(j, "mcp_margin", c.mcp_margin);
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["steps"] = c.steps;
  j["warmup_steps"] = c.warmup_steps;
  j["peak_learning_rate"] = c.peak_learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["mca"] = mca_config_to_json(c.mca);
  j["encoder"] = encoder_config_to_json(c.encoder);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"steps", "warmup_steps", "peak_learning_rate", "weight_decay", "beta1",
                       "beta2", "adam_eps", "batch_size", "seed", "eval_every", "mca", "encoder"},
                      "train config");
  TrainConfig c;
  get_if_present(j, "steps", c.steps);
  get_if_present(j, "warmup_steps", c.warmup_steps);
  get_if_present(j, "peak_learning_rate", c.peak_learning_rate);
  get_if_present(j, "weight_decay", c.weight_decay);
  get_if_present(j, "beta1", c.beta1);
  get_if_present(j, "beta2", c.beta2);
  get_if_present(j, "adam_eps", c.adam_eps);
  get_if_present(j, "batch_size", c.batch_size);
  get_if_present(j, "seed", c.seed);
  get_if_present(j, "eval_every", c.eval_every);
  if (j.contains("mca")) c.mca = mca_config_from_json(j.at("mca"));
  if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& key_value) {
  std::size_t eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidConfigError("override must look like key.path=value, got '" + key_value + "'");
  std::string path = key_value.substr(0, eq);
  std::string raw = key_value.substr(eq + 1);

  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare strings stay strings

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw InvalidConfigError("empty key segment in override '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace mcalab
