#include "mcalab/model.hpp"

#include <cmath>

#include "mcalab/binfile.hpp"
#include "mcalab/config.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/rng.hpp"

namespace mcalab {

void EncoderConfig::validate() const {
  if (d_model < 1 || d_out < 1 || image_dim < 1 || text_vocab < 1)
    throw InvalidConfigError("encoder dimensions must be >= 1");
  if (n_hidden_layers < 1) throw InvalidConfigError("n_hidden_layers must be >= 1");
}

Tensor& EncoderParams::by_name(const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return p.t;
  throw ContractError("unknown parameter '" + name + "'");
}

const Tensor& EncoderParams::by_name(const std::string& name) const {
  return const_cast<EncoderParams*>(this)->by_name(name);
}

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams ep;
  ep.config = config;
  Rng master(seed);

  auto weight = [&](const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
    ep.params.push_back({name, Tensor::gaussian({fan_in, fan_out}, 0.0, std, master.fork(), true)});
  };
  auto bias = [&](const std::string& name, std::size_t n) {
    master.fork();  // keep the seed stream aligned with one draw per tensor
    ep.params.push_back({name, Tensor::zeros({1, n}, true)});
  };
  auto small = [&](const std::string& name, std::size_t r, std::size_t c) {
    ep.params.push_back({name, Tensor::gaussian({r, c}, 0.0, 0.02, master.fork(), true)});
  };

  weight("image_proj_w", config.image_dim, config.d_model);
  bias("image_proj_b", config.d_model);
  small("token_table", config.text_vocab, config.d_model);
  small("absent_image", 1, config.d_model);
  small("absent_text", 1, config.d_model);
  for (std::size_t i = 0; i < config.n_hidden_layers; ++i) {
    std::size_t fan_in = i == 0 ? 2 * config.d_model : config.d_model;
    weight("trunk" + std::to_string(i) + "_w", fan_in, config.d_model);
    bias("trunk" + std::to_string(i) + "_b", config.d_model);
  }
  weight("output_w", config.d_model, config.d_out);
  return ep;
}

Tensor encode(Tape& tape, const EncoderParams& params, const std::vector<Item>& items) {
  const EncoderConfig& cfg = params.config;
  std::size_t n = items.size();
  if (n == 0) throw ContractError("encode: empty batch");

  std::vector<double> img(n * cfg.image_dim, 0.0);
  std::vector<double> img_mask(n * cfg.d_model, 0.0), txt_mask(n * cfg.d_model, 0.0);
  std::vector<std::size_t> tokens(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Item& it = items[i];
    if (!it.image && !it.token) throw ContractError("encode: item " + std::to_string(i) +
                                                    " has no modality");
    if (it.image) {
      if (it.image->size() != cfg.image_dim)
        throw InvalidInputError("encode: image dimension mismatch");
      std::copy(it.image->begin(), it.image->end(), img.begin() + i * cfg.image_dim);
      std::fill_n(img_mask.begin() + i * cfg.d_model, cfg.d_model, 1.0);
    }
    if (it.token) {
      if (*it.token < 0 || static_cast<std::size_t>(*it.token) >= cfg.text_vocab)
        throw InvalidInputError("encode: token " + std::to_string(*it.token) +
                                " outside vocabulary of size " + std::to_string(cfg.text_vocab));
      tokens[i] = static_cast<std::size_t>(*it.token);
      std::fill_n(txt_mask.begin() + i * cfg.d_model, cfg.d_model, 1.0);
    }
  }

  Tensor x_img = Tensor::from({n, cfg.image_dim}, std::move(img));
  Tensor m_img = Tensor::from({n, cfg.d_model}, std::move(img_mask));
  Tensor m_txt = Tensor::from({n, cfg.d_model}, std::move(txt_mask));
  std::vector<double> inv_img(m_img.value()), inv_txt(m_txt.value());
  for (double& v : inv_img) v = 1.0 - v;
  for (double& v : inv_txt) v = 1.0 - v;
  Tensor ones = Tensor::constant({n, 1}, 1.0);

  // slot = present-path * mask + broadcast(absent vector) * (1 - mask);
  // masks are constants, so gradients flow only to the live path per row.
  Tensor img_lin = tape.add_rowvec(tape.matmul(x_img, params.by_name("image_proj_w")),
                                   params.by_name("image_proj_b"));
  Tensor img_absent = tape.matmul(ones, params.by_name("absent_image"));
  Tensor img_slot =
      tape.add(tape.mul_elementwise(img_lin, m_img),
               tape.mul_elementwise(img_absent, Tensor::from({n, cfg.d_model}, std::move(inv_img))));

  Tensor txt_rows = tape.gather_rows(params.by_name("token_table"), tokens);
  Tensor txt_absent = tape.matmul(ones, params.by_name("absent_text"));
  Tensor txt_slot =
      tape.add(tape.mul_elementwise(txt_rows, m_txt),
               tape.mul_elementwise(txt_absent, Tensor::from({n, cfg.d_model}, std::move(inv_txt))));

  Tensor h = tape.concat_cols(img_slot, txt_slot);
  for (std::size_t i = 0; i < cfg.n_hidden_layers; ++i) {
    h = tape.gelu(tape.add_rowvec(tape.matmul(h, params.by_name("trunk" + std::to_string(i) + "_w")),
                                  params.by_name("trunk" + std::to_string(i) + "_b")));
  }
  return tape.l2_normalize_rows(tape.matmul(h, params.by_name("output_w")));
}

std::vector<Item> unimodal_parts(const Item& item) {
  if (!item.is_composed()) throw ContractError("unimodal_parts: item is not composed");
  return {Item{item.image, std::nullopt}, Item{std::nullopt, item.token}};
}

void save_checkpoint(const EncoderParams& params, std::size_t step,
                     const std::filesystem::path& path) {
  std::vector<NamedArray> arrays;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : params.params) {
    std::vector<float> data(p.t.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(p.t.value()[i]);
    arrays.push_back(NamedArray::floats(p.name, p.t.shape(), std::move(data)));
    manifest.push_back(p.name);
  }
  nlohmann::json meta;
  meta["config"] = encoder_config_to_json(params.config);
  meta["step"] = step;
  meta["manifest"] = manifest;
  write_binfile(path, kCheckpointMagic, meta, arrays);
}

std::pair<EncoderParams, std::size_t> load_checkpoint(const std::filesystem::path& path) {
  BinFile f = read_binfile(path, kCheckpointMagic);
  EncoderConfig cfg = encoder_config_from_json(f.meta.at("config"));
  std::size_t step = f.meta.at("step").get<std::size_t>();

  EncoderParams ep = init_encoder(cfg, 0);  // gives the expected manifest and shapes
  auto manifest = f.meta.at("manifest").get<std::vector<std::string>>();
  if (manifest.size() != ep.params.size())
    throw IncompatibleCheckpointError("checkpoint manifest has " +
                                      std::to_string(manifest.size()) + " parameters, expected " +
                                      std::to_string(ep.params.size()));
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (manifest[i] != ep.params[i].name)
      throw IncompatibleCheckpointError("manifest entry '" + manifest[i] + "' does not match '" +
                                        ep.params[i].name + "'");
    const NamedArray& a = f.array(manifest[i]);
    if (a.shape != ep.params[i].t.shape())
      throw IncompatibleCheckpointError("parameter '" + manifest[i] + "' has mismatched shape");
    for (std::size_t j = 0; j < a.f32.size(); ++j)
      ep.params[i].t.value()[j] = static_cast<double>(a.f32[j]);
  }
  return {std::move(ep), step};
}

std::pair<EncoderParams, std::size_t> load_checkpoint(const std::filesystem::path& path,
                                                      const EncoderConfig& expected) {
  auto loaded = load_checkpoint(path);
  if (!(loaded.first.config == expected))
    throw IncompatibleCheckpointError("checkpoint encoder config does not match current config");
  return loaded;
}

}  // namespace mcalab
