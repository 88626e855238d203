#include "mcalab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mcalab/binfile.hpp"
#include "mcalab/config.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/rng.hpp"

namespace mcalab {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

std::vector<double> normalized(std::vector<double> v) {
  double n = norm(v);
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    for (double& x : v) x = rng.gaussian(0.0, 1.0);
    n = norm(v);
  } while (n < 1e-9);
  for (double& x : v) x /= n;
  return v;
}

struct World {
  std::vector<std::vector<double>> projection;   // image_dim x latent_dim
  std::vector<std::vector<double>> mod_offsets;  // vocab x latent_dim

  std::vector<double> render(const GeneratorConfig& cfg, const std::vector<double>& latent,
                             Rng& rng) const {
    std::vector<double> img(cfg.image_dim);
    for (std::size_t i = 0; i < cfg.image_dim; ++i)
      img[i] = dot(projection[i], latent) + rng.gaussian(0.0, cfg.image_noise_std);
    return img;
  }

  std::vector<double> modified_latent(const std::vector<double>& base, std::int32_t m) const {
    std::vector<double> t = base;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += mod_offsets[m][j];
    return normalized(std::move(t));
  }
};

World make_world(const GeneratorConfig& cfg, Rng& master) {
  World w;
  Rng proj_rng(master.fork());
  double scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  w.projection.resize(cfg.image_dim, std::vector<double>(cfg.latent_dim));
  for (auto& row : w.projection)
    for (double& x : row) x = proj_rng.gaussian(0.0, scale);

  Rng mod_rng(master.fork());
  w.mod_offsets.resize(cfg.vocab);
  for (std::size_t m = 0; m < cfg.vocab; ++m) {
    double delta = m < cfg.vocab / 2 ? cfg.delta_ind : cfg.delta_ood;
    w.mod_offsets[m] = unit_vector(cfg.latent_dim, mod_rng);
    for (double& x : w.mod_offsets[m]) x *= delta;
  }
  return w;
}

// Hard distractors always carry large (OOD-half) modifications of the same
// base. IND golds then sit much closer to the query image than any
// distractor, which is exactly the shortcut the experiments need; OOD golds
// are indistinguishable from the distractors without the text.
std::int32_t sample_hard_mod(const GeneratorConfig& cfg, std::int32_t gold_mod, Rng& rng) {
  std::size_t half = cfg.vocab / 2;
  std::int32_t m;
  do {
    m = static_cast<std::int32_t>(half + rng.below(cfg.vocab - half));
  } while (m == gold_mod);
  return m;
}

EvalCase make_eval_case(const GeneratorConfig& cfg, const World& w, bool ood, Rng& rng) {
  EvalCase ec;
  std::size_t half = cfg.vocab / 2;
  std::vector<double> z = unit_vector(cfg.latent_dim, rng);
  std::int32_t m = ood ? static_cast<std::int32_t>(half + rng.below(cfg.vocab - half))
                       : static_cast<std::int32_t>(rng.below(half));
  ec.query.image = w.render(cfg, z, rng);
  ec.query.token = m;
  ec.query_latent = w.modified_latent(z, m);

  std::vector<Item> pool;
  std::vector<std::vector<double>> latents;
  pool.push_back(Item{w.render(cfg, ec.query_latent, rng), std::nullopt});
  latents.push_back(ec.query_latent);
  for (std::size_t i = 0; i < cfg.n_hard_distractors; ++i) {
    std::vector<double> t = w.modified_latent(z, sample_hard_mod(cfg, m, rng));
    pool.push_back(Item{w.render(cfg, t, rng), std::nullopt});
    latents.push_back(std::move(t));
  }
  while (pool.size() < cfg.pool_size) {
    std::vector<double> u = unit_vector(cfg.latent_dim, rng);
    pool.push_back(Item{w.render(cfg, u, rng), std::nullopt});
    latents.push_back(std::move(u));
  }

  // Fisher-Yates over the pool; gold starts at slot 0 and is tracked.
  std::vector<std::size_t> pos(pool.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  for (std::size_t i = pool.size() - 1; i > 0; --i) {
    std::size_t j = rng.below(i + 1);
    std::swap(pos[i], pos[j]);
  }
  ec.pool.resize(pool.size());
  ec.pool_latents.resize(pool.size());
  std::size_t gold = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    ec.pool[pos[i]] = std::move(pool[i]);
    ec.pool_latents[pos[i]] = std::move(latents[i]);
    if (i == 0) gold = pos[i];
  }
  ec.gold_index = gold;
  return ec;
}

double pool_accuracy(const EvalCase& ec, const std::vector<double>& query_vec,
                     const std::vector<std::vector<double>>& candidates) {
  if (candidates.empty()) throw InvalidInputError("empty candidate pool");
  std::size_t best = 0;
  double best_cos = cosine(query_vec, candidates[0]);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    double c = cosine(query_vec, candidates[i]);
    if (c > best_cos) {
      best_cos = c;
      best = i;
    }
  }
  return best == ec.gold_index ? 1.0 : 0.0;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (vocab < 2) throw InvalidConfigError("modification vocabulary must have at least 2 entries");
  if (latent_dim < 1 || image_dim < 1) throw InvalidConfigError("dimensions must be >= 1");
  if (!(delta_ind < delta_ood)) throw InvalidConfigError("delta_ind must be < delta_ood");
  if (delta_ind < 0.0) throw InvalidConfigError("delta_ind must be >= 0");
  if (image_noise_std < 0.0) throw InvalidConfigError("image_noise_std must be >= 0");
  if (uni_fraction < 0.0 || uni_fraction > 1.0)
    throw InvalidConfigError("uni_fraction must be in [0, 1]");
  if (n_train < 1 || n_ind_test < 1 || n_ood_test < 1)
    throw InvalidConfigError("example counts must be >= 1");
  if (n_hard_distractors < 2)
    throw InvalidConfigError("every pool needs at least 2 hard distractors");
  if (pool_size < n_hard_distractors + 1)
    throw InvalidConfigError("pool_size must fit gold plus hard distractors");
}

DatasetBundle generate(const GeneratorConfig& config) {
  config.validate();
  Rng master(config.seed);
  World world = make_world(config, master);

  DatasetBundle bundle;
  bundle.config = config;

  // Train pair type layout: composed, image->image near-duplicates, and
  // text->image pairs. Text pairs span the full vocabulary so every
  // modification token has a training signal; composed pairs stay IND-only.
  std::size_t n_uni = static_cast<std::size_t>(
      std::llround(config.uni_fraction * static_cast<double>(config.n_train)));
  std::size_t n_text = n_uni / 2;
  std::size_t n_imgimg = n_uni - n_text;
  enum class PairKind { Composed, ImageImage, TextImage };
  std::vector<PairKind> kinds;
  kinds.reserve(config.n_train);
  for (std::size_t i = 0; i < config.n_train - n_uni; ++i) kinds.push_back(PairKind::Composed);
  for (std::size_t i = 0; i < n_imgimg; ++i) kinds.push_back(PairKind::ImageImage);
  for (std::size_t i = 0; i < n_text; ++i) kinds.push_back(PairKind::TextImage);

  Rng train_rng(master.fork());
  for (std::size_t i = kinds.size() - 1; i > 0; --i) {
    std::size_t j = train_rng.below(i + 1);
    std::swap(kinds[i], kinds[j]);
  }

  std::size_t half = config.vocab / 2;
  for (PairKind kind : kinds) {
    Pair p;
    switch (kind) {
      case PairKind::Composed: {
        std::vector<double> z = unit_vector(config.latent_dim, train_rng);
        auto m = static_cast<std::int32_t>(train_rng.below(half));
        p.query = Item{world.render(config, z, train_rng), m};
        p.target_latent = world.modified_latent(z, m);
        p.positive_doc = Item{world.render(config, p.target_latent, train_rng), std::nullopt};
        p.latent_base = std::move(z);
        p.modification_id = m;
        break;
      }
      case PairKind::ImageImage: {
        std::vector<double> z = unit_vector(config.latent_dim, train_rng);
        p.query = Item{world.render(config, z, train_rng), std::nullopt};
        p.positive_doc = Item{world.render(config, z, train_rng), std::nullopt};
        p.target_latent = z;
        p.latent_base = std::move(z);
        p.modification_id = -1;
        break;
      }
      case PairKind::TextImage: {
        auto m = static_cast<std::int32_t>(train_rng.below(config.vocab));
        std::vector<double> u = normalized(world.mod_offsets[m]);
        p.query = Item{std::nullopt, m};
        p.positive_doc = Item{world.render(config, u, train_rng), std::nullopt};
        p.target_latent = u;
        p.latent_base = std::move(u);
        p.modification_id = m;
        break;
      }
    }
    bundle.train.push_back(std::move(p));
  }

  Rng ind_rng(master.fork());
  for (std::size_t i = 0; i < config.n_ind_test; ++i)
    bundle.ind_test.push_back(make_eval_case(config, world, false, ind_rng));
  Rng ood_rng(master.fork());
  for (std::size_t i = 0; i < config.n_ood_test; ++i)
    bundle.ood_test.push_back(make_eval_case(config, world, true, ood_rng));

  return bundle;
}

SplitAccuracy oracle_image_only(const DatasetBundle& bundle) {
  if (bundle.ind_test.empty() && bundle.ood_test.empty())
    throw InvalidInputError("oracle_image_only: bundle has no eval cases");
  auto split_acc = [](const std::vector<EvalCase>& split) {
    double acc = 0.0;
    for (const EvalCase& ec : split) {
      std::vector<std::vector<double>> imgs;
      imgs.reserve(ec.pool.size());
      for (const Item& it : ec.pool) imgs.push_back(*it.image);
      acc += pool_accuracy(ec, *ec.query.image, imgs);
    }
    return split.empty() ? 0.0 : acc / static_cast<double>(split.size());
  };
  return {split_acc(bundle.ind_test), split_acc(bundle.ood_test)};
}

SplitAccuracy oracle_latent(const DatasetBundle& bundle) {
  auto split_acc = [](const std::vector<EvalCase>& split) {
    double acc = 0.0;
    for (const EvalCase& ec : split) acc += pool_accuracy(ec, ec.query_latent, ec.pool_latents);
    return split.empty() ? 0.0 : acc / static_cast<double>(split.size());
  };
  return {split_acc(bundle.ind_test), split_acc(bundle.ood_test)};
}

namespace {

std::vector<double> to_f64(const float* p, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(p[i]);
  return out;
}

void append_item_arrays(std::vector<NamedArray>& arrays, const std::string& prefix,
                        const std::vector<const Item*>& items, std::size_t image_dim) {
  std::size_t n = items.size();
  std::vector<float> img(n * image_dim, 0.0f);
  std::vector<std::int32_t> has_img(n, 0), tok(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (items[i]->image) {
      has_img[i] = 1;
      for (std::size_t j = 0; j < image_dim; ++j)
        img[i * image_dim + j] = static_cast<float>((*items[i]->image)[j]);
    }
    if (items[i]->token) tok[i] = *items[i]->token;
  }
  arrays.push_back(NamedArray::floats(prefix + "_image", {n, image_dim}, std::move(img)));
  arrays.push_back(NamedArray::ints(prefix + "_has_image", {n}, std::move(has_img)));
  arrays.push_back(NamedArray::ints(prefix + "_token", {n}, std::move(tok)));
}

Item read_item(const BinFile& f, const std::string& prefix, std::size_t i,
               std::size_t image_dim) {
  Item it;
  if (f.array(prefix + "_has_image").i32[i] != 0)
    it.image = to_f64(f.array(prefix + "_image").f32.data() + i * image_dim, image_dim);
  std::int32_t tok = f.array(prefix + "_token").i32[i];
  if (tok >= 0) it.token = tok;
  return it;
}

void append_eval_arrays(std::vector<NamedArray>& arrays, const std::string& prefix,
                        const std::vector<EvalCase>& split, const GeneratorConfig& cfg) {
  std::size_t n = split.size(), p = cfg.pool_size, d = cfg.image_dim, l = cfg.latent_dim;
  std::vector<float> qimg(n * d), qlat(n * l), pimg(n * p * d), plat(n * p * l);
  std::vector<std::int32_t> qtok(n), gold(n);
  for (std::size_t i = 0; i < n; ++i) {
    const EvalCase& ec = split[i];
    for (std::size_t j = 0; j < d; ++j) qimg[i * d + j] = static_cast<float>((*ec.query.image)[j]);
    for (std::size_t j = 0; j < l; ++j) qlat[i * l + j] = static_cast<float>(ec.query_latent[j]);
    qtok[i] = *ec.query.token;
    gold[i] = static_cast<std::int32_t>(ec.gold_index);
    for (std::size_t k = 0; k < p; ++k) {
      for (std::size_t j = 0; j < d; ++j)
        pimg[(i * p + k) * d + j] = static_cast<float>((*ec.pool[k].image)[j]);
      for (std::size_t j = 0; j < l; ++j)
        plat[(i * p + k) * l + j] = static_cast<float>(ec.pool_latents[k][j]);
    }
  }
  arrays.push_back(NamedArray::floats(prefix + "_query_image", {n, d}, std::move(qimg)));
  arrays.push_back(NamedArray::ints(prefix + "_query_token", {n}, std::move(qtok)));
  arrays.push_back(NamedArray::floats(prefix + "_query_latent", {n, l}, std::move(qlat)));
  arrays.push_back(NamedArray::floats(prefix + "_pool_image", {n, p, d}, std::move(pimg)));
  arrays.push_back(NamedArray::floats(prefix + "_pool_latent", {n, p, l}, std::move(plat)));
  arrays.push_back(NamedArray::ints(prefix + "_gold_index", {n}, std::move(gold)));
}

std::vector<EvalCase> read_eval_split(const BinFile& f, const std::string& prefix,
                                      const GeneratorConfig& cfg) {
  std::size_t p = cfg.pool_size, d = cfg.image_dim, l = cfg.latent_dim;
  std::size_t n = f.array(prefix + "_gold_index").i32.size();
  std::vector<EvalCase> split(n);
  for (std::size_t i = 0; i < n; ++i) {
    EvalCase& ec = split[i];
    ec.query.image = to_f64(f.array(prefix + "_query_image").f32.data() + i * d, d);
    ec.query.token = f.array(prefix + "_query_token").i32[i];
    ec.query_latent = to_f64(f.array(prefix + "_query_latent").f32.data() + i * l, l);
    ec.gold_index = static_cast<std::size_t>(f.array(prefix + "_gold_index").i32[i]);
    ec.pool.resize(p);
    ec.pool_latents.resize(p);
    for (std::size_t k = 0; k < p; ++k) {
      ec.pool[k].image = to_f64(f.array(prefix + "_pool_image").f32.data() + (i * p + k) * d, d);
      ec.pool_latents[k] =
          to_f64(f.array(prefix + "_pool_latent").f32.data() + (i * p + k) * l, l);
    }
  }
  return split;
}

}  // namespace

void serialize(const DatasetBundle& bundle, const std::filesystem::path& path) {
  const GeneratorConfig& cfg = bundle.config;
  std::vector<NamedArray> arrays;

  std::size_t n = bundle.train.size(), l = cfg.latent_dim;
  std::vector<const Item*> queries, docs;
  for (const Pair& p : bundle.train) {
    queries.push_back(&p.query);
    docs.push_back(&p.positive_doc);
  }
  append_item_arrays(arrays, "train_query", queries, cfg.image_dim);
  append_item_arrays(arrays, "train_doc", docs, cfg.image_dim);
  std::vector<float> base(n * l), target(n * l);
  std::vector<std::int32_t> mods(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      base[i * l + j] = static_cast<float>(bundle.train[i].latent_base[j]);
      target[i * l + j] = static_cast<float>(bundle.train[i].target_latent[j]);
    }
    mods[i] = bundle.train[i].modification_id;
  }
  arrays.push_back(NamedArray::floats("train_latent_base", {n, l}, std::move(base)));
  arrays.push_back(NamedArray::floats("train_target_latent", {n, l}, std::move(target)));
  arrays.push_back(NamedArray::ints("train_modification_id", {n}, std::move(mods)));

  append_eval_arrays(arrays, "ind_test", bundle.ind_test, cfg);
  append_eval_arrays(arrays, "ood_test", bundle.ood_test, cfg);

  write_binfile(path, kDatasetMagic, generator_config_to_json(cfg), arrays);
}

DatasetBundle deserialize(const std::filesystem::path& path) {
  BinFile f = read_binfile(path, kDatasetMagic);
  DatasetBundle bundle;
  bundle.config = generator_config_from_json(f.meta);
  const GeneratorConfig& cfg = bundle.config;

  std::size_t n = f.array("train_modification_id").i32.size(), l = cfg.latent_dim;
  bundle.train.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Pair& p = bundle.train[i];
    p.query = read_item(f, "train_query", i, cfg.image_dim);
    p.positive_doc = read_item(f, "train_doc", i, cfg.image_dim);
    p.latent_base = to_f64(f.array("train_latent_base").f32.data() + i * l, l);
    p.target_latent = to_f64(f.array("train_target_latent").f32.data() + i * l, l);
    p.modification_id = f.array("train_modification_id").i32[i];
  }
  bundle.ind_test = read_eval_split(f, "ind_test", cfg);
  bundle.ood_test = read_eval_split(f, "ood_test", cfg);
  return bundle;
}

}  // namespace mcalab
