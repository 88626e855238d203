#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/model.hpp"
#include "mcalab/rng.hpp"

using namespace mcalab;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.d_model = 16;
  c.d_out = 8;
  c.n_hidden_layers = 1;
  c.image_dim = 6;
  c.text_vocab = 5;
  return c;
}

Item random_composed(Rng& rng, const EncoderConfig& c) {
  Item it;
  std::vector<double> img(c.image_dim);
  for (double& x : img) x = rng.gaussian(0.0, 1.0);
  it.image = std::move(img);
  it.token = static_cast<std::int32_t>(rng.below(c.text_vocab));
  return it;
}

}  // namespace

TEST_CASE("permutation equivariance and unit norms") {
  EncoderConfig c = tiny_config();
  EncoderParams params = init_encoder(c, 3);
  Rng rng(11);
  Item a = random_composed(rng, c);
  Item b = random_composed(rng, c);
  b.token = std::nullopt;  // one unimodal item in the mix

  Tape t1, t2;
  Tensor ab = encode(t1, params, {a, b});
  Tensor ba = encode(t2, params, {b, a});
  std::size_t d = ab.cols();
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(ab.value()[j] == ba.value()[d + j]);
    CHECK(ab.value()[d + j] == ba.value()[j]);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += ab.value()[i * d + j] * ab.value()[i * d + j];
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);
  }
}

TEST_CASE("composed embedding differs from its image-only part") {
  EncoderConfig c = tiny_config();
  for (std::uint64_t seed : {1, 2, 3}) {
    EncoderParams params = init_encoder(c, seed);
    Rng rng(100 + seed);
    std::size_t distinct = 0;
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
      Item composed = random_composed(rng, c);
      Item image_only = unimodal_parts(composed)[0];
      Tape tape;
      Tensor out = encode(tape, params, {composed, image_only});
      double cos = 0.0;
      for (std::size_t j = 0; j < out.cols(); ++j)
        cos += out.value()[j] * out.value()[out.cols() + j];
      if (cos < 1.0 - 1e-6) ++distinct;
    }
    CHECK(distinct >= n * 99 / 100);
  }
}

TEST_CASE("unimodal_parts field projection") {
  Item composed;
  composed.image = std::vector<double>{1.0, 2.0, 3.0};
  composed.token = 3;
  std::vector<Item> parts = unimodal_parts(composed);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].image == composed.image);
  CHECK_FALSE(parts[0].token.has_value());
  CHECK(parts[1].token == 3);
  CHECK_FALSE(parts[1].image.has_value());
  for (const Item& p : parts) CHECK_FALSE(p.is_composed());

  Item image_only;
  image_only.image = std::vector<double>{1.0};
  CHECK_THROWS_AS(unimodal_parts(image_only), ContractError);
}

TEST_CASE("encode input contracts") {
  EncoderConfig c = tiny_config();
  EncoderParams params = init_encoder(c, 1);
  Tape tape;
  Item empty;
  CHECK_THROWS_AS(encode(tape, params, {empty}), ContractError);
  Item bad_token;
  bad_token.token = static_cast<std::int32_t>(c.text_vocab);
  CHECK_THROWS_AS(encode(tape, params, {bad_token}), InvalidInputError);
}

TEST_CASE("text-free batch never reaches real token rows") {
  // Gradient probe for the unified-parameter property: with no text in the
  // batch, d loss / d table-row must be identically zero for every row.
  EncoderConfig c = tiny_config();
  EncoderParams params = init_encoder(c, 5);
  Rng rng(9);
  Item a = random_composed(rng, c);
  a.token = std::nullopt;
  Item b = random_composed(rng, c);
  b.token = std::nullopt;

  Tape tape;
  Tensor out = encode(tape, params, {a, b});
  tape.backward(tape.sum_all(out));
  for (const NamedTensor& nt : params.params) {
    if (nt.name != "token_table") continue;
    bool any = false;
    for (double g : nt.t.grad())
      if (g != 0.0) any = true;
    CHECK_FALSE(any);
  }
}

TEST_CASE("checkpoint round-trip") {
  fs::path dir = testutil::tmp_dir("model_ckpt");
  EncoderConfig c = tiny_config();
  EncoderParams params = init_encoder(c, 21);
  save_checkpoint(params, 42, dir / "m.mcackpt");

  auto [loaded, step] = load_checkpoint(dir / "m.mcackpt");
  CHECK(step == 42);
  CHECK(loaded.config == c);

  Rng rng(2);
  std::vector<Item> batch = {random_composed(rng, c), random_composed(rng, c)};
  Tape t1, t2;
  Tensor orig = encode(t1, params, batch);
  Tensor back = encode(t2, loaded, batch);
  for (std::size_t i = 0; i < orig.size(); ++i)
    CHECK(std::abs(orig.value()[i] - back.value()[i]) <= 1e-6);
}

TEST_CASE("checkpoint mismatch and corruption") {
  fs::path dir = testutil::tmp_dir("model_ckpt_bad");
  EncoderParams params = init_encoder(tiny_config(), 1);
  save_checkpoint(params, 7, dir / "m.mcackpt");

  EncoderConfig other = tiny_config();
  other.d_out = 4;
  CHECK_THROWS_AS(load_checkpoint(dir / "m.mcackpt", other), IncompatibleCheckpointError);

  std::string bytes = testutil::slurp(dir / "m.mcackpt");
  bytes[bytes.size() - 2] ^= 0x3c;  // trailing CRC
  std::ofstream(dir / "bad.mcackpt", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.mcackpt"), FormatError);
}

TEST_CASE("init determinism") {
  EncoderParams a = init_encoder(tiny_config(), 77);
  EncoderParams b = init_encoder(tiny_config(), 77);
  REQUIRE(a.params.size() == b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].name == b.params[i].name);
    CHECK(a.params[i].t.value() == b.params[i].t.value());
  }
}
