#include <doctest.h>

#include "../oracles.hpp"
#include "../test_util.hpp"
#include "tge/error.hpp"
#include "tge/checkpoint.hpp"
#include "tge/model.hpp"
#include "tge/primitives.hpp"
#include "tge/training.hpp"

using namespace tge;

namespace {

ColoredPointCloud sample_of(PrimitiveKind kind, std::size_t n, std::uint64_t seed) {
  const auto mesh = make_primitive(kind, 12, seed);
  return sample_points(normalize(mesh).first, n, seed);
}

std::vector<double> values_of(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

ad::Tensor latent_of(const ColoredPointCloud& c, bool variable) {
  std::vector<double> v;
  for (const auto& col : c.colors) v.insert(v.end(), {col.x, col.y, col.z});
  return variable ? ad::Tensor::variable({c.size(), 3}, v) : ad::Tensor::constant({c.size(), 3}, v);
}

}  // namespace

TEST_CASE("config invariants") {
  auto cfg = TgeConfig::default_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.level1.latent_width == 3);
  CHECK(cfg.level2.latent_width == 256);
  CHECK(cfg.level1.d_out() == 256);
  CHECK(cfg.level2.d_out() == 512);
  CHECK(cfg.final_dim() == 1024);
  CHECK(cfg.head_dims == std::vector<std::size_t>{1024, 512, 256});

  auto bad = cfg;
  bad.head_dims = {512, 256};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.level1.latent_width = 6;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.level2.d_emb = 250;  // not divisible by 4 heads
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.level1.out_mlp_dims = {{64}, {96}, {64}};  // level1 output must feed level2's 256-wide latent input
  CHECK_THROWS(bad.validate());

  const auto j = cfg.to_json();
  CHECK(TgeConfig::from_json(j).to_json() == j);
  CHECK(architecture_fingerprint(cfg) == architecture_fingerprint(TgeConfig::from_json(j)));
  auto seeded = cfg;
  seeded.seed = 77;
  CHECK(architecture_fingerprint(seeded) == architecture_fingerprint(cfg));
  auto other = cfg;
  other.comparison_mode = ComparisonMode::kDiff;
  CHECK(architecture_fingerprint(other) != architecture_fingerprint(cfg));
}

TEST_CASE("shape contract across point counts") {
  for (std::size_t n : {256u, 512u, 1024u}) {
    auto cfg = TgeConfig::toy_config(n);
    cfg.level1.centroids = n / 2;
    cfg.level2.centroids = n / 4;
    const auto params = init_params(cfg, 1);
    const auto cloud = sample_of(PrimitiveKind::kTorus, n, 2);
    ad::NoGradGuard guard;
    const auto l1 = lgsa_forward(cloud.points, latent_of(cloud, false), params, 1);
    CHECK(l1.centroids.size() == cfg.level1.centroids);
    CHECK(l1.features.shape() == ad::Shape{cfg.level1.centroids, cfg.level1.d_out()});
    const auto l2 = lgsa_forward(l1.centroids, l1.features, params, 2);
    CHECK(l2.features.shape() == ad::Shape{cfg.level2.centroids, cfg.level2.d_out()});
    CHECK(encode(cloud, params).shape() == ad::Shape{1, cfg.final_dim()});
  }
}

TEST_CASE("lgsa_forward rejects bad inputs") {
  const auto params = init_params(TgeConfig::toy_config(64), 1);
  const auto cloud = sample_of(PrimitiveKind::kSphere, 8, 1);
  CHECK_THROWS_AS(lgsa_forward(cloud.points, latent_of(cloud, false), params, 1), ShapeError);
  const auto big = sample_of(PrimitiveKind::kSphere, 64, 1);
  CHECK_THROWS_AS(lgsa_forward(big.points, ad::Tensor::zeros({64, 4}), params, 1), ShapeError);
  CHECK_THROWS(lgsa_forward(big.points, latent_of(big, false), params, 3));
}

TEST_CASE("init is deterministic, bounded, and seed dependent") {
  const auto cfg = TgeConfig::toy_config(64);
  const auto a = init_params(cfg, 5);
  const auto b = init_params(cfg, 5);
  const auto c = init_params(cfg, 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.set.size(); ++i) {
    CHECK(values_of(a.set.tensor(i)) == values_of(b.set.tensor(i)));
    differs = differs || values_of(a.set.tensor(i)) != values_of(c.set.tensor(i));
    const auto& p = a.set[i];
    const bool is_bias = p.name.ends_with(".b");
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
    for (double v : p.value.values()) {
      CHECK(std::isfinite(v));
      if (is_bias) CHECK(v == 0.0);
      else CHECK(std::fabs(v) <= bound);
    }
  }
  CHECK(differs);
}

TEST_CASE("encode: weight sharing, permutation invariance, rotation sensitivity") {
  const auto params = init_params(TgeConfig::toy_config(128), 3);
  const auto cloud = sample_of(PrimitiveKind::kBumpySphere, 128, 4);
  ad::NoGradGuard guard;
  const auto f = encode(cloud, params);
  CHECK(values_of(encode(cloud, params)) == values_of(f));

  auto permuted = cloud;
  Rng rng(8);
  for (std::size_t i = permuted.size() - 1; i > 0; --i) {
    const auto j = rng.below(i + 1);
    std::swap(permuted.points[i], permuted.points[j]);
    std::swap(permuted.colors[i], permuted.colors[j]);
  }
  const auto fp = encode(permuted, params);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(std::fabs(fp.values()[i] - f.values()[i]) < 1e-9);

  auto rotated = cloud;
  for (auto& p : rotated.points) p = {p.y, -p.x, p.z};
  const auto fr = encode(rotated, params);
  double diff = 0;
  for (std::size_t i = 0; i < f.numel(); ++i) diff = std::max(diff, std::fabs(fr.values()[i] - f.values()[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("color path is live") {
  const auto params = init_params(TgeConfig::toy_config(64), 2);
  const auto cloud = sample_of(PrimitiveKind::kSphere, 64, 3);
  auto latent = latent_of(cloud, true);
  {
    ad::Tape tape;
    tape.backward(ad::sum(lgsa_forward(cloud.points, latent, params, 1).features));
  }
  double gmax = 0;
  for (double g : latent.grad()) gmax = std::max(gmax, std::fabs(g));
  CHECK(gmax > 1e-8);
  // Finite-difference probe of one color channel agrees.
  CHECK(oracle::gradient_check([&] { return ad::sum(lgsa_forward(cloud.points, latent, params, 1).features); },
                               {latent}, 1e-5, 12, 4) < 1e-4);
}

TEST_CASE("compare: combination, range, asymmetry") {
  const auto params = init_params(TgeConfig::toy_config(64), 9);
  Rng rng(1);
  const std::size_t d = params.config.final_dim();
  const auto a = ad::Tensor::constant({1, d}, oracle::random_vector(rng, d));
  const auto b = ad::Tensor::constant({1, d}, oracle::random_vector(rng, d));
  const auto same = combine_features(a, a, ComparisonMode::kConcatDiff);
  CHECK(same.cols() == 3 * d);
  for (std::size_t i = 2 * d; i < 3 * d; ++i) CHECK(same.values()[i] == 0.0);
  CHECK(combine_features(a, b, ComparisonMode::kConcat).cols() == 2 * d);
  CHECK(combine_features(a, b, ComparisonMode::kDiff).cols() == d);

  const double s_ab = compare(a, b, params).item();
  const double s_ba = compare(b, a, params).item();
  CHECK(s_ab > 0.0);
  CHECK(s_ab < 1.0);
  CHECK(s_ab != s_ba);
  const auto wide = ad::Tensor::constant({1, d}, std::vector<double>(d, 1e3));
  const double s_big = compare(wide, a, params).item();
  CHECK(std::isfinite(s_big));
  CHECK_THROWS_AS(compare(a, ad::Tensor::zeros({1, d + 1}), params), ShapeError);
}

TEST_CASE("full graph gradient check at toy scale") {
  const auto cfg = TgeConfig::toy_config(64);
  REQUIRE(cfg.level1.d_emb == 16);
  auto params = init_params(cfg, 21);
  // Zero biases put every centroid's own (zero) relative offset exactly on a
  // ReLU kink; move them off it so central differences see a smooth function.
  Rng brng(5);
  for (auto& p : params.set.items()) {
    if (!p.name.ends_with(".b")) continue;
    for (auto& v : p.value.mutable_values()) v = brng.uniform(-0.1, 0.1);
  }
  const auto ref = make_primitive(PrimitiveKind::kBumpySphere, 12, 1);
  const auto in = distort_mesh(ref, 0.6, 3);
  const auto [ci, cr] = prepare_pair(in, ref, cfg);
  std::vector<ad::Tensor> leaves;
  for (const auto& p : params.set.items()) leaves.push_back(p.value);
  const double err =
      oracle::gradient_check([&] { return score_clouds(ci, cr, params); }, leaves, 1e-5, 3, 17);
  CHECK(err < 1e-4);
}

TEST_CASE("ablation variants build and score") {
  for (auto v : {Variant::kFull, Variant::kNoAttentionNoLatent, Variant::kNoAttention, Variant::kNoSelfAttention,
                 Variant::kNoGeometryFeature}) {
    auto cfg = TgeConfig::toy_config(64);
    cfg.variant = v;
    CHECK(variant_from_name(variant_name(v)) == v);
    const auto params = init_params(cfg, 1);
    const bool has_attention = params.has("l1.s0.xa.q.w");
    CHECK(has_attention == (v != Variant::kNoAttention && v != Variant::kNoAttentionNoLatent));
    CHECK(params.has("l1.s0.gsa.q.w") == (v == Variant::kFull || v == Variant::kNoGeometryFeature));
    const auto ref = make_primitive(PrimitiveKind::kCone, 10, 1);
    const double s = predict(ref, ref, params);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  CHECK(architecture_fingerprint(TgeConfig::toy_config(64)) !=
        [] {
          auto c = TgeConfig::toy_config(64);
          c.variant = Variant::kNoAttention;
          return architecture_fingerprint(c);
        }());
}

TEST_CASE("predict is deterministic and in range") {
  const auto params = init_params(TgeConfig::toy_config(64), 4);
  const auto ref = make_primitive(PrimitiveKind::kTorus, 12, 1);
  const auto in = distort_mesh(ref, 1.0, 2);
  const double a = predict(in, ref, params);
  CHECK(a == predict(in, ref, params));
  CHECK(a > 0.0);
  CHECK(a < 1.0);
}

TEST_CASE("checkpoint round trip and fingerprint rejection") {
  testutil::TempDir dir("ckpt");
  const auto cfg = TgeConfig::toy_config(64);
  const auto params = init_params(cfg, 12);
  save_model(dir / "m.ckpt", params);
  const auto back = load_model(dir / "m.ckpt");
  CHECK(back.fingerprint() == params.fingerprint());
  CHECK(back.init_seed == 12);
  REQUIRE(back.set.size() == params.set.size());
  for (std::size_t i = 0; i < back.set.size(); ++i) {
    CHECK(back.set[i].name == params.set[i].name);
    CHECK(values_of(back.set.tensor(i)) == values_of(params.set.tensor(i)));
  }
  CHECK_NOTHROW(load_model(dir / "m.ckpt", cfg));
  CHECK_THROWS_AS(load_model(dir / "m.ckpt", TgeConfig::default_config()), FingerprintError);

  // A tampered header fingerprint is rejected even without an expected config.
  auto ck = read_checkpoint(dir / "m.ckpt");
  write_checkpoint(dir / "bad.ckpt", ck.config, ck.seed, "0000000000000000", ck.params);
  CHECK_THROWS_AS(load_model(dir / "bad.ckpt"), FingerprintError);

  // Truncation and trailing garbage are format errors.
  const auto size = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::copy_file(dir / "m.ckpt", dir / "t.ckpt");
  std::filesystem::resize_file(dir / "t.ckpt", size - 8);
  CHECK_THROWS_AS(read_checkpoint(dir / "t.ckpt"), FormatError);
  std::filesystem::resize_file(dir / "t.ckpt", size + 8);
  CHECK_THROWS_AS(read_checkpoint(dir / "t.ckpt"), FormatError);
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST_CASE("fnv1a reference vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}
