#include <doctest.h>

#include <fstream>

#include "../oracles.hpp"
#include "../test_util.hpp"
#include "tge/error.hpp"
#include "tge/primitives.hpp"
#include "tge/stats.hpp"
#include "tge/training.hpp"

using namespace tge;

namespace {

ad::Tensor column(const std::vector<double>& v, bool variable = false) {
  return variable ? ad::Tensor::variable({v.size(), 1}, v) : ad::Tensor::constant({v.size(), 1}, v);
}

std::vector<double> distinct_vector(Rng& rng, std::size_t n, double min_gap) {
  for (;;) {
    auto v = oracle::random_vector(rng, n, 0.0, 1.0);
    auto s = v;
    std::sort(s.begin(), s.end());
    bool ok = true;
    for (std::size_t i = 1; i < n; ++i) ok = ok && s[i] - s[i - 1] >= min_gap;
    if (ok) return v;
  }
}

std::vector<ColoredMesh> references(std::size_t n) {
  std::vector<ColoredMesh> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto m = make_primitive(all_primitive_kinds()[i % all_primitive_kinds().size()], 10, i);
    m.name = primitive_name(all_primitive_kinds()[i % all_primitive_kinds().size()]);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

TEST_CASE("smooth l1 values") {
  CHECK(smooth_l1(column({0.5}), std::vector<double>{0.0}).item() == 0.125);
  CHECK(smooth_l1(column({2.0}), std::vector<double>{0.0}).item() == 1.5);
  CHECK(smooth_l1(column({0.3, 0.7}), std::vector<double>{0.3, 0.7}).item() == 0.0);
  CHECK(smooth_l1(column({-1.0, 3.0}), std::vector<double>{0.0, 0.0}).item() == doctest::Approx((0.5 + 2.5) / 2));
  CHECK_THROWS(smooth_l1(column({1.0, 2.0}), std::vector<double>{1.0}));
}

TEST_CASE("plcc loss") {
  const std::vector<double> l{0.1, 0.5, 0.2, 0.9};
  CHECK(plcc_loss(column(l), l).item() == 0.0);
  const std::vector<double> z{-1.0, 0.5, 0.5};
  CHECK(plcc_loss(column({1.0, -0.5, -0.5}), z).item() == doctest::Approx(2.0).epsilon(1e-15));
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto p = oracle::random_vector(rng, 8), y = oracle::random_vector(rng, 8);
    CHECK(std::fabs(plcc_loss(column(p), y).item() - (1.0 - oracle::pearson(p, y))) < 1e-10);
  }
  CHECK_THROWS_AS(plcc_loss(column({0.1, 0.2, 0.3}), std::vector<double>{0.5, 0.5, 0.5}), std::domain_error);
  CHECK_THROWS(plcc_loss(column({0.1, 0.2}), std::vector<double>{0.1, 0.2}));
  // Constant predictions stay finite on the epsilon path.
  CHECK(std::isfinite(plcc_loss(column({0.4, 0.4, 0.4}), std::vector<double>{0.1, 0.2, 0.3}).item()));
  auto pv = column(oracle::random_vector(rng, 6), true);
  const auto y = oracle::random_vector(rng, 6);
  CHECK(oracle::gradient_check([&] { return plcc_loss(pv, y); }, {pv}) < 1e-6);
}

TEST_CASE("soft rank") {
  const auto eq = soft_rank(column({0.3, 0.3}), 0.1);
  CHECK(eq.values()[0] == 1.5);
  CHECK(eq.values()[1] == 1.5);
  const auto two = soft_rank(column({0.1, 0.9}), 1e-3);
  CHECK(std::fabs(two.values()[0] - 1.0) < 1e-3);
  CHECK(std::fabs(two.values()[1] - 2.0) < 1e-3);
  Rng rng(2);
  auto v = column(oracle::random_vector(rng, 6), true);
  CHECK(oracle::gradient_check([&] { return ad::sum(ad::square(soft_rank(v, 0.1))); }, {v}) < 1e-5);
  CHECK_THROWS(soft_rank(column({0.1, 0.2}), 0.0));
}

TEST_CASE("srocc loss limits and oracle") {
  const std::vector<double> y{0.1, 0.4, 0.3, 0.8};
  CHECK(srocc_loss(column({1.0, 4.0, 3.0, 8.0}), y, 1e-3).item() < 1e-3);
  CHECK(std::fabs(srocc_loss(column({8.0, 3.0, 4.0, 1.0}), y, 1e-3).item() - 2.0) < 1e-3);
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto p = distinct_vector(rng, 8, 2e-3), l = distinct_vector(rng, 8, 2e-3);
    CHECK(std::fabs(srocc_loss(column(p), l, 1e-4).item() - (1.0 - srocc(p, l))) < 1e-3);
  }
}

TEST_CASE("srocc loss decreases when an adjacent swap is corrected") {
  const std::vector<double> label{0.1, 0.2, 0.3, 0.4, 0.5};
  const double swapped = srocc_loss(column({0.1, 0.3, 0.2, 0.4, 0.5}), label, 1e-3).item();
  const double fixed = srocc_loss(column({0.1, 0.2, 0.3, 0.4, 0.5}), label, 1e-3).item();
  CHECK(fixed < swapped);
}

TEST_CASE("hybrid loss") {
  const std::vector<double> y{0.2, 0.9, 0.4};
  for (LossWeights w : {LossWeights{1, 0.2, 0.2}, LossWeights{1, 0, 0}, LossWeights{0, 1, 0}, LossWeights{0, 0, 1},
                        LossWeights{2.5, 0.7, 3.1}}) {
    CHECK(hybrid_loss(column(y), y, w, 0.1).total.item() == 0.0);
  }
  Rng rng(4);
  const auto p = oracle::random_vector(rng, 3, 0, 1), l = oracle::random_vector(rng, 3, 0, 1);
  const auto h = hybrid_loss(column(p), l, {1, 0.2, 0.2}, 0.1);
  double smooth = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double d = std::fabs(p[i] - l[i]);
    smooth += d < 1 ? 0.5 * d * d : d - 0.5;
  }
  smooth /= 3;
  // Soft-rank Spearman term from its definition.
  auto soft = [](const std::vector<double>& v, double t) {
    std::vector<double> r(v.size(), 1.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (i != j) r[i] += 1.0 / (1.0 + std::exp(-(v[i] - v[j]) / t));
      }
    }
    return r;
  };
  const auto rp = soft(p, 0.1), rl = soft(l, 0.1);
  double d2 = 0;
  for (std::size_t i = 0; i < 3; ++i) d2 += (rp[i] - rl[i]) * (rp[i] - rl[i]);
  const double sr = 6.0 * d2 / (3.0 * 8.0);
  const double expect = smooth + 0.2 * (1.0 - oracle::pearson(p, l)) + 0.2 * sr;
  CHECK(std::fabs(h.total.item() - expect) < 1e-10);
  CHECK(hybrid_loss(column(p), l, {1, 0, 0}, 0.1).total.item() == smooth_l1(column(p), l).item());

  const auto flat = hybrid_loss(column(p), std::vector<double>{0.5, 0.5, 0.5}, {1, 0.2, 0.2}, 0.1);
  CHECK(flat.plcc_skipped);
  CHECK(std::isfinite(flat.total.item()));
  CHECK_THROWS(hybrid_loss(column(p), l, {-1, 0, 0}, 0.1));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 2;
  CHECK_THROWS(c.validate());
  c.weights = {1, 0, 0};
  CHECK_NOTHROW(c.validate());
  c = {};
  c.temperature = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("synthetic dataset layout and labels") {
  testutil::TempDir dir("synth");
  const auto refs = references(2);
  const auto man = make_synthetic_dataset(refs, {0.0, 0.5, 1.0}, 3, dir.path());
  REQUIRE(man.objects.size() == 2);
  CHECK(man.scored_pairs() == 6);
  const auto& g = man.objects[0];
  CHECK(g.distorted[0].score == 1.0);
  CHECK(g.distorted[2].score == 0.0);
  const auto ref = load_mesh(g.reference);
  const auto d0 = load_mesh(g.distorted[0].path);
  CHECK(d0.vertices == ref.vertices);
  CHECK(d0.colors == ref.colors);
  CHECK(d0.faces == ref.faces);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  const auto reloaded = Manifest::load(dir / "manifest.json");
  CHECK(reloaded.scored_pairs() == 6);
  // Same seed, same bytes.
  testutil::TempDir dir2("synth2");
  make_synthetic_dataset(refs, {0.0, 0.5, 1.0}, 3, dir2.path());
  const auto a = load_mesh(g.distorted[1].path);
  const auto b = load_mesh(dir2 / (g.id + "/" + g.distorted[1].path.filename().string()));
  CHECK(a.vertices == b.vertices);
}

TEST_CASE("distortion grows with level") {
  const auto ref = make_primitive(PrimitiveKind::kSphere, 16, 1);
  double prev = -1;
  for (double level : {0.0, 0.25, 0.5, 1.0}) {
    const auto d = distort_mesh(ref, level, 5);
    double dev = 0;
    for (std::size_t i = 0; i < ref.vertices.size(); ++i) dev += distance(d.vertices[i], ref.vertices[i]);
    CHECK(dev > prev);
    prev = dev;
    if (level == 0.0) CHECK(dev == 0.0);
  }
}

TEST_CASE("training: lr 0 freezes parameters, determinism, gradient flow") {
  testutil::TempDir dir("train");
  const auto man = make_synthetic_dataset(references(2), {0.0, 0.5, 1.0}, 1, dir.path());
  const auto model = TgeConfig::toy_config(64);
  const auto pairs = prepare_pairs(man, model);
  REQUIRE(pairs.size() == 6);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.0;
  const auto frozen = train(pairs, cfg, model);
  const auto init = init_params(model, cfg.seed);
  for (std::size_t i = 0; i < init.set.size(); ++i) {
    CHECK(std::equal(init.set.tensor(i).values().begin(), init.set.tensor(i).values().end(),
                     frozen.params.set.tensor(i).values().begin()));
  }

  cfg.lr = 1e-3;
  cfg.weight_decay = 1e-4;
  std::vector<EpochLog> logs;
  const auto a = train(pairs, cfg, model, [&](const EpochLog& e) { logs.push_back(e); });
  const auto b = train(pairs, cfg, model);
  CHECK(logs.size() == 2);
  CHECK(logs[0].train_srocc.has_value());
  save_model(dir / "a.ckpt", a.params);
  save_model(dir / "b.ckpt", b.params);
  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);

  // Nonzero gradient at random init for a generic batch.
  auto params = init_params(model, 3);
  {
    ad::Tape tape;
    std::vector<ad::Tensor> scores;
    std::vector<double> labels;
    for (std::size_t i = 0; i < 3; ++i) {
      scores.push_back(score_clouds(pairs[i * 2].input, pairs[i * 2].reference, params));
      labels.push_back(pairs[i * 2].label);
    }
    const auto h = hybrid_loss(ad::concat_rows(scores), labels, {}, 0.1);
    tape.backward(h.total);
  }
  double gmax = 0;
  for (const auto& g : params.set.gradients()) {
    for (double x : g) gmax = std::max(gmax, std::fabs(x));
  }
  CHECK(gmax > 0.0);
}

TEST_CASE("training rejects datasets smaller than a batch") {
  testutil::TempDir dir("small");
  const auto man = make_synthetic_dataset(references(1), {0.0, 1.0}, 1, dir.path());
  const auto model = TgeConfig::toy_config(64);
  const auto pairs = prepare_pairs(man, model);
  CHECK_THROWS(train(pairs, TrainConfig{}, model));
  CHECK_THROWS(train({}, TrainConfig{}, model));
}

TEST_CASE("periodic checkpoints") {
  testutil::TempDir dir("periodic");
  const auto man = make_synthetic_dataset(references(1), {0.0, 0.5, 1.0}, 1, dir / "data");
  const auto model = TgeConfig::toy_config(64);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir / "ck";
  train(prepare_pairs(man, model), cfg, model);
  CHECK(std::filesystem::exists(dir / "ck/epoch_2.ckpt"));
  CHECK(std::filesystem::exists(dir / "ck/epoch_4.ckpt"));
  CHECK_NOTHROW(load_model(dir / "ck/epoch_4.ckpt", model));
}
