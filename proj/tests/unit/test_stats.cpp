#include <doctest.h>

#include "../oracles.hpp"
#include "../test_util.hpp"
#include "tge/primitives.hpp"
#include "tge/stats.hpp"
#include "tge/training.hpp"

using namespace tge;

namespace {

std::vector<double> with_ties(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(rng.below(4));
  return v;
}

bool nonconstant(const std::vector<double>& v) {
  return std::any_of(v.begin(), v.end(), [&](double x) { return x != v[0]; });
}

}  // namespace

TEST_CASE("correlations equal definitional oracles") {
  Rng rng(11);
  int checked = 0;
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 3 + rng.below(18);
    const bool ties = t % 2 == 1;
    const auto x = ties ? with_ties(rng, n) : oracle::random_vector(rng, n);
    const auto y = ties ? with_ties(rng, n) : oracle::random_vector(rng, n);
    if (!nonconstant(x) || !nonconstant(y)) continue;
    CHECK(std::fabs(plcc(x, y) - oracle::pearson(x, y)) < 1e-12);
    CHECK(std::fabs(srocc(x, y) - oracle::spearman(x, y)) < 1e-12);
    CHECK(std::fabs(krocc(x, y) - oracle::kendall_b(x, y)) < 1e-12);
    ++checked;
  }
  CHECK(checked > 250);
}

TEST_CASE("spearman without ties equals the rank-difference shortcut") {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const auto x = oracle::random_vector(rng, 12), y = oracle::random_vector(rng, 12);
    CHECK(std::fabs(srocc(x, y) - oracle::spearman_shortcut(x, y)) < 1e-12);
  }
}

TEST_CASE("correlation invariances") {
  Rng rng(13);
  const auto x = oracle::random_vector(rng, 10), y = oracle::random_vector(rng, 10);
  std::vector<double> affine, cubed;
  for (double v : x) {
    affine.push_back(3.0 * v + 2.0);
    cubed.push_back(v * v * v);
  }
  CHECK(plcc(affine, y) == doctest::Approx(plcc(x, y)).epsilon(1e-12));
  CHECK(srocc(cubed, y) == srocc(x, y));
  CHECK(krocc(cubed, y) == krocc(x, y));
  CHECK(plcc(x, y) == plcc(y, x));
  CHECK(krocc(x, y) == krocc(y, x));
  CHECK(plcc(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(krocc(x, x) == 1.0);
}

TEST_CASE("correlation errors") {
  const std::vector<double> a{1, 2}, b{1, 2, 3}, c{2, 2, 2};
  CHECK_THROWS(plcc(a, a));
  CHECK_THROWS(plcc(b, a));
  CHECK_THROWS_AS(plcc(b, c), std::domain_error);
  CHECK_THROWS_AS(srocc(c, b), std::domain_error);
  CHECK_THROWS_AS(krocc(c, b), std::domain_error);
}

TEST_CASE("average ranks") {
  const std::vector<double> v{0.3, 0.1, 0.3, 0.9};
  CHECK(average_ranks(v) == std::vector<double>{2.5, 1.0, 2.5, 4.0});
  Rng rng(14);
  const auto w = with_ties(rng, 15);
  CHECK(average_ranks(w) == oracle::ranks(w));
}

TEST_CASE("cross-validation orientation and aggregation") {
  Manifest man;
  for (const std::string id : {"b_obj", "a_obj"}) {
    ObjectGroup g{id, "ref.ply", {}};
    for (int k = 0; k < 4; ++k) {
      g.distorted.push_back({id + std::to_string(k), "x.ply", "noise", 1.0 - 0.25 * k, 0.25 * k});
    }
    man.objects.push_back(g);
  }
  // A lower-better metric that equals the distortion level.
  const Scorer level = [](const ObjectGroup& g, const std::vector<const ObjectGroup*>& training) {
    CHECK(training.size() == 1);
    CHECK(training[0]->id != g.id);
    std::vector<double> out;
    for (const auto& d : g.distorted) out.push_back(*d.level);
    return out;
  };
  CrossValidationOptions raw{false, Orientation::kLowerBetter};
  const auto r0 = cross_validate(man, "level", level, raw);
  REQUIRE(r0.folds.size() == 2);
  CHECK(r0.folds[0].object == "a_obj");
  CHECK(r0.folds[0].corr.srocc == doctest::Approx(-1.0));
  CrossValidationOptions flipped{true, Orientation::kLowerBetter};
  const auto r1 = cross_validate(man, "level", level, flipped);
  CHECK(r1.mean.srocc == doctest::Approx(1.0));
  CHECK(r1.mean.krocc == doctest::Approx(1.0));
  CHECK(r1.std.srocc == doctest::Approx(0.0));

  // Too few labels and constant predictions both become skipped folds.
  man.objects[0].distorted.resize(2);
  const Scorer constant = [](const ObjectGroup& g, const std::vector<const ObjectGroup*>&) {
    std::size_t n = 0;
    for (const auto& d : g.distorted) n += d.score ? 1 : 0;
    return std::vector<double>(n, 0.5);
  };
  const auto r2 = cross_validate(man, "const", constant);
  CHECK(r2.folds.empty());
  CHECK(r2.skipped.size() == 2);
  const auto back = EvalReport::from_json(r2.to_json());
  CHECK(back.skipped.size() == 2);
}

TEST_CASE("report aggregation uses population std") {
  EvalReport r;
  r.metric = "m";
  r.folds = {{"a", {0.2, 0.4, 0.1}, 4}, {"b", {0.6, 0.8, 0.5}, 4}};
  r.aggregate();
  CHECK(r.mean.plcc == doctest::Approx(0.4));
  CHECK(r.std.plcc == doctest::Approx(0.2));
  const auto j = r.to_json();
  const auto back = EvalReport::from_json(j);
  CHECK(back.mean.srocc == r.mean.srocc);
  CHECK(back.folds.size() == 2);

  EvalReport s;
  s.metric = "n";
  s.folds = {{"a", {0.5, 0.5, 0.5}, 3}};
  s.aggregate();
  const std::vector<EvalReport> reports{r, s};
  const auto csv = correlation_table(reports, "plcc");
  CHECK(csv.rfind("metric,a,b,Average,Std\n", 0) == 0);
  CHECK(csv.find("\nn,0.5") != std::string::npos);
  CHECK(csv.find("0.5,,") != std::string::npos);
}

TEST_CASE("metric scorer on a synthetic group is monotone") {
  testutil::TempDir dir("cv");
  std::vector<ColoredMesh> refs{make_primitive(PrimitiveKind::kSphere, 12, 1),
                                make_primitive(PrimitiveKind::kTorus, 12, 2)};
  refs[0].name = "sphere";
  refs[1].name = "torus";
  const auto man = make_synthetic_dataset(refs, {0.0, 0.3, 0.6, 1.0}, 5, dir.path());
  MetricConfig cfg;
  cfg.points = 512;
  const auto r = cross_validate(man, "cd", metric_scorer("cd", cfg), {true, Orientation::kLowerBetter});
  REQUIRE(r.folds.size() == 2);
  for (const auto& f : r.folds) CHECK(f.corr.srocc == doctest::Approx(1.0));
  CHECK_THROWS(metric_scorer("nope", cfg));
}

TEST_CASE("flop estimate: positive, grouped term linear in points") {
  const auto c = TgeConfig::default_config();
  const auto a = estimate_flops(c, 10000), b = estimate_flops(c, 20000);
  CHECK(a.total() > 0);
  CHECK(a.head > 0);
  CHECK(std::fabs(b.grouped / a.grouped - 2.0) < 0.02);
  const auto j = a.to_json();
  CHECK(j.at("total").get<double>() == a.total());
  CHECK_THROWS(estimate_flops(c, 0));
}
