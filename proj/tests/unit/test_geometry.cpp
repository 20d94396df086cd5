#include <doctest.h>

#include <numeric>
#include <set>

#include "../oracles.hpp"
#include "tge/geometry.hpp"
#include "tge/rng.hpp"

using namespace tge;

TEST_CASE("single point and duplicate points") {
  const std::vector<Vec3> one{{0.3, 0.2, 0.1}};
  KdTree t(one);
  CHECK(t.nearest({5, 5, 5}, 1).front().index == 0);
  CHECK(ball_query(t, {9, 9, 9}, 0.1, 4) == std::vector<std::uint32_t>{0});

  const std::vector<Vec3> dup{{1, 1, 1}, {1, 1, 1}, {0, 0, 0}};
  KdTree d(dup);
  const auto nn = d.nearest({1, 1, 1}, 2);
  CHECK(nn[0] == Neighbor{0, 0.0});
  CHECK(nn[1] == Neighbor{1, 0.0});
}

TEST_CASE("collinear nearest") {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  KdTree t(pts);
  const auto nn = t.nearest({0.9, 0, 0}, 1);
  CHECK(nn[0].index == 1);
  CHECK(nn[0].distance == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("empty index and out-of-range k are rejected") {
  CHECK_THROWS(KdTree(std::span<const Vec3>{}));
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  KdTree t(pts);
  CHECK_THROWS(t.nearest({0, 0, 0}, 3));
  CHECK_THROWS(t.nearest({0, 0, 0}, 0));
}

TEST_CASE("knn equals brute force on random sets") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(512);
    auto pts = oracle::random_points(rng, n);
    // Inject exact duplicates and lattice ties.
    for (std::size_t i = 0; i + 7 < n; i += 7) pts[i + 1] = pts[i];
    KdTree t(pts);
    for (int q = 0; q < 30; ++q) {
      const Vec3 query = q % 5 == 0 ? pts[rng.below(n)] : oracle::random_points(rng, 1, -1.2, 1.2)[0];
      const std::size_t k = 1 + rng.below(std::min<std::size_t>(n, 16));
      const auto got = t.nearest(query, k);
      const auto want = oracle::knn(pts, query, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(got[i].index == want[i].first);
        CHECK(got[i].distance == want[i].second);
      }
    }
  }
}

TEST_CASE("ball query equals brute force filter, sort, truncate") {
  Rng rng(7);
  const auto pts = oracle::random_points(rng, 200, 0.0, 1.0);
  KdTree t(pts);
  for (int q = 0; q < 100; ++q) {
    const Vec3 c = oracle::random_points(rng, 1, 0.0, 1.0)[0];
    CHECK(ball_query(t, c, 0.2, 16) == oracle::ball(pts, c, 0.2, 16));
  }
  // Centers far outside fall back to the single global nearest.
  CHECK(ball_query(t, {5, 5, 5}, 0.2, 16) == oracle::ball(pts, {5, 5, 5}, 0.2, 16));
  CHECK(ball_query(t, {5, 5, 5}, 0.2, 16).size() == 1);
  CHECK(ball_query(t, pts[17], 0.05, 4).front() == 17);
}

TEST_CASE("farthest point sampling") {
  SUBCASE("hand example on a line") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {10, 0, 0}};
    // Find a seed whose start index is 0, then check the greedy step.
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
      const auto one = farthest_point_sample(pts, 1, seed);
      if (one[0] != 0) continue;
      CHECK(farthest_point_sample(pts, 2, seed) == std::vector<std::uint32_t>{0, 2});
      break;
    }
  }
  SUBCASE("m = n is a permutation and m = 1 is the seeded start") {
    Rng rng(3);
    const auto pts = oracle::random_points(rng, 50);
    auto all = farthest_point_sample(pts, 50, 9);
    std::sort(all.begin(), all.end());
    std::vector<std::uint32_t> iota(50);
    std::iota(iota.begin(), iota.end(), 0u);
    CHECK(all == iota);
    CHECK(farthest_point_sample(pts, 1, 9).front() == farthest_point_sample(pts, 50, 9).front());
    CHECK_THROWS(farthest_point_sample(pts, 51, 9));
  }
  SUBCASE("greedy max-min sequence is nonincreasing and matches an oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const auto pts = oracle::random_points(rng, 100 + rng.below(100));
      const std::size_t m = 2 + rng.below(40);
      const auto picks = farthest_point_sample(pts, m, trial);
      CHECK(picks == farthest_point_sample(pts, m, trial));
      // Oracle: greedy with lower-index ties from the same start.
      std::vector<std::uint32_t> want{picks[0]};
      std::vector<double> md(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i) md[i] = oracle::dist2(pts[i], pts[picks[0]]);
      double prev = std::numeric_limits<double>::infinity();
      while (want.size() < m) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pts.size(); ++i) {
          if (md[i] > md[best]) best = i;
        }
        CHECK(md[best] <= prev);
        prev = md[best];
        want.push_back(static_cast<std::uint32_t>(best));
        for (std::size_t i = 0; i < pts.size(); ++i) md[i] = std::min(md[i], oracle::dist2(pts[i], pts[best]));
      }
      CHECK(picks == want);
    }
  }
}

TEST_CASE("group_points lays out ball queries contiguously") {
  Rng rng(8);
  const auto pts = oracle::random_points(rng, 120);
  KdTree t(pts);
  const std::vector<Vec3> centers{pts[0], pts[5], {3, 3, 3}};
  const auto g = group_points(t, centers, 0.4, 8);
  REQUIRE(g.groups() == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::vector<std::uint32_t> got(g.indices.begin() + g.offsets[c], g.indices.begin() + g.offsets[c + 1]);
    CHECK(got == oracle::ball(pts, centers[c], 0.4, 8));
  }
}

TEST_CASE("grouping spec validation") {
  GroupingSpec s{{0.1, 0.2}, {8, 16}, 4};
  CHECK_NOTHROW(s.validate());
  s.max_samples.pop_back();
  CHECK_THROWS(s.validate());
  s = {{0.0}, {8}, 4};
  CHECK_THROWS(s.validate());
  s = {{0.1}, {8}, 0};
  CHECK_THROWS(s.validate());
}

TEST_CASE("lexicographic order breaks coordinate ties with tie keys") {
  const std::vector<Vec3> pts{{1, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  const std::vector<Vec3> keys{{0, 0, 0}, {0.9, 0, 0}, {0.1, 0, 0}};
  CHECK(lexicographic_order(pts, keys) == std::vector<std::uint32_t>{2, 1, 0});
  CHECK(lexicographic_order(pts) == std::vector<std::uint32_t>{1, 2, 0});
}
