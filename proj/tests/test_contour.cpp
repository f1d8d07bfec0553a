#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "cante/contour.hpp"
#include "cante/error.hpp"
#include "cante/random.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cante;

namespace {

PitchTrack track_of(const std::vector<double>& cents) {
  PitchTrack t;
  const auto n = static_cast<Eigen::Index>(cents.size());
  t.time.resize(n);
  t.f0_cents.resize(n);
  t.salience = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.time[i] = (1024.0 + 256.0 * i) / 44100.0;
    t.f0_cents[i] = cents[static_cast<std::size_t>(i)];
  }
  return t;
}

ClusterModel two_level_model() {
  ClusterModel m;
  m.k = 2;
  m.centroids.resize(2);
  m.centroids << 1000.0, 2000.0;
  return m;
}

double bic(double sse, double n, int k) {
  return sse <= 0 ? -std::numeric_limits<double>::infinity() : n * std::log(sse / n) + k * std::log(n);
}

}  // namespace

TEST_CASE("cluster_1d worked examples") {
  const std::vector<double> a{100, 100, 100, 700, 700, 700};
  const ClusterModel m = cluster_1d(a, 2);
  CHECK(m.centroids[0] == 100.0);
  CHECK(m.centroids[1] == 700.0);
  CHECK(m.sse == 0.0);

  const std::vector<double> b{0, 10, 990, 1000, 2000};
  const ClusterModel m3 = cluster_1d(b, 3);
  CHECK(m3.centroids[0] == doctest::Approx(5.0));
  CHECK(m3.centroids[1] == doctest::Approx(995.0));
  CHECK(m3.centroids[2] == doctest::Approx(2000.0));
  CHECK(m3.sse == doctest::Approx(100.0));

  const std::vector<double> c{30, -4, 12, 7};
  const ClusterModel all = cluster_1d(c, 4);
  CHECK(all.sse == 0.0);
  CHECK(all.centroids[0] == -4.0);
  CHECK(all.centroids[3] == 30.0);
  CHECK_THROWS_AS(cluster_1d(c, 5), ArgumentError);
  CHECK_THROWS_AS(cluster_1d(c, 0), ArgumentError);
}

TEST_CASE("assignment goes to the nearest centroid, ties to the lower index") {
  const ClusterModel m = two_level_model();
  CHECK(m.assign(1400.0) == 0);
  CHECK(m.assign(1500.0) == 0);
  CHECK(m.assign(1500.1) == 1);
  CHECK(m.assign(-1e6) == 0);
}

TEST_CASE("cluster_1d equals the exhaustive partition optimum") {
  Rng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(10));
    std::vector<int> ints;
    for (int i = 0; i < n; ++i) ints.push_back(static_cast<int>(rng.uniform_int(41)) - 20);
    std::vector<double> values(ints.begin(), ints.end());
    std::set<int> distinct(ints.begin(), ints.end());
    const int k = 1 + static_cast<int>(rng.uniform_int(std::min<std::size_t>(4, distinct.size())));
    const ClusterModel m = cluster_1d(values, k);
    const std::int64_t best = oracle::best_partition_sse(ints, k);
    CHECK(oracle::model_sse(ints, m) == best);
    CHECK(m.sse == doctest::Approx(static_cast<double>(best) / oracle::kScale));
    for (int c = 1; c < m.k; ++c) CHECK(m.centroids[c] > m.centroids[c - 1]);
  }
}

TEST_CASE("select_k") {
  std::vector<double> dense;
  for (int i = 0; i < 200; ++i) dense.push_back(i % 2 ? 3000.0 : 1000.0);
  CHECK(select_k(dense, 1, 5) == 2);

  // Continuous blobs keep paying for extra splits; compare with a direct BIC argmin.
  Rng rng(5);
  std::vector<double> blobs;
  for (int i = 0; i < 200; ++i) blobs.push_back((i % 2 ? 3000.0 : 1000.0) + rng.normal(0.0, 5.0));
  int blob_best = 1;
  for (int k = 2; k <= 5; ++k) {
    if (bic(cluster_1d(blobs, k).sse, 200, k) < bic(cluster_1d(blobs, blob_best).sse, 200, blob_best)) blob_best = k;
  }
  CHECK(select_k(blobs, 1, 5) == blob_best);
  CHECK(bic(cluster_1d(blobs, 2).sse, 200, 2) < bic(cluster_1d(blobs, 1).sse, 200, 1) - 100.0);

  const std::vector<double> flat(30, 1234.0);
  CHECK(select_k(flat, 1, 6) == 1);

  std::vector<double> spread;
  for (int i = 0; i <= 480; ++i) spread.push_back(10.0 * i);
  const int chosen = select_k(spread, 2, 12);
  const auto curve = optimal_sse_curve(spread, 12);
  int best_k = 2;
  for (int k = 2; k <= 12; ++k) {
    const double direct = cluster_1d(spread, k).sse;
    CHECK(curve[static_cast<std::size_t>(k)] == doctest::Approx(direct));
    if (bic(direct, 481, k) < bic(cluster_1d(spread, best_k).sse, 481, best_k)) best_k = k;
  }
  CHECK(chosen == best_k);
  CHECK_THROWS_AS(select_k(std::vector<double>{}, 2, 4), ArgumentError);
}

TEST_CASE("segmenting a pitch track") {
  const ClusterModel m = two_level_model();
  SegmentParams p;
  p.min_frames = 2;

  const auto constant = segment(track_of(std::vector<double>(12, 1010.0)), m, p);
  REQUIRE(constant.size() == 1);
  CHECK(constant[0].start_frame == 0);
  CHECK(constant[0].end_frame == 12);

  const auto two = segment(track_of({1000, 1000, 1000, 2000, 2000, 2000}), m, p);
  REQUIRE(two.size() == 2);
  CHECK(two[0].cluster_index == 0);
  CHECK(two[1].cluster_index == 1);
  CHECK(two[0].end_frame == two[1].start_frame);

  p.min_frames = 3;
  const auto absorbed = segment(track_of({1000, 1000, 2000, 1000, 1000}), m, p);
  REQUIRE(absorbed.size() == 1);
  CHECK(absorbed[0].cluster_index == 0);
  CHECK(absorbed[0].end_frame - absorbed[0].start_frame == 5);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(segment(track_of({nan, nan, nan}), m, p).empty());
}

TEST_CASE("long unvoiced gaps split phrases") {
  const ClusterModel m = two_level_model();
  std::vector<double> cents(60, 1000.0);
  for (int i = 20; i < 50; ++i) cents[i] = std::numeric_limits<double>::quiet_NaN();
  for (int i = 50; i < 60; ++i) cents[i] = 2000.0;
  const auto segs = segment(track_of(cents), m, {5, 0.1});
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].phrase != segs[1].phrase);
  const auto phrases = contour_of(segs);
  REQUIRE(phrases.size() == 2);
  CHECK(phrases[0].steps.empty());
}

TEST_CASE("shifting every pitch leaves the contour unchanged") {
  std::vector<double> cents;
  Rng rng(12);
  for (int level : {0, 3, 1, 4, 2, 5, 0}) {
    for (int i = 0; i < 15; ++i) cents.push_back(2000.0 + 170.0 * level + rng.normal(0.0, 3.0));
  }
  std::vector<double> shifted = cents;
  for (double& c : shifted) c += 321.5;
  const auto a = approximate_contour(track_of(cents));
  const auto b = approximate_contour(track_of(shifted));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].steps == b[i].steps);
    for (std::size_t j = 0; j < a[i].segments.size(); ++j) {
      CHECK(a[i].segments[j].start_frame == b[i].segments[j].start_frame);
      CHECK(a[i].segments[j].end_frame == b[i].segments[j].end_frame);
    }
  }
  const ClusterModel m = cluster_1d(cents, 6);
  const ClusterModel ms = cluster_1d(shifted, 6);
  CHECK(((ms.centroids.array() - m.centroids.array()) - 321.5).abs().maxCoeff() < 1e-6);
}

TEST_CASE("contour steps are cluster index differences") {
  auto seg = [](int c, Eigen::Index s) { return LineSegment{c, s, s + 5, 0.0, 0}; };
  const auto one = contour_of({seg(3, 0)});
  REQUIRE(one.size() == 1);
  CHECK(one[0].steps.empty());
  const auto four = contour_of({seg(2, 0), seg(4, 5), seg(3, 10), seg(5, 15)});
  CHECK(four[0].steps == std::vector<int>{2, -1, 2});
  CHECK(four[0].steps.size() == four[0].segments.size() - 1);
  CHECK(contour_of({seg(5, 0), seg(1, 5)})[0].steps == std::vector<int>{-4});
}

TEST_CASE("approximate_contour on a staircase") {
  std::vector<double> cents;
  for (int level : {0, 2, 1, 3}) {
    for (int i = 0; i < 20; ++i) cents.push_back(2400.0 + 200.0 * level);
  }
  const auto phrases = approximate_contour(track_of(cents));
  REQUIRE(phrases.size() == 1);
  CHECK(phrases[0].steps == std::vector<int>{2, -1, 2});
}

TEST_CASE("contour JSON round trip") {
  testutil::TempDir dir("contour");
  std::vector<double> cents;
  for (int level : {0, 1, 3, 2}) {
    for (int i = 0; i < 10; ++i) cents.push_back(3000.0 + 100.0 * level);
  }
  auto phrases = approximate_contour(track_of(cents));
  phrases[0].source_id = "rec";
  save_contours_json(dir / "c.json", phrases);
  const auto back = load_contours_json(dir / "c.json");
  REQUIRE(back.size() == 1);
  CHECK(back[0].steps == phrases[0].steps);
  CHECK(back[0].segments.size() == phrases[0].segments.size());
  CHECK(back[0].segments[1].start_frame == phrases[0].segments[1].start_frame);
  CHECK_THROWS_AS(load_contours_json(dir / "none.json"), DependencyError);
}
