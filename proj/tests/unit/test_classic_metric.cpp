#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "deepanen/classic_metric.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace deepanen;

namespace {

std::vector<std::vector<double>> rows_of(const ForecastWindow& w) {
  std::vector<std::vector<double>> r(w.n_variables);
  for (std::size_t v = 0; v < w.n_variables; ++v)
    for (std::size_t j = 0; j < w.length; ++j) r[v].push_back(w(v, j));
  return r;
}

}  // namespace

TEST(Dissimilarity, IdenticalWindowsScoreZero) {
  Rng rng(1);
  const auto w = fixtures::random_window(4, 3, rng);
  const MetricConfig cfg({1, 2, 0.5, 1}, {1, 1, 2, 3}, 1);
  EXPECT_EQ(dissimilarity(w, w, cfg).score, 0.0);
}

TEST(Dissimilarity, ScalarHandExample) {
  const auto f = ForecastWindow::from_rows({{1, 2, 3}});
  const auto a = ForecastWindow::from_rows({{2, 2, 5}});
  const MetricConfig cfg({1}, {2}, 1);
  EXPECT_NEAR(dissimilarity(f, a, cfg).score, 0.5 * std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(dissimilarity(f, a, cfg).score, 1.1180340, 1e-7);
}

TEST(Dissimilarity, ShapeMismatchAndBadConfig) {
  const auto f = ForecastWindow::from_rows({{1, 2, 3}});
  const auto g = ForecastWindow::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_THROW(dissimilarity(f, g, MetricConfig({1}, {1}, 1)), DataError);
  EXPECT_THROW(dissimilarity(f, f, MetricConfig({1}, {1}, 0)), DataError);
  EXPECT_THROW(MetricConfig({-1}, {1}, 1), ConfigError);
  EXPECT_THROW(MetricConfig({0, 0}, {1, 1}, 1), ConfigError);
  EXPECT_THROW(MetricConfig({1, 1}, {1}, 1), ConfigError);
  EXPECT_THROW(MetricConfig({1}, {-1}, 1), ConfigError);
}

TEST(Dissimilarity, ZeroSigmaVariableIsSkippedAndCounted) {
  const auto f = ForecastWindow::from_rows({{0, 0, 0}, {100, 100, 100}});
  const auto a = ForecastWindow::from_rows({{1, 1, 1}, {-100, 0, 7}});
  const auto d = dissimilarity(f, a, MetricConfig({1, 1}, {1, 0}, 1));
  EXPECT_NEAR(d.score, std::sqrt(3.0), 1e-15);
  EXPECT_EQ(d.skipped_variables, 1u);
}

TEST(Dissimilarity, MatchesNaiveLoopsOnRandomInstances) {
  Rng rng(7);
  std::uniform_int_distribution<int> nv(1, 5), tw(0, 2);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = static_cast<std::size_t>(nv(rng));
    const int t = tw(rng);
    const auto f = fixtures::random_window(n, 2 * t + 1, rng);
    const auto a = fixtures::random_window(n, 2 * t + 1, rng);
    std::vector<double> w(n), s(n);
    for (auto& x : w) x = u(rng);
    for (auto& x : s) x = u(rng) + 0.1;
    w[0] += 0.1;
    const double got = dissimilarity(f, a, MetricConfig(w, s, t)).score;
    const double want = oracle::dissimilarity(rows_of(f), rows_of(a), w, s, t);
    EXPECT_NEAR(got, want, 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(Dissimilarity, Symmetric) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = fixtures::random_window(3, 5, rng);
    const auto a = fixtures::random_window(3, 5, rng);
    const MetricConfig cfg({1, 0.3, 2}, {0.5, 1, 2}, 2);
    EXPECT_EQ(dissimilarity(f, a, cfg).score, dissimilarity(a, f, cfg).score);
  }
}

TEST(Dissimilarity, VariablePermutationInvariant) {
  Rng rng(12);
  const auto f = fixtures::random_window(4, 3, rng);
  const auto a = fixtures::random_window(4, 3, rng);
  const std::vector<double> w{1, 0.5, 2, 0.1}, s{1, 2, 0.5, 3};
  std::vector<std::size_t> perm{2, 0, 3, 1};
  auto permute = [&](const ForecastWindow& x) {
    ForecastWindow y = x;
    for (std::size_t v = 0; v < 4; ++v)
      for (std::size_t j = 0; j < 3; ++j) y(v, j) = x(perm[v], j);
    return y;
  };
  std::vector<double> pw, ps;
  for (auto p : perm) {
    pw.push_back(w[p]);
    ps.push_back(s[p]);
  }
  EXPECT_NEAR(dissimilarity(f, a, MetricConfig(w, s, 1)).score,
              dissimilarity(permute(f), permute(a), MetricConfig(pw, ps, 1)).score, 1e-13);
}

TEST(Dissimilarity, ScalingAllWeightsPreservesRanking) {
  Rng rng(13);
  const auto target = fixtures::random_window(3, 3, rng);
  std::vector<ForecastWindow> cands;
  for (int i = 0; i < 40; ++i) cands.push_back(fixtures::random_window(3, 3, rng));
  const std::vector<double> w{1, 0.5, 2}, s{1, 2, 0.5};
  std::vector<double> w7;
  for (double x : w) w7.push_back(7.0 * x);
  auto order = [&](const MetricConfig& cfg) {
    std::vector<std::size_t> idx(cands.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> sc;
    for (const auto& c : cands) sc.push_back(dissimilarity(target, c, cfg).score);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return sc[a] < sc[b]; });
    return idx;
  };
  EXPECT_EQ(order(MetricConfig(w, s, 1)), order(MetricConfig(w7, s, 1)));
  EXPECT_NEAR(dissimilarity(target, cands[0], MetricConfig(w7, s, 1)).score,
              7.0 * dissimilarity(target, cands[0], MetricConfig(w, s, 1)).score, 1e-12);
}

TEST(Dissimilarity, ZeroWeightVariableIgnored) {
  const auto f = ForecastWindow::from_rows({{0}, {0}});
  const auto a = ForecastWindow::from_rows({{1}, {1000}});
  EXPECT_EQ(dissimilarity(f, a, MetricConfig({1, 0}, {1, 1}, 0)).score, 1.0);
}
