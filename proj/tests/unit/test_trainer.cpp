#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "deepanen/synth.hpp"
#include "deepanen/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace deepanen;

namespace {

TripletPool pool_with_observations(const std::vector<double>& obs) {
  TripletPool pool;
  for (std::size_t i = 0; i < obs.size(); ++i) pool.entries.push_back({i, obs[i], ForecastWindow::from_rows({{obs[i]}})});
  return pool;
}

void expect_gradients_match(const ModelCheckpoint& m, const std::vector<Triplet>& batch, double alpha) {
  TrainConfig cfg;
  cfg.alpha = alpha;
  cfg.dropout_rate = 0.0;
  Rng rng(0);
  const auto analytic = oracle::flatten(backward(m, batch, cfg, rng).gradients);
  const auto numeric = oracle::numeric_gradient(m, batch, alpha, 1e-5);
  ASSERT_EQ(analytic.size(), numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    EXPECT_LE(err, std::max(1e-8, 1e-4 * std::max(std::abs(analytic[i]), std::abs(numeric[i])))) << "parameter " << i;
  }
}

}  // namespace

TEST(Sampler, HandExampleWithSingletonPositive) {
  auto pool = pool_with_observations({10, 3, 7});
  const TripletPool::Entry anchor{99, 3.1, ForecastWindow::from_rows({{3.1}})};
  std::map<double, int> negatives;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto t = draw_triplet(anchor, pool, 1, rng);
    ASSERT_TRUE(t);
    EXPECT_EQ(t->positive(0, 0), 3.0);
    ++negatives[t->negative(0, 0)];
    EXPECT_GT(t->obs_gap, 0.0);
  }
  EXPECT_EQ(negatives.size(), 2u);
  EXPECT_GT(negatives[10.0], 50);
  EXPECT_GT(negatives[7.0], 50);
}

TEST(Sampler, PositiveRouletteFollowsInverseRank) {
  // Candidates at increasing distance from the anchor; with k_pos = 3 the
  // positive should be rank r with probability (1/r) / (1 + 1/2 + 1/3).
  auto pool = pool_with_observations({1, 2, 3, 10, 20});
  const TripletPool::Entry anchor{99, 0.0, ForecastWindow::from_rows({{0.0}})};
  std::map<double, int> hits;
  Rng rng(5);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++hits[draw_triplet(anchor, pool, 3, rng)->positive(0, 0)];
  const double total = 1.0 + 0.5 + 1.0 / 3.0;
  EXPECT_NEAR(hits[1.0] / double(n), 1.0 / total, 0.01);
  EXPECT_NEAR(hits[2.0] / double(n), 0.5 / total, 0.01);
  EXPECT_NEAR(hits[3.0] / double(n), (1.0 / 3.0) / total, 0.01);
  EXPECT_EQ(hits.size(), 3u);
}

TEST(Sampler, TooFewCandidatesOrNoStrictNegative) {
  const TripletPool::Entry anchor{99, 0.0, ForecastWindow::from_rows({{0.0}})};
  Rng rng(1);
  EXPECT_FALSE(draw_triplet(anchor, pool_with_observations({1, 2}), 2, rng));
  EXPECT_FALSE(draw_triplet(anchor, pool_with_observations({1, 1, 1}), 1, rng));
  auto with_self = pool_with_observations({0, 5});
  EXPECT_FALSE(draw_triplet({0, 0.0, ForecastWindow::from_rows({{0.0}})}, with_self, 1, rng));
}

TEST(Sampler, MissingObservationAnchorsAreSkipped) {
  auto s = fixtures::random_archive(2, 30, 3, 4);
  s.obs.at(0, 5 * 3 + 1) = kMissing;
  TrainConfig cfg;
  cfg.k_pos = 3;
  Rng rng(2);
  const std::vector<std::size_t> stations{0};
  const auto sample = sample_triplets(s.fcst, s.obs, stations, 1, {0, 30}, cfg, rng);
  EXPECT_EQ(sample.triplets.size(), 29u);
  EXPECT_EQ(sample.skipped_anchors, 1u);
  for (const auto& t : sample.triplets) EXPECT_NE(t.anchor.origin.cycle, 5u);
}

TEST(Sampler, SameSeedSameTriplets) {
  auto s = fixtures::random_archive(2, 40, 3, 4);
  TrainConfig cfg;
  cfg.k_pos = 5;
  const std::vector<std::size_t> stations{0};
  Rng a(9), b(9);
  const auto x = sample_triplets(s.fcst, s.obs, stations, 1, {0, 40}, cfg, a);
  const auto y = sample_triplets(s.fcst, s.obs, stations, 1, {0, 40}, cfg, b);
  ASSERT_EQ(x.triplets.size(), y.triplets.size());
  for (std::size_t i = 0; i < x.triplets.size(); ++i) {
    EXPECT_EQ(x.triplets[i].positive.origin.cycle, y.triplets[i].positive.origin.cycle);
    EXPECT_EQ(x.triplets[i].negative.origin.cycle, y.triplets[i].negative.origin.cycle);
  }
}

TEST(Sampler, NoTripletsIsAnError) {
  auto s = fixtures::random_archive(2, 5, 3, 4);
  TrainConfig cfg;
  cfg.k_pos = 11;
  const std::vector<std::size_t> stations{0};
  Rng rng(1);
  EXPECT_THROW(sample_triplets(s.fcst, s.obs, stations, 1, {0, 5}, cfg, rng), DataError);
}

TEST(TripletLoss, HingeValues) {
  const std::vector<double> a{0, 0}, p1{1, 0}, n2{0, 2}, p2{2, 0}, n1{0, 1};
  EXPECT_EQ(triplet_loss(a, p1, n2, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(triplet_loss(a, p2, n1, 0.5), 1.5);
  const std::vector<double> anchor{3, -1}, same{0.5, 0.5};
  EXPECT_DOUBLE_EQ(triplet_loss(anchor, same, same, 0.7), 0.7);
  const std::vector<double> short_vec{1};
  EXPECT_THROW(triplet_loss(a, short_vec, n1, 0.5), DataError);
}

TEST(Backward, SatisfiedBatchHasZeroGradient) {
  ModelCheckpoint m;
  m.meta.variables = {"x"};
  m.meta.half_window = 0;
  m.norm = {{0}, {1}};
  m.params.layers = {LstmLayerParams::zeros(1, 1)};
  m.params.layers[0].weights[kCandidate] = Matrix(1, 2, 1.0);
  m.params.layers[0].biases[kOutputGate] = {10.0};
  m.params.head_weights = Matrix(1, 1, 10.0);
  m.params.head_bias = {0};
  const std::vector<Triplet> batch{{ForecastWindow::from_rows({{1.0}}), ForecastWindow::from_rows({{1.0}}),
                                    ForecastWindow::from_rows({{-1.0}}), 1.0}};
  TrainConfig cfg;
  cfg.alpha = 0.5;
  Rng rng(1);
  const auto r = backward(m, batch, cfg, rng);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.active_triplets, 0u);
  for (double g : oracle::flatten(r.gradients)) EXPECT_EQ(g, 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto m = fixtures::random_model(3, 4, 2, 3, 1, rng, 1.5);
    expect_gradients_match(m, fixtures::random_triplets(3, 3, 3, rng), 5.0);
  }
}

TEST(Backward, MatchesFiniteDifferencesWithSharedDropoutMasks) {
  Rng rng(21);
  const auto m = fixtures::random_model(2, 3, 2, 2, 1, rng, 1.5);
  const auto batch = fixtures::random_triplets(2, 2, 3, rng);
  TrainConfig cfg;
  cfg.alpha = 5.0;
  cfg.dropout_rate = 0.3;
  const Rng start(77);
  Rng r0 = start;
  const auto analytic = oracle::flatten(backward(m, batch, cfg, r0).gradients);
  auto copy = m;
  std::vector<double*> slots;
  copy.params.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<double> d) {
    for (auto& x : d) slots.push_back(&x);
  });
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double orig = *slots[i];
    *slots[i] = orig + 1e-5;
    Rng ru = start;
    const double up = batch_loss(copy, batch, cfg, ru);
    *slots[i] = orig - 1e-5;
    Rng rd = start;
    const double down = batch_loss(copy, batch, cfg, rd);
    *slots[i] = orig;
    const double num = (up - down) / 2e-5;
    EXPECT_LE(std::abs(num - analytic[i]), std::max(1e-8, 1e-4 * std::max(std::abs(num), std::abs(analytic[i]))));
  }
}

TEST(Backward, NoDropoutIsDeterministic) {
  Rng rng(3);
  const auto m = fixtures::random_model(3, 4, 2, 3, 1, rng);
  const auto batch = fixtures::random_triplets(4, 3, 3, rng);
  TrainConfig cfg;
  cfg.dropout_rate = 0.0;
  Rng a(1), b(2);
  EXPECT_EQ(backward(m, batch, cfg, a).gradients, backward(m, batch, cfg, b).gradients);
}

TEST(Adam, FirstStepWithUnitGradient) {
  Rng rng(1);
  auto p = init_network({2, 3, 1, 2}, rng);
  const auto before = oracle::flatten(p);
  auto g = p.zeros_like();
  g.for_each_tensor([](const std::string&, std::size_t, std::size_t, std::span<double> d) {
    std::fill(d.begin(), d.end(), 1.0);
  });
  auto state = AdamState::for_params(p);
  adam_step(p, g, state, 0.005, AdamConfig{});
  const auto after = oracle::flatten(p);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(after[i] - before[i], -0.005 / (1.0 + 1e-8), 1e-12);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(1);
  auto p = init_network({2, 3, 1, 2}, rng);
  const auto before = p;
  auto state = AdamState::for_params(p);
  adam_step(p, p.zeros_like(), state, 0.005, AdamConfig{});
  adam_step(p, p.zeros_like(), state, 0.005, AdamConfig{});
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step, 2u);
}

TEST(Adam, MatchesScalarRecurrenceOverSteps) {
  Rng rng(2);
  auto p = init_network({1, 1, 1, 1}, rng);
  auto state = AdamState::for_params(p);
  const double x0 = p.head_bias[0];
  double x = x0, m = 0, v = 0;
  const double gs[] = {0.3, -1.2, 0.7, 2.0};
  for (int t = 1; t <= 4; ++t) {
    auto g = p.zeros_like();
    g.head_bias[0] = gs[t - 1];
    adam_step(p, g, state, 0.01, AdamConfig{});
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p.head_bias[0], x, 1e-15);
}

namespace {

SynthDataset linear_task() {
  SynthSpec spec;
  spec.n_cycles = 500;
  spec.n_variables = 4;
  spec.rule = LatentRule::Sum;
  spec.hidden = {0, 1};
  spec.noise_sigma = 0.0;
  spec.seed = 3;
  return generate(spec);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.embed_dim = 8;
  cfg.max_iterations = 1500;
  cfg.eval_interval = 100;
  cfg.k_pos = 5;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST(Train, LearnsLinearlySeparableTask) {
  const auto ds = linear_task();
  const std::vector<std::size_t> stations{0}, leads{1};
  const auto r = train(ds.forecasts, ds.observations, stations, leads, {0, 500}, small_config());
  ASSERT_GE(r.log.size(), 2u);
  double best = r.log.front().val_loss;
  for (const auto& row : r.log) best = std::min(best, row.val_loss);
  EXPECT_LE(best, 0.1 * r.log.front().val_loss) << "initial " << r.log.front().val_loss << " best " << best;
}

TEST(Train, ZeroIterationsReturnsInitialModel) {
  const auto ds = linear_task();
  const std::vector<std::size_t> stations{0}, leads{1};
  auto cfg = small_config();
  cfg.max_iterations = 0;
  const auto r = train(ds.forecasts, ds.observations, stations, leads, {0, 500}, cfg);
  EXPECT_EQ(r.iterations_run, 0u);
  EXPECT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.checkpoint.meta.iterations, 0u);
  const auto bound = 1.0 / std::sqrt(double(r.checkpoint.params.layers[0].weights[0].cols));
  for (double w : r.checkpoint.params.layers[0].weights[0].data) EXPECT_LE(std::abs(w), bound);
}

TEST(Train, SameSeedBitIdenticalCheckpoints) {
  const auto ds = linear_task();
  const std::vector<std::size_t> stations{0}, leads{1};
  auto cfg = small_config();
  cfg.max_iterations = 150;
  const auto a = train(ds.forecasts, ds.observations, stations, leads, {0, 500}, cfg);
  const auto b = train(ds.forecasts, ds.observations, stations, leads, {0, 500}, cfg);
  std::stringstream sa, sb;
  write_checkpoint(sa, a.checkpoint);
  write_checkpoint(sb, b.checkpoint);
  EXPECT_EQ(sa.str(), sb.str());
  cfg.seed = 5;
  const auto c = train(ds.forecasts, ds.observations, stations, leads, {0, 500}, cfg);
  EXPECT_NE(c.checkpoint.params, a.checkpoint.params);
}

TEST(Train, DivergenceCarriesLastGoodModel) {
  const auto ds = linear_task();
  const std::vector<std::size_t> stations{0}, leads{1};
  auto cfg = small_config();
  cfg.learning_rate = 1e300;
  cfg.max_iterations = 50;
  try {
    train(ds.forecasts, ds.observations, stations, leads, {0, 500}, cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    ASSERT_NE(e.last_good(), nullptr);
    EXPECT_TRUE(detail::all_finite(e.last_good()->params));
    EXPECT_NE(std::string(e.what()).find("numerical divergence"), std::string::npos);
  }
}

TEST(Train, EarlyStoppingHonoursPatience) {
  const auto ds = linear_task();
  const std::vector<std::size_t> stations{0}, leads{1};
  auto cfg = small_config();
  cfg.max_iterations = 100000;
  cfg.early_stop.patience = 200;
  cfg.early_stop.min_relative_improvement = 0.5;
  const auto r = train(ds.forecasts, ds.observations, stations, leads, {0, 500}, cfg);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_LT(r.iterations_run, 100000u);
}

TEST(Train, ValidationCyclesNeverTrainAnchors) {
  const auto ds = linear_task();
  const std::vector<std::size_t> stations{0}, leads{1};
  auto cfg = small_config();
  cfg.max_iterations = 0;
  const auto r = train(ds.forecasts, ds.observations, stations, leads, {0, 500}, cfg);
  EXPECT_EQ(r.train_anchors, 450u);
  EXPECT_EQ(r.validation_triplets, 50u);
}

TEST(InputNormalization, PopulationStatistics) {
  auto a = ForecastArchive::with_shape({"A"}, {"x"}, {0, 1}, {0, 1});
  a.at(0, 0, 0, 0) = 1;
  a.at(0, 0, 0, 1) = 2;
  a.at(0, 0, 1, 0) = 3;
  a.at(0, 0, 1, 1) = kMissing;
  const std::vector<std::size_t> st{0};
  const auto n = input_normalization(a, st, {0, 2});
  EXPECT_DOUBLE_EQ(n.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(n.sigma[0], std::sqrt(2.0 / 3.0));
}
