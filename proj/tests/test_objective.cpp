#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "vamp/objective.hpp"

using namespace vamp;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.base_classes = 3;
  s.novel_classes = 2;
  s.test_per_class = 4;
  return s;
}

const Dataset& shared_data() {
  static const Dataset d = make_dataset(small_spec());
  return d;
}

ModelBundle make_model(AblationMode mode, std::uint64_t init_seed = 0) {
  BuildOptions o;
  o.init_seed = init_seed;
  o.calibration_pool = 64;
  return build_model(EncoderConfig::toy(), shared_data().task, mode, o);
}

void zero_nets(std::vector<MlpParams>& nets) {
  for (auto& n : nets) n = MlpParams::zeros(n.in_width(), n.w1.cols(), n.out_width());
}

// Posterior with unit-scale means from the output bias and a fixed log-variance.
void set_posterior_bias(ModelBundle& m, double log_var) {
  Rng rng(5);
  std::normal_distribution<double> normal;
  const std::size_t md = m.config.prompt_tokens * m.config.text_width;
  for (auto& net : m.trainable.posterior) {
    auto b = net.b2.mutable_data();
    for (std::size_t i = 0; i < md; ++i) b[i] = normal(rng);
    for (std::size_t i = md; i < 2 * md; ++i) b[i] = log_var;
  }
}

}  // namespace

TEST(PairwiseSum, MatchesExactSumsAndEmpty) {
  EXPECT_EQ(pairwise_sum(std::vector<double>{}), 0.0);
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i + 1);
  EXPECT_EQ(pairwise_sum(v), 500500.0);
}

TEST(Prototypes, SingleExampleIsItsFeature) {
  ModelBundle m = make_model(AblationMode::kVariationalClassPrior);
  const Example& e = shared_data().base_train[0];
  std::vector<Example> one{e};
  auto table = compute_class_prototypes(m, one, std::vector<std::size_t>{e.label});
  EXPECT_EQ(table.at(e.label).to_vector(), image_features(m, e.patches).frozen_feature.to_vector());
  EXPECT_EQ(table.support[e.label], 1u);
  for (std::size_t c = 0; c < table.num_classes(); ++c) {
    if (c != e.label) EXPECT_FALSE(table.has(c));
  }
}

TEST(Prototypes, TwoExamplesGiveTheirMidpoint) {
  ModelBundle m = make_model(AblationMode::kVariationalClassPrior);
  const auto& train = shared_data().base_train;
  std::vector<Example> two{train[0], train[1]};
  ASSERT_EQ(two[0].label, two[1].label);
  auto table = compute_class_prototypes(m, two, {});
  Tensor a = image_features(m, two[0].patches).frozen_feature, b = image_features(m, two[1].patches).frozen_feature;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(table.at(two[0].label).data()[k], (a.data()[k] + b.data()[k]) / 2.0);
  }
}

TEST(Prototypes, SixteenShotMeanMatchesNaiveLoop) {
  ModelBundle m = make_model(AblationMode::kVariationalClassPrior);
  const auto& train = shared_data().base_train;
  FeatureCache cache;
  auto table = compute_class_prototypes(m, train, shared_data().task.base_class_ids(), &cache);
  for (std::size_t c : shared_data().task.base_class_ids()) {
    std::vector<double> acc(m.config.embed_dim, 0.0);
    std::size_t n = 0;
    for (const auto& e : train) {
      if (e.label != c) continue;
      ++n;
      const Tensor f = image_features(m, e.patches).frozen_feature;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += f.data()[k];
    }
    ASSERT_EQ(n, 16u);
    EXPECT_EQ(table.support[c], 16u);
    for (std::size_t k = 0; k < acc.size(); ++k) EXPECT_NEAR(table.at(c).data()[k], acc[k] / 16.0, 1e-14);
  }
}

TEST(Prototypes, RecomputationAndPermutationAreBitExact) {
  ModelBundle m = make_model(AblationMode::kVariationalClassPrior);
  std::vector<Example> train = shared_data().base_train;
  auto a = compute_class_prototypes(m, train, {});
  std::reverse(train.begin(), train.end());
  std::rotate(train.begin(), train.begin() + 7, train.end());
  auto b = compute_class_prototypes(m, train, {});
  for (std::size_t c : shared_data().task.base_class_ids()) {
    EXPECT_EQ(a.at(c).to_vector(), b.at(c).to_vector());
    const auto pa = prior_params(nullptr, a.at(c), m.trainable.prior, m.config);
    const auto pb = prior_params(nullptr, b.at(c), m.trainable.prior, m.config);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i].mu.to_vector(), pb[i].mu.to_vector());
      EXPECT_EQ(pa[i].log_var.to_vector(), pb[i].log_var.to_vector());
    }
  }
}

TEST(Prototypes, MissingRequiredClassIsAnError) {
  ModelBundle m = make_model(AblationMode::kVariationalClassPrior);
  auto table = compute_class_prototypes(m, shared_data().base_train, {});
  EXPECT_THROW(table.at(shared_data().task.novel_class_ids()[0]), MissingClassError);
  EXPECT_THROW(compute_class_prototypes(m, shared_data().base_train, shared_data().task.novel_class_ids()),
               MissingClassError);
}

TEST(Elbo, MissingPrototypeForClassPriorIsAnError) {
  ModelBundle m = make_model(AblationMode::kVariationalClassPrior);
  std::span<const Example> batch(shared_data().base_train.data(), 2);
  const auto classes = shared_data().task.base_class_ids();
  EXPECT_THROW(elbo_loss(nullptr, batch, m, nullptr, 1.0, {}, classes), MissingClassError);
  PrototypeTable empty;
  EXPECT_THROW(elbo_loss(nullptr, batch, m, &empty, 1.0, {}, classes), MissingClassError);
  std::vector<std::size_t> wrong{shared_data().task.novel_class_ids()};
  auto table = compute_class_prototypes(m, shared_data().base_train, {});
  EXPECT_THROW(elbo_loss(nullptr, batch, m, &table, 1.0, {}, wrong), MissingClassError);
}

TEST(Elbo, ZeroPosteriorNetsHaveZeroKlAgainstStandardPrior) {
  ModelBundle m = make_model(AblationMode::kVariationalStdPrior);
  zero_nets(m.trainable.posterior);
  std::span<const Example> batch(shared_data().base_train.data(), 4);
  auto out = elbo_loss(nullptr, batch, m, nullptr, 1.0, {}, shared_data().task.base_class_ids());
  EXPECT_EQ(out.kl, 0.0);
  EXPECT_EQ(out.total.item(), out.nll);
}

TEST(Elbo, ZeroNetsMatchZeroPromptGenerators) {
  // Posterior N(0, I) with zero noise yields z = 0, as do zero generators.
  ModelBundle v = make_model(AblationMode::kVariationalStdPrior);
  ModelBundle d = make_model(AblationMode::kSampleDeterministic);
  zero_nets(v.trainable.posterior);
  zero_nets(d.trainable.generators);
  std::span<const Example> batch(shared_data().base_train.data(), 6);
  NoiseSpec zero{NoiseSpec::Kind::kZero};
  const auto classes = shared_data().task.base_class_ids();
  EXPECT_EQ(elbo_loss(nullptr, batch, v, nullptr, 0.0, zero, classes).total.item(),
            elbo_loss(nullptr, batch, d, nullptr, 0.0, zero, classes).total.item());
}

TEST(Elbo, KlIsTheLayerSumOfPerLayerTerms) {
  ModelBundle m = make_model(AblationMode::kVariationalClassPrior, 3);
  for (auto& net : m.trainable.posterior)
    for (double& w : net.w2.mutable_data()) w *= 20.0;
  const auto& train = shared_data().base_train;
  std::span<const Example> batch(train.data(), 1);
  auto table = compute_class_prototypes(m, train, {});
  auto out = elbo_loss(nullptr, batch, m, &table, 0.5, {}, shared_data().task.base_class_ids());
  const auto feats = image_features(m, train[0].patches);
  const auto q = posterior_params(nullptr, feats.frozen_feature, m.trainable.posterior, m.config);
  const auto p = prior_params(nullptr, table.at(train[0].label), m.trainable.prior, m.config);
  double expect = 0.0;
  ASSERT_EQ(q.size(), m.config.prompt_depth);
  for (std::size_t i = 0; i < q.size(); ++i) expect += kl_diag_gaussians(nullptr, q[i], p[i]).item();
  EXPECT_GT(expect, 0.0);
  EXPECT_NEAR(out.kl, expect, 1e-12 * expect);
  EXPECT_NEAR(out.total.item(), out.nll + 0.5 * out.kl, 1e-12);
}

TEST(Elbo, BetaZeroDropsTheKlTerm) {
  ModelBundle m = make_model(AblationMode::kVariationalStdPrior, 4);
  std::span<const Example> batch(shared_data().base_train.data(), 3);
  auto out = elbo_loss(nullptr, batch, m, nullptr, 0.0, {}, shared_data().task.base_class_ids());
  EXPECT_GT(out.kl, 0.0);
  EXPECT_EQ(out.total.item(), out.nll);
  EXPECT_THROW(elbo_loss(nullptr, batch, m, nullptr, -1.0, {}, shared_data().task.base_class_ids()), ConfigError);
}

TEST(Elbo, BatchLossIsTheMeanOfSingleLosses) {
  ModelBundle m = make_model(AblationMode::kTaskShared, 5);
  const auto& train = shared_data().base_train;
  const auto classes = shared_data().task.base_class_ids();
  double sum = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    sum += elbo_loss(nullptr, std::span<const Example>(train.data() + i, 1), m, nullptr, 1.0, {}, classes).nll;
  }
  EXPECT_NEAR(elbo_loss(nullptr, std::span<const Example>(train.data(), 4), m, nullptr, 1.0, {}, classes).nll,
              sum / 4.0, 1e-13);
}

TEST(Jensen, ElboNeverExceedsTheMarginalEstimate) {
  ModelBundle m = make_model(AblationMode::kVariationalStdPrior, 6);
  for (auto& net : m.trainable.posterior)
    for (double& w : net.w2.mutable_data()) w *= 30.0;
  const auto classes = shared_data().task.base_class_ids();
  auto r = marginal_log_likelihood_lower_bound_check(m, shared_data().base_train[3], classes, 200, 9);
  EXPECT_EQ(r.draws, 200u);
  EXPECT_LE(r.elbo_est, r.mll_est);
  EXPECT_GT(r.combined_se(), 0.0);
  auto again = marginal_log_likelihood_lower_bound_check(m, shared_data().base_train[3], classes, 200, 9);
  EXPECT_EQ(r.elbo_est, again.elbo_est);
  EXPECT_EQ(r.mll_est, again.mll_est);
}

TEST(Jensen, PointMassPosteriorClosesTheGap) {
  ModelBundle m = make_model(AblationMode::kVariationalStdPrior, 7);
  set_posterior_bias(m, -1000.0);
  auto r = marginal_log_likelihood_lower_bound_check(m, shared_data().base_train[5],
                                                     shared_data().task.base_class_ids(), 1000, 1);
  EXPECT_GE(r.mll_est - r.elbo_est, 0.0);
  EXPECT_LE(r.mll_est - r.elbo_est, 1e-3);
}

TEST(Jensen, TenfoldDrawsShrinkTheStandardErrorBySqrtTen) {
  // A unit-variance posterior makes the likelihood weights heavy-tailed, and
  // then the log-mean estimator's standard error converges far more slowly.
  ModelBundle m = make_model(AblationMode::kVariationalStdPrior, 8);
  set_posterior_bias(m, -2.0);
  const auto classes = shared_data().task.base_class_ids();
  const Example& e = shared_data().base_train[2];
  auto small = marginal_log_likelihood_lower_bound_check(m, e, classes, 1000, 2);
  auto large = marginal_log_likelihood_lower_bound_check(m, e, classes, 10000, 3);
  const double ratio = small.elbo_se / large.elbo_se;
  EXPECT_GE(ratio, 2.5);
  EXPECT_LE(ratio, 4.0);
  const double mll_ratio = small.mll_se / large.mll_se;
  EXPECT_GE(mll_ratio, 2.5);
  EXPECT_LE(mll_ratio, 4.0);
}
