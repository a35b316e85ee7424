#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ktm/eval.hpp"
#include "ktm/synth.hpp"
#include "ktm/trainers.hpp"
#include "support.hpp"

using namespace ktm;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double row_loss(const FMParams& p, const SparseRow& x, int y, double l2) {
  const double prob = predict_proba(p, x, Link::logit);
  double loss = -(y ? std::log(prob) : std::log(1.0 - prob));
  for (const Entry& e : x.entries()) {
    loss += 0.5 * l2 * p.w[e.index] * p.w[e.index];
    for (std::size_t f = 0; f < p.dim; ++f) loss += 0.5 * l2 * p.embedding(e.index, f) * p.embedding(e.index, f);
  }
  return loss;
}

// Worst relative disagreement between an analytic and a central-difference
// derivative over every parameter.
double gradient_error(FMParams p, const SparseRow& x, int y, double l2) {
  const FMParams grad = logit_loss_gradient(p, x, y, l2);
  const double h = 1e-5;
  double worst = 0.0;
  const auto compare = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = row_loss(p, x, y, l2);
    param = saved - h;
    const double down = row_loss(p, x, y, l2);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale > 1e-7)
      worst = std::max(worst, std::abs(analytic - numeric) / scale);
    else
      CHECK(std::abs(analytic - numeric) < 1e-9);
  };
  compare(p.mu, grad.mu);
  for (std::size_t k = 0; k < p.w.size(); ++k) compare(p.w[k], grad.w[k]);
  for (std::size_t i = 0; i < p.v.size(); ++i) compare(p.v[i], grad.v[i]);
  return worst;
}

// Newton's method on mean logistic NLL + l2/2 |w|^2 with an unpenalized
// intercept, solved densely. Independent of the library's trainers.
std::vector<double> newton_logistic(const DesignMatrix& data, double l2) {
  const std::size_t n = data.width() + 1;  // slot 0 is the intercept
  std::vector<double> beta(n, 0.0);
  const double s = double(data.size());
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<double> g(n, 0.0), h(n * n, 0.0);
    for (std::size_t r = 0; r < data.size(); ++r) {
      std::vector<double> x(n, 0.0);
      x[0] = 1.0;
      for (const Entry& e : data.row(r).entries()) x[e.index + 1] = e.value;
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) z += beta[k] * x[k];
      const double p = 1.0 / (1.0 + std::exp(-z));
      for (std::size_t k = 0; k < n; ++k) {
        g[k] += (p - data.label(r)) * x[k] / s;
        for (std::size_t l = 0; l < n; ++l) h[k * n + l] += p * (1 - p) * x[k] * x[l] / s;
      }
    }
    for (std::size_t k = 1; k < n; ++k) {
      g[k] += l2 * beta[k];
      h[k * n + k] += l2;
    }
    // Solve h * step = g by Gauss-Jordan with partial pivoting.
    std::vector<double> step = g;
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t pivot = c;
      for (std::size_t r = c + 1; r < n; ++r)
        if (std::abs(h[r * n + c]) > std::abs(h[pivot * n + c])) pivot = r;
      for (std::size_t k = 0; k < n; ++k) std::swap(h[c * n + k], h[pivot * n + k]);
      std::swap(step[c], step[pivot]);
      for (std::size_t r = 0; r < n; ++r) {
        if (r == c) continue;
        const double factor = h[r * n + c] / h[c * n + c];
        for (std::size_t k = 0; k < n; ++k) h[r * n + k] -= factor * h[c * n + k];
        step[r] -= factor * step[c];
      }
    }
    for (std::size_t k = 0; k < n; ++k) beta[k] -= step[k] / h[k * n + k];
  }
  return beta;
}

DesignMatrix rasch_design(const SynthData& data) {
  EncodingConfig c;
  c.use_users = c.use_items = true;
  return encode_dataset(data.triplets, data.qmatrix, c, data.spec.students);
}

}  // namespace

TEST_CASE("nll") {
  const std::vector<double> half{0.5, 0.5};
  const std::vector<int> y01{0, 1};
  CHECK(nll(half, y01) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const std::vector<double> perfect{0.0, 1.0};
  CHECK(nll(perfect, y01) >= 0.0);
  CHECK(nll(perfect, y01) < 1e-11);
  const std::vector<double> wrong{1.0, 0.0};
  CHECK(nll(wrong, y01) == doctest::Approx(-std::log(kNllClamp)));

  // 50-digit value from tests/oracles/links_nll.py.
  std::vector<double> p;
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    p.push_back((2.0 * i + 1) / 40.0);
    y.push_back(i % 3 != 0);
  }
  const long double reference = 0.8935136644362082956446374L;
  CHECK(std::abs(nll(p, y) - reference) <= 1e-10L * reference);

  CHECK_THROWS_AS(nll(half, std::vector<int>{1}), std::invalid_argument);
}

TEST_CASE("analytic logit gradient matches central differences") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (std::size_t dim : {0u, 5u}) {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      FMParams p(15, dim);
      p.mu = normal(rng);
      for (double& x : p.w) x = normal(rng);
      for (double& x : p.v) x = normal(rng);
      const SparseRow x = test::random_row(rng, 15, 2 + rng() % 5);
      worst = std::max(worst, gradient_error(p, x, int(rng() % 2), trial % 2 ? 0.05 : 0.0));
    }
    INFO("d = " << dim);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("init_params") {
  TrainConfig c;
  c.dim = 0;
  const FMParams zero = init_params(c, 10);
  CHECK(zero.mu == 0.0);
  CHECK(zero.w == std::vector<double>(10, 0.0));
  CHECK(zero.v.empty());

  c.dim = 5;
  double sum_std = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    c.seed = seed;
    const FMParams p = init_params(c, 10);
    REQUIRE(p.v.size() == 50);
    const double mean = std::accumulate(p.v.begin(), p.v.end(), 0.0) / 50.0;
    double ss = 0.0;
    for (double x : p.v) ss += (x - mean) * (x - mean);
    sum_std += std::sqrt(ss / 49.0);
  }
  CHECK(sum_std / 100.0 >= 0.005);
  CHECK(sum_std / 100.0 <= 0.02);

  c.seed = 9;
  CHECK(init_params(c, 10) == init_params(c, 10));
}

TEST_CASE("SGD decreases training NLL on a separable toy set") {
  const FeatureSpace space({{"f", 2}});
  std::vector<SparseRow> rows;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    rows.push_back(SparseRow({{std::size_t(i % 2), 1.0}}));
    labels.push_back(i % 2);
  }
  const DesignMatrix data(space, rows, labels);
  TrainConfig c;
  c.epochs = 10;
  c.learning_rate = 0.1;
  std::vector<double> curve;
  train_map_logit(data, c, nullptr, [&](const EpochStats& s) { curve.push_back(s.train_nll); });
  REQUIRE(curve.size() == 10);
  for (std::size_t e = 1; e < curve.size(); ++e) CHECK(curve[e] < curve[e - 1]);
}

TEST_CASE("full-batch descent decreases the regularized objective monotonically") {
  SynthSpec spec;
  spec.students = 15;
  spec.items = 8;
  spec.seed = 4;
  const DesignMatrix data = rasch_design(generate_synthetic(spec));
  TrainConfig c;
  c.full_batch = true;
  c.learning_rate = 0.5;
  double previous = regularized_objective(FMParams(data.width(), 0), data, c.l2);
  for (std::size_t epochs = 1; epochs <= 25; ++epochs) {
    c.epochs = epochs;
    const double objective = regularized_objective(train_map_logit(data, c), data, c.l2);
    CHECK(objective < previous);
    previous = objective;
  }
}

TEST_CASE("MAP on the IRT encoding converges to the L2 logistic regression optimum") {
  SynthSpec spec;
  spec.students = 12;
  spec.items = 9;
  spec.attempts = 2;
  spec.seed = 21;
  const DesignMatrix data = rasch_design(generate_synthetic(spec));
  const double l2 = 0.01;
  const std::vector<double> beta = newton_logistic(data, l2);

  TrainConfig c;
  c.full_batch = true;
  c.learning_rate = 1.0;
  c.epochs = 4000;
  c.l2 = l2;
  const FMParams p = train_map_logit(data, c);
  double mad = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    double z = beta[0];
    for (const Entry& e : data.row(r).entries()) z += beta[e.index + 1] * e.value;
    mad += std::abs(1.0 / (1.0 + std::exp(-z)) - predict_proba(p, data.row(r), Link::logit));
  }
  CHECK(mad / data.size() <= 1e-3);
}

TEST_CASE("MAP recovers Rasch abilities") {
  // 20 responses per student bound ability reliability; at scale 1 the
  // expected correlation is only about 0.88, so the truth is drawn at scale 2.
  SynthSpec spec;
  spec.students = 50;
  spec.items = 20;
  spec.sigma = 2.0;
  spec.seed = 3;
  const SynthData synth = generate_synthetic(spec);
  const DesignMatrix data = rasch_design(synth);
  TrainConfig c;
  c.epochs = 200;
  c.learning_rate = 0.05;
  const FMParams p = train_map_logit(data, c);
  std::vector<double> ability(p.w.begin(), p.w.begin() + 50);
  const double mean = std::accumulate(ability.begin(), ability.end(), 0.0) / 50.0;
  for (double& a : ability) a -= mean;
  CHECK(pearson(ability, synth.truth.ability) >= 0.9);
}

TEST_CASE("MAP training errors and determinism") {
  const FeatureSpace space({{"f", 3}});
  const DesignMatrix data(space, {SparseRow({{0, 1.0}, {1, 1.0}}), SparseRow({{1, 1.0}, {2, 1.0}})}, {1, 0});
  TrainConfig c;
  c.dim = 2;
  c.epochs = 50;
  c.learning_rate = 1e300;
  CHECK_THROWS_AS(train_map_logit(data, c), std::runtime_error);

  c.learning_rate = 0.1;
  CHECK(train_map_logit(data, c) == train_map_logit(data, c));

  c.epochs = 0;
  CHECK_THROWS_AS(train_map_logit(data, c), std::invalid_argument);
  CHECK_THROWS_AS(train_map_logit(DesignMatrix(space, {}, {}), TrainConfig{}), std::invalid_argument);
}

TEST_CASE("features unseen in training stay at zero") {
  const FeatureSpace space({{"f", 4}});
  const DesignMatrix data(space, {SparseRow({{0, 1.0}}), SparseRow({{1, 1.0}})}, {1, 0});
  TrainConfig c;
  c.dim = 2;
  c.epochs = 20;
  const FMParams map = train_map_logit(data, c);
  const FMParams gibbs = train_gibbs_probit(data, nullptr, c).params;
  for (const FMParams* p : {&map, &gibbs})
    for (std::size_t k : {2u, 3u}) {
      CHECK(p->w[k] == 0.0);
      CHECK(p->embedding(k, 0) == 0.0);
      CHECK(p->embedding(k, 1) == 0.0);
    }
}

TEST_CASE("truncated normal draws respect the sign and the truncated mean") {
  Rng rng = make_rng(1, RngStream::sampler);
  for (double mean : {-8.0, -2.0, -0.3, 0.0, 0.4, 3.0, 9.0}) {
    for (bool positive : {true, false}) {
      double sum = 0.0;
      const int draws = 20000;
      for (int i = 0; i < draws; ++i) {
        const double z = sample_truncated_normal(mean, positive, rng);
        REQUIRE(std::isfinite(z));
        if (positive)
          REQUIRE(z > 0.0);
        else
          REQUIRE(z < 0.0);
        sum += z;
      }
      // E[Z | Z > 0] = m + phi(m) / Phi(m) for Z ~ N(m, 1), mirrored below 0.
      const double m = positive ? mean : -mean;
      const double phi = std::exp(-0.5 * m * m) / std::sqrt(2 * M_PI);
      const double cdf = 0.5 * std::erfc(-m / std::sqrt(2.0));
      const double expected = (positive ? 1 : -1) * (m + phi / cdf);
      INFO("mean " << mean << " positive " << positive);
      CHECK(std::abs(sum / draws - expected) < 0.03);
    }
  }
}

TEST_CASE("Gibbs sampler") {
  SUBCASE("all-positive labels on one feature predict above one half") {
    const FeatureSpace space({{"f", 1}});
    const DesignMatrix data(space, std::vector<SparseRow>(10, SparseRow({{0, 1.0}})), std::vector<int>(10, 1));
    TrainConfig c;
    c.epochs = 100;
    const GibbsOutput out = train_gibbs_probit(data, &data, c);
    for (double p : out.test_predictions) CHECK(p > 0.5);
    CHECK(predict_proba(out.params, data.row(0), Link::probit) > 0.5);
  }

  SynthSpec spec;
  spec.students = 30;
  spec.items = 10;
  spec.link = Link::probit;
  spec.seed = 8;
  const DesignMatrix data = rasch_design(generate_synthetic(spec));
  const auto folds = make_folds(data.size(), FoldSpec{5, 1, SplitMode::by_row});
  const DesignMatrix train = data.subset(folds[0].train), test = data.subset(folds[0].test);

  SUBCASE("seeded runs are identical") {
    TrainConfig c;
    c.dim = 2;
    c.epochs = 50;
    const GibbsOutput a = train_gibbs_probit(train, &test, c);
    const GibbsOutput b = train_gibbs_probit(train, &test, c);
    CHECK(a.params == b.params);
    CHECK(a.test_predictions == b.test_predictions);
    c.seed = 43;
    CHECK(!(train_gibbs_probit(train, &test, c).params == a.params));
  }

  SUBCASE("every iteration stays finite and predictions stay in (0, 1)") {
    TrainConfig c;
    c.dim = 3;
    c.epochs = 60;
    std::size_t iterations = 0;
    const GibbsOutput out = train_gibbs_probit(train, &test, c, {}, [&](const EpochStats& s) {
      ++iterations;
      CHECK(std::isfinite(s.train_nll));
      REQUIRE(s.test_nll.has_value());
      CHECK(std::isfinite(*s.test_nll));
    });
    CHECK(iterations == 60);
    CHECK_NOTHROW(out.params.validate());
    REQUIRE(out.test_predictions.size() == test.size());
    for (double p : out.test_predictions) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }

  SUBCASE("burn-in must leave samples") {
    TrainConfig c;
    c.epochs = 10;
    c.burn_in = 10;
    CHECK_THROWS_AS(train_gibbs_probit(train, nullptr, c), std::invalid_argument);
  }
}

TEST_CASE("Gibbs on probit Rasch data nearly matches the generating model's AUC") {
  SynthSpec spec;
  spec.students = 50;
  spec.items = 20;
  spec.link = Link::probit;
  spec.seed = 5;
  const SynthData synth = generate_synthetic(spec);
  const DesignMatrix data = rasch_design(synth);
  const auto folds = make_folds(data.size(), FoldSpec{5, 5, SplitMode::by_row});
  const DesignMatrix train = data.subset(folds[0].train), test = data.subset(folds[0].test);
  TrainConfig c;
  c.epochs = 500;
  c.burn_in = 100;
  const GibbsOutput out = train_gibbs_probit(train, &test, c);

  std::vector<double> oracle;
  for (std::size_t i : folds[0].test) oracle.push_back(synth.probabilities[i]);
  const double model_auc = *auc(out.test_predictions, test.labels());
  const double oracle_auc = *auc(oracle, test.labels());
  CHECK(std::abs(model_auc - oracle_auc) <= 0.05);
}
