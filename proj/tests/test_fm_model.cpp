#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ktm/fm_model.hpp"
#include "support.hpp"

using namespace ktm;

namespace {

FMParams random_params(std::mt19937_64& rng, std::size_t features, std::size_t dim, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  FMParams p(features, dim);
  p.mu = normal(rng);
  for (double& x : p.w) x = normal(rng);
  for (double& x : p.v) x = normal(rng);
  return p;
}

// Explicit sum over all pairs k < l of the densified row, in long double.
// Returns the score and the sum of absolute terms (the scale rounding error
// is measured against).
std::pair<long double, long double> pairwise_oracle(const FMParams& p, const SparseRow& row) {
  const auto x = row.to_dense(p.feature_count());
  long double score = p.mu, scale = std::abs(p.mu);
  for (std::size_t k = 0; k < x.size(); ++k) {
    score += (long double)p.w[k] * x[k];
    scale += std::abs((long double)p.w[k] * x[k]);
  }
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t l = k + 1; l < x.size(); ++l) {
      long double dot = 0;
      for (std::size_t f = 0; f < p.dim; ++f) dot += (long double)p.embedding(k, f) * p.embedding(l, f);
      score += dot * x[k] * x[l];
      scale += std::abs(dot * x[k] * x[l]);
    }
  return {score, scale};
}

// z, sigmoid(z), Phi(z) at 50 digits (tests/oracles/links_nll.py).
struct LinkValue {
  double z;
  long double sigmoid;
  long double phi;
};
constexpr LinkValue kLinkValues[] = {
    {-10.0, 0.00004539786870243439450477623L, 7.619853024160526065973343e-24L},
    {-1.0, 0.2689414213699951207488408L, 0.1586552539314570514147675L},
    {0.0, 0.5L, 0.5L},
    {1.0, 0.7310585786300048792511592L, 0.8413447460685429485852325L},
    {10.0, 0.9999546021312975656054952L, 0.9999999999999999999999924L},
    {-30.0, 9.357622968839298953839563e-14L, 4.906713927148187059533809e-198L},
    {8.25, 0.9997388096809042805773529L, 0.9999999999999999208027369L},
};

SparseRow score_row(double z) { return SparseRow(z == 0.0 ? std::vector<Entry>{} : std::vector<Entry>{{0, z}}); }

}  // namespace

TEST_CASE("zero model scores zero and predicts one half") {
  const FMParams zero(10, 3);
  std::mt19937_64 rng(1);
  const SparseRow row = test::random_row(rng, 10, 4);
  CHECK(raw_score(zero, row) == 0.0);
  CHECK(predict_proba(zero, row, Link::logit) == 0.5);
  CHECK(predict_proba(zero, row, Link::probit) == 0.5);
}

TEST_CASE("d = 0 with one-hot user and item gives the Rasch form") {
  const std::size_t n = 4, m = 5;
  std::mt19937_64 rng(2);
  const FMParams p = random_params(rng, n + m, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const SparseRow x({{i, 1.0}, {n + j, 1.0}});
      CHECK(raw_score(p, x) == doctest::Approx(p.mu + p.w[i] + p.w[n + j]).epsilon(1e-15));
    }
}

TEST_CASE("fast score equals the explicit pairwise sum") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const FMParams p = random_params(rng, 20, 3);
    const SparseRow x = test::random_row(rng, 20, 6);
    const auto [expected, scale] = pairwise_oracle(p, x);
    const double got = raw_score(p, x);
    CHECK(std::abs(got - expected) <= 1e-10 * scale);
  }
}

TEST_CASE("raw_score rejects rows wider than the model") {
  const FMParams p(3, 1);
  CHECK_THROWS(raw_score(p, SparseRow({{3, 1.0}})));
}

TEST_CASE("d = 0 makes the score linear in x") {
  std::mt19937_64 rng(4);
  const FMParams p = random_params(rng, 12, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const SparseRow x = test::random_row(rng, 12, 5);
    std::vector<Entry> doubled;
    for (const Entry& e : x.entries()) doubled.push_back({e.index, 2.0 * e.value});
    const double base = raw_score(p, x) - p.mu;
    CHECK(raw_score(p, SparseRow(doubled)) - p.mu == doctest::Approx(2.0 * base).epsilon(1e-13));
  }
}

TEST_CASE("inverse links against 50-digit reference values") {
  const FMParams p = [] {
    FMParams q(1, 0);
    q.w[0] = 1.0;
    return q;
  }();
  for (const auto& ref : kLinkValues) {
    const SparseRow x = score_row(ref.z);
    INFO("z = " << ref.z);
    // Relative condition number of both links is at most 1 + z^2 (the probit
    // lower tail), so a few ulps of argument rounding are amplified by it.
    const long double tol = 1e-15L * (1.0L + ref.z * ref.z);
    const double s = predict_proba(p, x, Link::logit);
    CHECK(std::abs(s - ref.sigmoid) <= tol * ref.sigmoid);
    const double phi = predict_proba(p, x, Link::probit);
    CHECK(std::abs(phi - ref.phi) <= tol * ref.phi);
  }
}

TEST_CASE("inverse links stay strictly inside (0, 1) and are increasing") {
  for (Link link : {Link::logit, Link::probit}) {
    double previous = 0.0;
    for (double z = -60.0; z <= 60.0; z += 0.25) {
      const double p = inverse_link(z, link);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
      CHECK(p >= previous);
      if (std::abs(z) < 8.0) CHECK(p > previous);
      previous = p;
    }
    CHECK(inverse_link(-1e6, link) > 0.0);
    CHECK(inverse_link(1e6, link) < 1.0);
  }
}

TEST_CASE("presets") {
  const auto blocks = [](const Preset& p) {
    std::vector<std::string> names;
    const FeatureSpace space = p.config.feature_space(2, 3, 4);
    for (const auto& b : space.blocks()) names.push_back(b.name);
    return names;
  };
  const Preset pfa = preset_encoding("PFA");
  CHECK(blocks(pfa) == std::vector<std::string>{"skills", "wins", "fails"});
  CHECK(pfa.dim_rule == DimRule::zero);
  const Preset irt = preset_encoding("IRT");
  CHECK(blocks(irt) == std::vector<std::string>{"users", "items"});
  CHECK_NOTHROW(check_dim(irt, 0));
  CHECK_THROWS_AS(check_dim(irt, 2), std::invalid_argument);
  const Preset mirtb = preset_encoding("MIRTb");
  CHECK(blocks(mirtb) == std::vector<std::string>{"users", "items"});
  CHECK_NOTHROW(check_dim(mirtb, 10));
  CHECK_THROWS_AS(check_dim(mirtb, 0), std::invalid_argument);
  const Preset afm = preset_encoding("afm");
  CHECK(blocks(afm) == std::vector<std::string>{"skills", "attempts"});
  CHECK(preset_encoding("KTM-iswf").config == preset_encoding("iswf").config);
  CHECK(preset_encoding("ktm-iswfe").config.use_extras);
  CHECK_NOTHROW(check_dim(preset_encoding("iswf"), 20));
  CHECK_THROWS_AS(preset_encoding("DKT"), std::invalid_argument);
  CHECK_THROWS_AS(preset_encoding("uaw"), std::invalid_argument);
}

TEST_CASE("IRT predictions are invariant under shifting user biases into the global bias") {
  std::mt19937_64 rng(5);
  const std::size_t n = 6, m = 7;
  FMParams p = random_params(rng, n + m, 0);
  FMParams shifted = p;
  const double c = 1.7;
  for (std::size_t i = 0; i < n; ++i) shifted.w[i] += c;
  shifted.mu -= c;
  for (Link link : {Link::logit, Link::probit})
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const SparseRow x({{i, 1.0}, {n + j, 1.0}});
        CHECK(std::abs(predict_proba(p, x, link) - predict_proba(shifted, x, link)) <= 1e-12);
      }
}

TEST_CASE("PFA preset scores the skill, win and fail terms of the item's skills") {
  std::mt19937_64 rng(6);
  const std::size_t n = 3, m = 6, s = 4;
  std::vector<std::uint8_t> cells(m * s);
  for (auto& c : cells) c = rng() % 2;
  const QMatrix q(m, s, cells);
  std::vector<Triplet> log;
  for (int r = 0; r < 120; ++r) log.push_back({rng() % n, rng() % m, int(rng() % 2)});

  Preset pfa = preset_encoding("pfa");
  const DesignMatrix data = encode_dataset(log, q, pfa.config, n);
  FMParams p = random_params(rng, data.width(), 0);
  p.mu = 0.0;
  const auto beta = [&](std::size_t k) { return p.w[k]; };
  const auto gamma = [&](std::size_t k) { return p.w[s + k]; };
  const auto delta = [&](std::size_t k) { return p.w[2 * s + k]; };

  CounterState counters(n, s);
  for (std::size_t r = 0; r < log.size(); ++r) {
    const Triplet& t = log[r];
    double expected = 0.0;
    for (std::size_t k : q.skills_of(t.item))
      expected += beta(k) + gamma(k) * counters.wins(t.student, k) + delta(k) * counters.fails(t.student, k);
    CHECK(std::abs(raw_score(p, data.row(r)) - expected) <= 1e-12);
    counters.apply(t, q);
  }

  SUBCASE("AFM equals PFA when win and fail rates coincide") {
    Preset afm = preset_encoding("afm");
    const DesignMatrix afm_data = encode_dataset(log, q, afm.config, n);
    FMParams a(afm_data.width(), 0);
    for (std::size_t k = 0; k < s; ++k) {
      a.w[k] = beta(k);
      a.w[s + k] = gamma(k);
      p.w[2 * s + k] = gamma(k);
    }
    for (std::size_t r = 0; r < log.size(); ++r)
      CHECK(std::abs(raw_score(a, afm_data.row(r)) - raw_score(p, data.row(r))) <= 1e-12);
  }
}

TEST_CASE("embedding export") {
  std::mt19937_64 rng(8);
  const FeatureSpace space({{"users", 2}, {"items", 3}, {"skills", 3}, {"wins", 3}, {"fails", 3}});

  SUBCASE("shape with d = 2") {
    const FMParams p = random_params(rng, 14, 2);
    const auto rows = export_embeddings(p, space);
    CHECK(rows.size() == 14);
    CHECK(rows[3].block == "items");
    CHECK(rows[3].local_id == 1);
    CHECK(rows[3].bias == p.w[3]);
    std::ostringstream out;
    write_embeddings_csv(out, rows, 2);
    std::istringstream lines(out.str());
    std::string header, line;
    std::getline(lines, header);
    CHECK(header == "block,local_id,bias,v0,v1");
    std::size_t count = 0;
    while (std::getline(lines, line)) {
      ++count;
      CHECK(std::count(line.begin(), line.end(), ',') == 4);
    }
    CHECK(count == 14);
  }
  SUBCASE("bias only with d = 0") {
    const FMParams p = random_params(rng, 14, 0);
    std::ostringstream out;
    write_embeddings_csv(out, export_embeddings(p, space), 0);
    CHECK(out.str().rfind("block,local_id,bias\n", 0) == 0);
  }
  SUBCASE("export then reload reproduces the parameters") {
    for (std::size_t dim : {0u, 1u, 4u}) {
      const FMParams p = random_params(rng, 14, dim, 3.0);
      std::stringstream csv;
      write_embeddings_csv(csv, export_embeddings(p, space), dim);
      const FMParams back = params_from_embeddings(read_embeddings_csv(csv), space, dim, p.mu);
      CHECK(back == p);
    }
  }
}

TEST_CASE("FMParams validation and link names") {
  FMParams p(3, 2);
  CHECK_NOTHROW(p.validate());
  p.v.pop_back();
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  FMParams q(2, 0);
  q.w[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);
  CHECK(parse_link("probit") == Link::probit);
  CHECK(to_string(Link::logit) == "logit");
  CHECK_THROWS_AS(parse_link("cloglog"), std::invalid_argument);
}
