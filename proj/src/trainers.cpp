#include "ktm/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ktm/eval.hpp"

namespace ktm {

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(l2 >= 0.0)) throw std::invalid_argument("L2 strength must be nonnegative");
  if (!(init_std > 0.0)) throw std::invalid_argument("init std must be positive");
}

std::size_t TrainConfig::effective_burn_in() const { return burn_in.value_or(epochs / 5); }

double nll(std::span<const double> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("nll: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  if (predictions.empty()) throw std::invalid_argument("nll: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions[i], kNllClamp, 1.0 - kNllClamp);
    total -= labels[i] == 1 ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(predictions.size());
}

FMParams init_params(const TrainConfig& config, std::size_t features) {
  FMParams params(features, config.dim);
  Rng rng = make_rng(config.seed, RngStream::init);
  std::normal_distribution<double> normal(0.0, config.init_std);
  for (double& x : params.v) x = normal(rng);
  return params;
}

namespace {

/// Score of one row plus the per-factor sums s_f = sum_k x_k v_kf.
double score_with_sums(const FMParams& params, const SparseRow& x, std::vector<double>& sums) {
  double score = params.mu;
  for (const Entry& e : x.entries()) score += params.w[e.index] * e.value;
  sums.assign(params.dim, 0.0);
  for (std::size_t f = 0; f < params.dim; ++f) {
    double sum = 0.0, sum_sq = 0.0;
    for (const Entry& e : x.entries()) {
      const double t = e.value * params.embedding(e.index, f);
      sum += t;
      sum_sq += t * t;
    }
    sums[f] = sum;
    score += 0.5 * (sum * sum - sum_sq);
  }
  return score;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void warn_if_single_class(std::span<const int> labels) {
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end())
    std::cerr << "warning: all training labels are identical\n";
}

void zero_inactive(FMParams& params, const std::vector<bool>& active) {
  for (std::size_t k = 0; k < params.feature_count(); ++k) {
    if (active[k]) continue;
    params.w[k] = 0.0;
    for (std::size_t f = 0; f < params.dim; ++f) params.embedding(k, f) = 0.0;
  }
}

EpochStats epoch_stats(std::size_t epoch, std::span<const double> train_pred, std::span<const int> train_labels,
                       const DesignMatrix* test, std::span<const double> test_pred) {
  EpochStats stats;
  stats.epoch = epoch;
  stats.train_nll = nll(train_pred, train_labels);
  if (test != nullptr && test->size() > 0) {
    const Metrics m = evaluate(test_pred, test->labels());
    stats.test_acc = m.acc;
    stats.test_auc = m.auc;
    stats.test_nll = m.nll;
  }
  return stats;
}

}  // namespace

FMParams logit_loss_gradient(const FMParams& params, const SparseRow& x, int label, double l2) {
  if (x.extent() > params.feature_count()) throw std::out_of_range("row index beyond model features");
  std::vector<double> sums;
  const double g = sigmoid(score_with_sums(params, x, sums)) - label;
  FMParams grad(params.feature_count(), params.dim);
  grad.mu = g;
  for (const Entry& e : x.entries()) {
    grad.w[e.index] = g * e.value + l2 * params.w[e.index];
    for (std::size_t f = 0; f < params.dim; ++f) {
      const double v = params.embedding(e.index, f);
      grad.embedding(e.index, f) = g * (e.value * sums[f] - e.value * e.value * v) + l2 * v;
    }
  }
  return grad;
}

double regularized_objective(const FMParams& params, const DesignMatrix& data, double l2) {
  if (data.size() == 0) throw std::invalid_argument("objective of an empty design matrix");
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double z = raw_score(params, data.row(i));
    loss += softplus(z) - data.label(i) * z;
  }
  double norm = 0.0;
  for (double x : params.w) norm += x * x;
  for (double x : params.v) norm += x * x;
  return loss / static_cast<double>(data.size()) + 0.5 * l2 * norm;
}

FMParams train_map_logit(const DesignMatrix& data, const TrainConfig& config, const DesignMatrix* test,
                         const EpochCallback& on_epoch) {
  config.validate();
  if (data.size() == 0) throw std::invalid_argument("train_map_logit: empty training set");
  if (test != nullptr && test->width() != data.width())
    throw std::invalid_argument("train_map_logit: test set has a different feature space");
  warn_if_single_class(data.labels());

  const std::size_t n_rows = data.size();
  const std::size_t dim = config.dim;
  const double lr = config.learning_rate;
  const double l2 = config.l2;
  FMParams params = init_params(config, data.width());
  const std::vector<bool> active = data.active_columns();

  Rng rng = make_rng(config.seed, RngStream::shuffle);
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sums;

  const auto diverged = [](std::size_t epoch) {
    return std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                              "; the learning rate is probably too large");
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.full_batch) {
      FMParams grad(params.feature_count(), dim);
      for (std::size_t i = 0; i < n_rows; ++i) {
        const SparseRow& x = data.row(i);
        const double z = score_with_sums(params, x, sums);
        if (!std::isfinite(z)) throw diverged(epoch);
        const double g = sigmoid(z) - data.label(i);
        grad.mu += g;
        for (const Entry& e : x.entries()) {
          grad.w[e.index] += g * e.value;
          for (std::size_t f = 0; f < dim; ++f)
            grad.embedding(e.index, f) +=
                g * (e.value * sums[f] - e.value * e.value * params.embedding(e.index, f));
        }
      }
      const double scale = 1.0 / static_cast<double>(n_rows);
      params.mu -= lr * grad.mu * scale;
      for (std::size_t k = 0; k < params.w.size(); ++k)
        params.w[k] -= lr * (grad.w[k] * scale + l2 * params.w[k]);
      for (std::size_t k = 0; k < params.v.size(); ++k)
        params.v[k] -= lr * (grad.v[k] * scale + l2 * params.v[k]);
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i : order) {
        const SparseRow& x = data.row(i);
        const double z = score_with_sums(params, x, sums);
        if (!std::isfinite(z)) throw diverged(epoch);
        const double g = sigmoid(z) - data.label(i);
        params.mu -= lr * g;
        for (const Entry& e : x.entries()) {
          double& w = params.w[e.index];
          w -= lr * (g * e.value + l2 * w);
          for (std::size_t f = 0; f < dim; ++f) {
            double& v = params.embedding(e.index, f);
            v -= lr * (g * (e.value * sums[f] - e.value * e.value * v) + l2 * v);
          }
        }
      }
    }

    if (on_epoch) {
      FMParams snapshot = params;
      zero_inactive(snapshot, active);
      const auto train_pred = predict_all(snapshot, data, Link::logit);
      std::vector<double> test_pred;
      if (test != nullptr) test_pred = predict_all(snapshot, *test, Link::logit);
      const EpochStats stats = epoch_stats(epoch, train_pred, data.labels(), test, test_pred);
      if (!std::isfinite(stats.train_nll)) throw diverged(epoch);
      on_epoch(stats);
    }
  }

  zero_inactive(params, active);
  try {
    params.validate();
  } catch (const std::invalid_argument&) {
    throw diverged(config.epochs);
  }
  return params;
}

double sample_truncated_normal(double mean, bool positive, Rng& rng) {
  // Standardize to a draw of u ~ N(0, 1) restricted to u > a.
  const double a = positive ? -mean : mean;
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  while (true) {
    double u;
    if (a < 0.5) {
      do {
        u = normal(rng);
      } while (u <= a);
    } else {
      // Exponential proposal with the optimal rate for the tail.
      const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
      std::exponential_distribution<double> expo(alpha);
      do {
        u = a + expo(rng);
      } while (uniform(rng) > std::exp(-0.5 * (u - alpha) * (u - alpha)));
    }
    const double z = positive ? mean + u : mean - u;
    if (positive ? z > 0.0 : z < 0.0) return z;
  }
}

namespace {

/// Column-major copy of a design matrix for per-feature sweeps.
struct ColumnIndex {
  std::vector<std::size_t> start;
  std::vector<std::size_t> row;
  std::vector<double> value;

  explicit ColumnIndex(const DesignMatrix& data) : start(data.width() + 1, 0) {
    for (const auto& r : data.rows())
      for (const Entry& e : r.entries()) ++start[e.index + 1];
    std::partial_sum(start.begin(), start.end(), start.begin());
    row.resize(start.back());
    value.resize(start.back());
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < data.size(); ++i)
      for (const Entry& e : data.row(i).entries()) {
        row[fill[e.index]] = i;
        value[fill[e.index]++] = e.value;
      }
  }
};

struct GroupPrior {
  double mean = 0.0;
  double precision = 1.0;
};

/// Draws (mean, precision) of a group given the members' current values.
void resample_group(GroupPrior& group, const std::vector<double>& values, const HyperPriors& priors,
                    Rng& rng) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double sum = std::accumulate(values.begin(), values.end(), 0.0);
  const double post_prec = priors.mean_precision + n * group.precision;
  const double post_mean = (priors.mean_precision * priors.mean_mean + group.precision * sum) / post_prec;
  group.mean = std::normal_distribution<double>(post_mean, 1.0 / std::sqrt(post_prec))(rng);

  double ss = 0.0;
  for (double x : values) ss += (x - group.mean) * (x - group.mean);
  const double shape = priors.precision_shape + 0.5 * n;
  const double rate = priors.precision_rate + 0.5 * ss;
  double precision = std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
  if (!std::isfinite(precision) || precision < 1e-300) {
    std::cerr << "warning: hyperparameter precision underflow; resetting to 1\n";
    precision = 1.0;
  }
  group.precision = precision;
}

}  // namespace

GibbsOutput train_gibbs_probit(const DesignMatrix& train, const DesignMatrix* test,
                               const TrainConfig& config, const HyperPriors& priors,
                               const EpochCallback& on_epoch) {
  config.validate();
  if (train.size() == 0) throw std::invalid_argument("train_gibbs_probit: empty training set");
  if (test != nullptr && test->width() != train.width())
    throw std::invalid_argument("train_gibbs_probit: test set has a different feature space");
  if (!(priors.mean_precision > 0 && priors.precision_shape > 0 && priors.precision_rate > 0 &&
        priors.global_bias_precision > 0))
    throw std::invalid_argument("hyperprior parameters must be positive");
  warn_if_single_class(train.labels());

  const std::size_t n_rows = train.size();
  const std::size_t n_features = train.width();
  const std::size_t dim = config.dim;
  const std::size_t burn_in = config.effective_burn_in();
  if (burn_in >= config.epochs) throw std::invalid_argument("burn-in must be smaller than the number of iterations");

  FMParams params = init_params(config, n_features);
  const std::vector<bool> active = train.active_columns();
  zero_inactive(params, active);
  std::vector<std::size_t> active_list;
  for (std::size_t k = 0; k < n_features; ++k)
    if (active[k]) active_list.push_back(k);

  const ColumnIndex cols(train);
  Rng rng = make_rng(config.seed, RngStream::sampler);
  std::normal_distribution<double> std_normal;

  GroupPrior bias_group;
  std::vector<GroupPrior> factor_groups(dim);

  std::vector<double> score(n_rows), target(n_rows), residual(n_rows), factor_sum(n_rows);
  std::vector<double> values;
  values.reserve(active_list.size());

  FMParams param_sum(n_features, dim);
  std::vector<double> test_sum(test ? test->size() : 0, 0.0);
  std::vector<double> test_current(test_sum.size(), 0.0);
  std::size_t kept = 0;

  // Draws theta from its Gaussian full conditional, given the rows it touches
  // with slopes h_i, then shifts the cached scores and residuals.
  const auto draw = [&](double& theta, double prior_mean, double prior_prec, double sum_hh,
                        double sum_he) {
    const double prec = sum_hh + prior_prec;
    if (!std::isfinite(prec) || prec <= 0.0)
      throw std::runtime_error("non-finite conditional variance in the Gibbs sampler");
    const double mean = (theta * sum_hh - sum_he + prior_mean * prior_prec) / prec;
    const double next = mean + std_normal(rng) / std::sqrt(prec);
    const double delta = next - theta;
    theta = next;
    return delta;
  };

  for (std::size_t iter = 1; iter <= config.epochs; ++iter) {
    // (1) Latent utilities given the current scores.
    for (std::size_t i = 0; i < n_rows; ++i) {
      score[i] = raw_score(params, train.row(i));
      target[i] = sample_truncated_normal(score[i], train.label(i) == 1, rng);
      residual[i] = score[i] - target[i];
    }

    // (2) Parameters, one coordinate at a time.
    {
      const double sum_he = std::accumulate(residual.begin(), residual.end(), 0.0);
      const double delta = draw(params.mu, 0.0, priors.global_bias_precision,
                                static_cast<double>(n_rows), sum_he);
      for (std::size_t i = 0; i < n_rows; ++i) {
        score[i] += delta;
        residual[i] += delta;
      }
    }
    for (std::size_t k : active_list) {
      double sum_hh = 0.0, sum_he = 0.0;
      for (std::size_t p = cols.start[k]; p < cols.start[k + 1]; ++p) {
        const double h = cols.value[p];
        sum_hh += h * h;
        sum_he += h * residual[cols.row[p]];
      }
      const double delta = draw(params.w[k], bias_group.mean, bias_group.precision, sum_hh, sum_he);
      for (std::size_t p = cols.start[k]; p < cols.start[k + 1]; ++p) {
        const double shift = cols.value[p] * delta;
        score[cols.row[p]] += shift;
        residual[cols.row[p]] += shift;
      }
    }
    for (std::size_t f = 0; f < dim; ++f) {
      std::fill(factor_sum.begin(), factor_sum.end(), 0.0);
      for (std::size_t k : active_list) {
        const double v = params.embedding(k, f);
        for (std::size_t p = cols.start[k]; p < cols.start[k + 1]; ++p)
          factor_sum[cols.row[p]] += cols.value[p] * v;
      }
      const GroupPrior& group = factor_groups[f];
      for (std::size_t k : active_list) {
        double& v = params.embedding(k, f);
        double sum_hh = 0.0, sum_he = 0.0;
        for (std::size_t p = cols.start[k]; p < cols.start[k + 1]; ++p) {
          const double x = cols.value[p];
          const double h = x * (factor_sum[cols.row[p]] - x * v);
          sum_hh += h * h;
          sum_he += h * residual[cols.row[p]];
        }
        const double delta = draw(v, group.mean, group.precision, sum_hh, sum_he);
        for (std::size_t p = cols.start[k]; p < cols.start[k + 1]; ++p) {
          const std::size_t i = cols.row[p];
          const double x = cols.value[p];
          // h was computed with the previous v; it does not depend on v itself.
          const double h = x * (factor_sum[i] - x * (v - delta));
          score[i] += h * delta;
          residual[i] += h * delta;
          factor_sum[i] += x * delta;
        }
      }
    }

    // (3) Hyperparameters per group.
    values.clear();
    for (std::size_t k : active_list) values.push_back(params.w[k]);
    resample_group(bias_group, values, priors, rng);
    for (std::size_t f = 0; f < dim; ++f) {
      values.clear();
      for (std::size_t k : active_list) values.push_back(params.embedding(k, f));
      resample_group(factor_groups[f], values, priors, rng);
    }

    params.validate();

    if (test != nullptr)
      for (std::size_t i = 0; i < test->size(); ++i)
        test_current[i] = predict_proba(params, test->row(i), Link::probit);

    if (iter > burn_in) {
      ++kept;
      param_sum.mu += params.mu;
      for (std::size_t k = 0; k < params.w.size(); ++k) param_sum.w[k] += params.w[k];
      for (std::size_t k = 0; k < params.v.size(); ++k) param_sum.v[k] += params.v[k];
      for (std::size_t i = 0; i < test_sum.size(); ++i) test_sum[i] += test_current[i];
    }

    if (on_epoch) {
      std::vector<double> train_pred(n_rows);
      for (std::size_t i = 0; i < n_rows; ++i) train_pred[i] = inverse_link(score[i], Link::probit);
      std::vector<double> test_pred = test_current;
      if (kept > 0)
        for (std::size_t i = 0; i < test_pred.size(); ++i) test_pred[i] = test_sum[i] / double(kept);
      on_epoch(epoch_stats(iter, train_pred, train.labels(), test, test_pred));
    }
  }

  GibbsOutput out;
  const double scale = 1.0 / static_cast<double>(kept);
  out.params = FMParams(n_features, dim);
  out.params.mu = param_sum.mu * scale;
  for (std::size_t k = 0; k < param_sum.w.size(); ++k) out.params.w[k] = param_sum.w[k] * scale;
  for (std::size_t k = 0; k < param_sum.v.size(); ++k) out.params.v[k] = param_sum.v[k] * scale;
  out.test_predictions.resize(test_sum.size());
  for (std::size_t i = 0; i < test_sum.size(); ++i) out.test_predictions[i] = test_sum[i] * scale;
  return out;
}

}  // namespace ktm
