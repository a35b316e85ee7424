#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ktm/fm_model.hpp"
#include "ktm/rng.hpp"
#include "ktm/sparse.hpp"

namespace ktm {

struct TrainConfig {
  std::size_t dim = 0;
  /// SGD epochs, or Gibbs iterations.
  std::size_t epochs = 100;
  double learning_rate = 0.01;
  double l2 = 0.01;
  std::uint64_t seed = 42;
  double init_std = 0.01;
  /// Gibbs burn-in; 20% of the iterations when unset.
  std::optional<std::size_t> burn_in;
  /// MAP only: plain gradient descent on the whole objective instead of SGD.
  bool full_batch = false;

  void validate() const;
  std::size_t effective_burn_in() const;
};

/// Hierarchical priors of the Gibbs sampler. Every bias w_k and, per factor f,
/// every v_kf is N(mean_g, 1/precision_g) with mean_g ~ N(mean_mean,
/// 1/mean_precision) and precision_g ~ Gamma(precision_shape, precision_rate).
struct HyperPriors {
  double mean_mean = 0.0;
  double mean_precision = 1.0;
  double precision_shape = 1.0;
  double precision_rate = 1.0;
  /// Fixed N(0, 1/global_bias_precision) prior on the global bias.
  double global_bias_precision = 1.0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_nll = 0.0;
  std::optional<double> test_acc;
  std::optional<double> test_auc;
  std::optional<double> test_nll;
};

using EpochCallback = std::function<void(const EpochStats&)>;

struct GibbsOutput {
  /// Mean of the post-burn-in parameter draws.
  FMParams params;
  /// Mean of the post-burn-in test probabilities (empty without a test set).
  std::vector<double> test_predictions;
};

inline constexpr double kNllClamp = 1e-12;

/// Mean negative log-likelihood; probabilities are clamped to
/// [1e-12, 1 - 1e-12].
double nll(std::span<const double> predictions, std::span<const int> labels);

/// mu = 0, w = 0, V ~ N(0, init_std^2) drawn from the seed's init stream.
FMParams init_params(const TrainConfig& config, std::size_t features);

/// Gradient of the single-row logit loss
///   -[y log p + (1 - y) log(1 - p)] + l2/2 * sum_{k in row} (w_k^2 + |v_k|^2).
/// Entries of features absent from the row are zero.
FMParams logit_loss_gradient(const FMParams& params, const SparseRow& x, int label, double l2);

/// Mean logit NLL over `data` plus l2/2 * (|w|^2 + |V|^2): the full-batch
/// objective.
double regularized_objective(const FMParams& params, const DesignMatrix& data, double l2);

/// MAP training under the logit link. Features absent from `data` end at
/// zero. Throws std::runtime_error when the loss becomes non-finite.
FMParams train_map_logit(const DesignMatrix& data, const TrainConfig& config,
                         const DesignMatrix* test = nullptr, const EpochCallback& on_epoch = {});

/// Gibbs sampling of a probit FM with truncated-normal data augmentation.
/// Features absent from `train` are never sampled and stay at zero.
GibbsOutput train_gibbs_probit(const DesignMatrix& train, const DesignMatrix* test,
                               const TrainConfig& config, const HyperPriors& priors = {},
                               const EpochCallback& on_epoch = {});

/// Draw from N(mean, 1) restricted to (0, inf) when positive, else (-inf, 0).
double sample_truncated_normal(double mean, bool positive, Rng& rng);

}  // namespace ktm
