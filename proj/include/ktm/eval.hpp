#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ktm/encoder.hpp"
#include "ktm/fm_model.hpp"
#include "ktm/trainers.hpp"

namespace ktm {

/// Fraction of rows where (p >= 0.5) matches the label.
double accuracy(std::span<const double> predictions, std::span<const int> labels);

/// Mann-Whitney AUC with ties credited 1/2, in O(S log S). Empty when the
/// labels hold a single class.
std::optional<double> auc(std::span<const double> predictions, std::span<const int> labels);

struct Metrics {
  double acc = 0.0;
  std::optional<double> auc;
  double nll = 0.0;
};

Metrics evaluate(std::span<const double> predictions, std::span<const int> labels);

enum class SplitMode { by_row, by_student };

SplitMode parse_split_mode(const std::string& name);

struct FoldSpec {
  std::size_t k = 5;
  std::uint64_t seed = 42;
  SplitMode mode = SplitMode::by_row;
};

struct Fold {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

/// Random k-way partition of rows (by_row) or of students (by_student, where
/// a fold tests every row of its students). Deterministic given the seed.
std::vector<Fold> make_folds(std::size_t rows, const FoldSpec& spec,
                             std::span<const std::size_t> student_of_row = {});

struct GridCell {
  std::string preset;
  std::size_t dim = 0;
};

struct CVOptions {
  FoldSpec folds;
  /// `dim` is taken from each grid cell; the seed is re-derived per fold.
  TrainConfig train;
  /// logit trains by MAP gradient descent, probit by Gibbs sampling.
  Link link = Link::probit;
  /// Gibbs only: score the test fold with the running mean of per-iteration
  /// predictions rather than with the averaged parameters.
  bool averaged_predictions = true;
  HyperPriors priors;
  std::size_t threads = 1;
};

struct CVReport {
  std::string preset;
  std::size_t dim = 0;
  std::vector<Metrics> folds;
  /// Arithmetic means; AUC averages the folds where it is defined.
  Metrics mean;
};

/// Cross-validates every grid cell. Counters are computed over the whole log
/// before splitting. Reports come back sorted by mean AUC, descending.
std::vector<CVReport> run_cv(const Dataset& data, std::span<const GridCell> grid, const CVOptions& options);

/// `preset,d,fold,acc,auc,nll`, one line per fold; missing AUC is "NA".
void write_fold_csv(std::ostream& out, const std::vector<CVReport>& reports);
/// `preset,d,acc,auc,nll`, one line per grid cell.
void write_summary_csv(std::ostream& out, const std::vector<CVReport>& reports);
void print_table(std::ostream& out, const std::vector<CVReport>& reports);

}  // namespace ktm
