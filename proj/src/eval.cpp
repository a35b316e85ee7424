#include "ktm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "ktm/format.hpp"
#include "ktm/rng.hpp"

namespace ktm {

namespace {

void check_lengths(std::span<const double> predictions, std::span<const int> labels, const char* what) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(labels.size()) + " labels");
}

}  // namespace

double accuracy(std::span<const double> predictions, std::span<const int> labels) {
  check_lengths(predictions, labels, "accuracy");
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    hits += (predictions[i] >= 0.5 ? 1 : 0) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::optional<double> auc(std::span<const double> predictions, std::span<const int> labels) {
  check_lengths(predictions, labels, "auc");
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });

  // Twice the credited pair count, kept integral so the result is exact.
  std::uint64_t credit2 = 0, negatives_below = 0, positives = 0, negatives = 0;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    std::uint64_t pos = 0, neg = 0;
    while (hi < order.size() && predictions[order[hi]] == predictions[order[lo]]) {
      (labels[order[hi]] == 1 ? pos : neg) += 1;
      ++hi;
    }
    credit2 += 2 * pos * negatives_below + pos * neg;
    negatives_below += neg;
    positives += pos;
    negatives += neg;
    lo = hi;
  }
  if (positives == 0 || negatives == 0) return std::nullopt;
  return static_cast<double>(credit2) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

Metrics evaluate(std::span<const double> predictions, std::span<const int> labels) {
  return {accuracy(predictions, labels), auc(predictions, labels), nll(predictions, labels)};
}

SplitMode parse_split_mode(const std::string& name) {
  if (name == "row" || name == "by_row") return SplitMode::by_row;
  if (name == "student" || name == "by_student") return SplitMode::by_student;
  throw std::invalid_argument("unknown split mode '" + name + "' (expected row or student)");
}

std::vector<Fold> make_folds(std::size_t rows, const FoldSpec& spec,
                             std::span<const std::size_t> student_of_row) {
  if (spec.k < 2) throw std::invalid_argument("need at least 2 folds");
  Rng rng = make_rng(spec.seed, RngStream::folds);
  std::vector<std::size_t> fold_of_row(rows);

  if (spec.mode == SplitMode::by_row) {
    if (rows < spec.k) throw std::invalid_argument("fewer rows than folds");
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t pos = 0; pos < rows; ++pos) fold_of_row[perm[pos]] = pos % spec.k;
  } else {
    if (student_of_row.size() != rows)
      throw std::invalid_argument("by_student folds need the student of every row");
    std::vector<std::size_t> students(student_of_row.begin(), student_of_row.end());
    std::sort(students.begin(), students.end());
    students.erase(std::unique(students.begin(), students.end()), students.end());
    if (students.size() < spec.k)
      throw std::invalid_argument("only " + std::to_string(students.size()) + " students for " +
                                  std::to_string(spec.k) + " folds");
    std::vector<std::size_t> fold_of_student(students.back() + 1);
    std::shuffle(students.begin(), students.end(), rng);
    for (std::size_t pos = 0; pos < students.size(); ++pos) fold_of_student[students[pos]] = pos % spec.k;
    for (std::size_t r = 0; r < rows; ++r) fold_of_row[r] = fold_of_student[student_of_row[r]];
  }

  std::vector<Fold> folds(spec.k);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t f = 0; f < spec.k; ++f) (f == fold_of_row[r] ? folds[f].test : folds[f].train).push_back(r);
  return folds;
}

namespace {

struct CellData {
  Preset preset;
  DesignMatrix design;
};

Metrics run_fold(const DesignMatrix& design, const Fold& fold, std::size_t fold_index,
                 std::size_t dim, const CVOptions& options) {
  TrainConfig config = options.train;
  config.dim = dim;
  config.seed = make_rng(options.train.seed, RngStream::folds, fold_index + 1)();

  const DesignMatrix train = design.subset(fold.train);
  const DesignMatrix test = design.subset(fold.test);
  std::vector<double> predictions;
  if (options.link == Link::logit) {
    predictions = predict_all(train_map_logit(train, config), test, Link::logit);
  } else {
    GibbsOutput out = train_gibbs_probit(train, &test, config, options.priors);
    predictions = options.averaged_predictions ? std::move(out.test_predictions)
                                               : predict_all(out.params, test, Link::probit);
  }
  return evaluate(predictions, test.labels());
}

Metrics average(const std::vector<Metrics>& folds, const std::string& label) {
  Metrics mean;
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (const auto& m : folds) {
    mean.acc += m.acc;
    mean.nll += m.nll;
    if (m.auc) {
      auc_sum += *m.auc;
      ++auc_count;
    }
  }
  mean.acc /= static_cast<double>(folds.size());
  mean.nll /= static_cast<double>(folds.size());
  if (auc_count > 0) mean.auc = auc_sum / static_cast<double>(auc_count);
  if (auc_count < folds.size())
    std::cerr << "warning: " << label << ": AUC undefined on " << folds.size() - auc_count
              << " fold(s) with single-class test labels; averaging the rest\n";
  return mean;
}

std::string format_metric(const std::optional<double>& x) { return x ? format_double(*x) : "NA"; }

}  // namespace

std::vector<CVReport> run_cv(const Dataset& data, std::span<const GridCell> grid, const CVOptions& options) {
  if (grid.empty()) throw std::invalid_argument("empty preset grid");
  options.train.validate();

  std::vector<CellData> cells;
  cells.reserve(grid.size());
  for (const auto& cell : grid) {
    Preset preset = preset_encoding(cell.preset);
    check_dim(preset, cell.dim);
    if (preset.config.use_extras) preset.config.extra_columns = data.extras.columns;
    DesignMatrix design = encode_dataset(data.triplets, data.qmatrix, preset.config, data.students, data.extras);
    cells.push_back({std::move(preset), std::move(design)});
  }

  const auto students = data.student_of_row();
  const std::vector<Fold> folds = make_folds(data.triplets.size(), options.folds, students);

  const std::size_t jobs = cells.size() * folds.size();
  std::vector<Metrics> results(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t job; (job = next.fetch_add(1)) < jobs;) {
      const std::size_t c = job / folds.size(), f = job % folds.size();
      try {
        results[job] = run_fold(cells[c].design, folds[f], f, grid[c].dim, options);
      } catch (...) {
        errors[job] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<CVReport> reports;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CVReport report{cells[c].preset.name, grid[c].dim, {}, {}};
    report.folds.assign(results.begin() + static_cast<std::ptrdiff_t>(c * folds.size()),
                        results.begin() + static_cast<std::ptrdiff_t>((c + 1) * folds.size()));
    report.mean = average(report.folds, report.preset + " d=" + std::to_string(report.dim));
    reports.push_back(std::move(report));
  }
  std::stable_sort(reports.begin(), reports.end(), [](const CVReport& a, const CVReport& b) {
    const double x = a.mean.auc.value_or(-1.0), y = b.mean.auc.value_or(-1.0);
    return x > y;
  });
  return reports;
}

void write_fold_csv(std::ostream& out, const std::vector<CVReport>& reports) {
  out << "preset,d,fold,acc,auc,nll\n";
  for (const auto& r : reports)
    for (std::size_t f = 0; f < r.folds.size(); ++f)
      out << r.preset << ',' << r.dim << ',' << f << ',' << format_double(r.folds[f].acc) << ','
          << format_metric(r.folds[f].auc) << ',' << format_double(r.folds[f].nll) << '\n';
}

void write_summary_csv(std::ostream& out, const std::vector<CVReport>& reports) {
  out << "preset,d,acc,auc,nll\n";
  for (const auto& r : reports)
    out << r.preset << ',' << r.dim << ',' << format_double(r.mean.acc) << ',' << format_metric(r.mean.auc)
        << ',' << format_double(r.mean.nll) << '\n';
}

void print_table(std::ostream& out, const std::vector<CVReport>& reports) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %4s %7s %7s %7s\n", "model", "dim", "ACC", "AUC", "NLL");
  out << line;
  for (const auto& r : reports) {
    char auc_text[16] = "NA";
    if (r.mean.auc) std::snprintf(auc_text, sizeof(auc_text), "%.3f", *r.mean.auc);
    std::snprintf(line, sizeof(line), "%-16s %4zu %7.3f %7s %7.3f\n", r.preset.c_str(), r.dim, r.mean.acc,
                  auc_text, r.mean.nll);
    out << line;
  }
}

}  // namespace ktm
