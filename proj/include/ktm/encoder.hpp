#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ktm/sparse.hpp"

namespace ktm {

/// Binary item x skill matrix. Items may involve no skill at all.
class QMatrix {
 public:
  QMatrix() = default;
  /// `cells` is row-major items x skills; throws on non-binary cells or a
  /// size mismatch.
  QMatrix(std::size_t items, std::size_t skills, std::vector<std::uint8_t> cells);

  /// items x 0 matrix, for logs without skill information.
  static QMatrix without_skills(std::size_t items);

  std::size_t item_count() const { return items_; }
  std::size_t skill_count() const { return skills_; }
  bool involves(std::size_t item, std::size_t skill) const {
    return cells_.at(item * skills_ + skill) != 0;
  }
  /// KC(item), ascending.
  std::span<const std::size_t> skills_of(std::size_t item) const;

  friend bool operator==(const QMatrix&, const QMatrix&) = default;

 private:
  std::size_t items_ = 0;
  std::size_t skills_ = 0;
  std::vector<std::uint8_t> cells_;
  std::vector<std::size_t> kc_offsets_;
  std::vector<std::size_t> kc_skills_;
};

/// CSV without header: one row per item, one 0/1 column per skill.
QMatrix parse_qmatrix(std::istream& in);
QMatrix load_qmatrix(const std::filesystem::path& path);
void write_qmatrix(std::ostream& out, const QMatrix& q);

struct Triplet {
  std::size_t student = 0;
  std::size_t item = 0;
  int outcome = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Per (student, skill) tallies of prior correct and incorrect attempts.
class CounterState {
 public:
  CounterState() = default;
  CounterState(std::size_t students, std::size_t skills);

  std::size_t students() const { return students_; }
  std::size_t skills() const { return skills_; }
  std::uint32_t wins(std::size_t student, std::size_t skill) const { return wins_[cell(student, skill)]; }
  std::uint32_t fails(std::size_t student, std::size_t skill) const { return fails_[cell(student, skill)]; }
  std::uint32_t attempts(std::size_t student, std::size_t skill) const {
    return wins(student, skill) + fails(student, skill);
  }

  /// Records the outcome of `t` on every skill of KC(t.item).
  void apply(const Triplet& t, const QMatrix& q);

  friend bool operator==(const CounterState&, const CounterState&) = default;

 private:
  std::size_t cell(std::size_t student, std::size_t skill) const;

  std::size_t students_ = 0;
  std::size_t skills_ = 0;
  std::vector<std::uint32_t> wins_;
  std::vector<std::uint32_t> fails_;
};

CounterState update_counters(CounterState state, const Triplet& t, const QMatrix& q);

struct ExtraColumn {
  std::string name;
  std::size_t cardinality = 0;

  friend bool operator==(const ExtraColumn&, const ExtraColumn&) = default;
};

/// Categorical side information, one dense category id per (row, column).
struct ExtraTable {
  std::vector<ExtraColumn> columns;
  std::vector<std::size_t> values;  // row-major, rows x columns.size()

  std::size_t row_count() const { return columns.empty() ? 0 : values.size() / columns.size(); }
  std::span<const std::size_t> row(std::size_t i) const {
    return std::span<const std::size_t>(values).subspan(i * columns.size(), columns.size());
  }
  ExtraTable subset(std::span<const std::size_t> indices) const;
};

/// Which feature blocks to emit. Block order in the feature space is fixed:
/// users, items, skills, attempts, wins, fails, then one block per extra
/// column.
struct EncodingConfig {
  bool use_users = false;
  bool use_items = false;
  bool use_skills = false;
  bool use_attempts = false;
  bool use_wins = false;
  bool use_fails = false;
  bool use_extras = false;
  std::vector<ExtraColumn> extra_columns;

  /// Throws std::invalid_argument when no block is enabled or when attempts
  /// are combined with wins/fails.
  void validate() const;

  FeatureSpace feature_space(std::size_t students, std::size_t items, std::size_t skills) const;

  /// Short block code, e.g. "uiswf" or "iswfe".
  std::string code() const;

  friend bool operator==(const EncodingConfig&, const EncodingConfig&) = default;
};

/// One-hot activations of each extra column inside its own block.
std::vector<Entry> encode_extra(std::span<const std::size_t> values, const EncodingConfig& config,
                                const FeatureSpace& space);

/// Encodes a chronological log. Each row reflects the counters *before* its
/// own outcome; counter blocks only carry the skills of the row's item.
DesignMatrix encode_dataset(std::span<const Triplet> triplets, const QMatrix& q,
                            const EncodingConfig& config, std::size_t students,
                            const ExtraTable& extras = {});

/// A log ready for encoding.
struct Dataset {
  std::vector<Triplet> triplets;
  ExtraTable extras;
  QMatrix qmatrix;
  std::size_t students = 0;

  std::size_t items() const { return qmatrix.item_count(); }
  std::vector<std::size_t> student_of_row() const;
};

}  // namespace ktm
