#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ktm {

/// Column layout of the feature vector: an ordered list of named blocks,
/// each occupying a contiguous range of columns.
class FeatureSpace {
 public:
  struct Block {
    std::string name;
    std::size_t width = 0;
    std::size_t offset = 0;
  };

  FeatureSpace() = default;

  /// Throws std::invalid_argument on duplicate names or zero widths.
  explicit FeatureSpace(const std::vector<std::pair<std::string, std::size_t>>& blocks);

  std::size_t total_width() const { return total_width_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  bool has_block(std::string_view name) const;
  const Block& block(std::string_view name) const;

  /// offset(block) + local_id.
  std::size_t index(std::string_view block, std::size_t local_id) const;

  /// Inverse of index(): the block holding `column` and the local id in it.
  std::pair<const Block*, std::size_t> locate(std::size_t column) const;

  friend bool operator==(const FeatureSpace& a, const FeatureSpace& b);

 private:
  std::vector<Block> blocks_;
  std::size_t total_width_ = 0;
};

bool operator==(const FeatureSpace::Block& a, const FeatureSpace::Block& b);

std::size_t feature_index(const FeatureSpace& space, std::string_view block,
                          std::size_t local_id);

struct Entry {
  std::size_t index = 0;
  double value = 0.0;

  friend bool operator==(const Entry&, const Entry&) = default;
};

/// Nonzero (index, value) pairs of one observation, indices strictly
/// increasing. Zero values are dropped on construction.
class SparseRow {
 public:
  SparseRow() = default;

  /// Throws std::invalid_argument if indices are not strictly increasing or a
  /// value is not finite.
  explicit SparseRow(std::vector<Entry> entries);

  static SparseRow from_dense(std::span<const double> dense);
  std::vector<double> to_dense(std::size_t width) const;

  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  /// One past the largest stored index (0 for an empty row).
  std::size_t extent() const { return entries_.empty() ? 0 : entries_.back().index + 1; }

  friend bool operator==(const SparseRow&, const SparseRow&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Sum of value * dense[index] over stored entries.
double sparse_dot(const SparseRow& row, std::span<const double> dense);

/// Rows in chronological order with their binary labels.
class DesignMatrix {
 public:
  DesignMatrix() = default;
  DesignMatrix(FeatureSpace space, std::vector<SparseRow> rows, std::vector<int> labels);

  const FeatureSpace& space() const { return space_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t width() const { return space_.total_width(); }
  const std::vector<SparseRow>& rows() const { return rows_; }
  const std::vector<int>& labels() const { return labels_; }
  const SparseRow& row(std::size_t i) const { return rows_[i]; }
  int label(std::size_t i) const { return labels_[i]; }

  /// Rows picked by `indices`, in that order, over the same space.
  DesignMatrix subset(std::span<const std::size_t> indices) const;

  /// Columns with at least one nonzero entry.
  std::vector<bool> active_columns() const;

 private:
  FeatureSpace space_;
  std::vector<SparseRow> rows_;
  std::vector<int> labels_;
};

/// Text format: a `#N <width>` header, then `label idx:value ...` per row.
void write_design_matrix(std::ostream& out, const DesignMatrix& data);

/// Reads the text format back. The result has a single block named
/// "features" spanning all columns.
DesignMatrix read_design_matrix(std::istream& in);

}  // namespace ktm
