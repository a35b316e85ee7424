#include "ktm/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "ktm/format.hpp"

namespace ktm {

FeatureSpace::FeatureSpace(const std::vector<std::pair<std::string, std::size_t>>& blocks) {
  std::unordered_set<std::string> seen;
  for (const auto& [name, width] : blocks) {
    if (width == 0) throw std::invalid_argument("feature block '" + name + "' has zero width");
    if (!seen.insert(name).second)
      throw std::invalid_argument("duplicate feature block '" + name + "'");
    blocks_.push_back({name, width, total_width_});
    total_width_ += width;
  }
}

bool FeatureSpace::has_block(std::string_view name) const {
  return std::any_of(blocks_.begin(), blocks_.end(),
                     [&](const Block& b) { return b.name == name; });
}

const FeatureSpace::Block& FeatureSpace::block(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw std::invalid_argument("unknown feature block '" + std::string(name) + "'");
}

std::size_t FeatureSpace::index(std::string_view name, std::size_t local_id) const {
  const Block& b = block(name);
  if (local_id >= b.width)
    throw std::out_of_range("id " + std::to_string(local_id) + " out of range for block '" +
                            b.name + "' of width " + std::to_string(b.width));
  return b.offset + local_id;
}

std::pair<const FeatureSpace::Block*, std::size_t> FeatureSpace::locate(std::size_t column) const {
  if (column >= total_width_) throw std::out_of_range("column out of range");
  auto it = std::upper_bound(blocks_.begin(), blocks_.end(), column,
                             [](std::size_t c, const Block& b) { return c < b.offset; });
  const Block& b = *std::prev(it);
  return {&b, column - b.offset};
}

bool operator==(const FeatureSpace::Block& a, const FeatureSpace::Block& b) {
  return a.name == b.name && a.width == b.width && a.offset == b.offset;
}

bool operator==(const FeatureSpace& a, const FeatureSpace& b) {
  return a.total_width_ == b.total_width_ && a.blocks_ == b.blocks_;
}

std::size_t feature_index(const FeatureSpace& space, std::string_view block,
                          std::size_t local_id) {
  return space.index(block, local_id);
}

SparseRow::SparseRow(std::vector<Entry> entries) {
  entries_.reserve(entries.size());
  for (const Entry& e : entries) {
    if (!std::isfinite(e.value))
      throw std::invalid_argument("non-finite value at column " + std::to_string(e.index));
    if (!entries_.empty() && e.index <= entries_.back().index)
      throw std::invalid_argument("sparse row indices must be strictly increasing");
    if (e.value != 0.0) entries_.push_back(e);
  }
}

SparseRow SparseRow::from_dense(std::span<const double> dense) {
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense[i] != 0.0) entries.push_back({i, dense[i]});
  return SparseRow(std::move(entries));
}

std::vector<double> SparseRow::to_dense(std::size_t width) const {
  if (extent() > width) throw std::out_of_range("row does not fit in width " + std::to_string(width));
  std::vector<double> dense(width, 0.0);
  for (const Entry& e : entries_) dense[e.index] = e.value;
  return dense;
}

double sparse_dot(const SparseRow& row, std::span<const double> dense) {
  if (row.extent() > dense.size())
    throw std::invalid_argument("sparse_dot: row index beyond dense length " +
                                std::to_string(dense.size()));
  double sum = 0.0;
  for (const Entry& e : row.entries()) sum += e.value * dense[e.index];
  return sum;
}

DesignMatrix::DesignMatrix(FeatureSpace space, std::vector<SparseRow> rows, std::vector<int> labels)
    : space_(std::move(space)), rows_(std::move(rows)), labels_(std::move(labels)) {
  if (rows_.size() != labels_.size())
    throw std::invalid_argument("design matrix: " + std::to_string(rows_.size()) + " rows but " +
                                std::to_string(labels_.size()) + " labels");
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (labels_[i] != 0 && labels_[i] != 1)
      throw std::invalid_argument("design matrix: label of row " + std::to_string(i) +
                                  " is not binary");
    if (rows_[i].extent() > space_.total_width())
      throw std::invalid_argument("design matrix: row " + std::to_string(i) +
                                  " has an index beyond the feature space");
  }
}

DesignMatrix DesignMatrix::subset(std::span<const std::size_t> indices) const {
  std::vector<SparseRow> rows;
  std::vector<int> labels;
  rows.reserve(indices.size());
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    rows.push_back(rows_.at(i));
    labels.push_back(labels_[i]);
  }
  return DesignMatrix(space_, std::move(rows), std::move(labels));
}

std::vector<bool> DesignMatrix::active_columns() const {
  std::vector<bool> active(width(), false);
  for (const auto& r : rows_)
    for (const Entry& e : r.entries()) active[e.index] = true;
  return active;
}

void write_design_matrix(std::ostream& out, const DesignMatrix& data) {
  out << "#N " << data.width() << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.label(i);
    for (const Entry& e : data.row(i).entries())
      out << ' ' << e.index << ':' << format_double(e.value);
    out << '\n';
  }
}

DesignMatrix read_design_matrix(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#N ", 0) != 0)
    throw std::runtime_error("design matrix: missing '#N <width>' header");
  const auto width = parse_integer<std::size_t>(std::string_view(line).substr(3));
  if (width == 0) throw std::runtime_error("design matrix: zero width");

  std::vector<SparseRow> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream tokens(line);
    std::string tok;
    tokens >> tok;
    try {
      labels.push_back(parse_integer<int>(tok));
      std::vector<Entry> entries;
      while (tokens >> tok) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("expected idx:value, got '" + tok + "'");
        entries.push_back({parse_integer<std::size_t>(std::string_view(tok).substr(0, colon)),
                           parse_double(std::string_view(tok).substr(colon + 1))});
      }
      rows.emplace_back(std::move(entries));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("design matrix line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return DesignMatrix(FeatureSpace({{"features", width}}), std::move(rows), std::move(labels));
}

}  // namespace ktm
