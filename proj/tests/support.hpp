#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ktm/encoder.hpp"
#include "ktm/sparse.hpp"

namespace ktm::test {

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("ktm-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// The worked example: 2 students, 3 items, 3 skills. Item 1 has no skill,
// item 2 has skills 1 and 2, item 3 has skills 2 and 3 (1-based in the text,
// 0-based here).
inline QMatrix example_qmatrix() {
  return QMatrix(3, 3, {0, 0, 0, 1, 1, 0, 0, 1, 1});
}

inline std::vector<Triplet> example_triplets() {
  return {{1, 1, 1}, {1, 1, 0}, {1, 1, 1}, {1, 2, 0}, {1, 2, 1}, {0, 1, 1}, {0, 0, 0}};
}

inline const char* example_csv() {
  return "user_id,item_id,correct\n2,2,1\n2,2,0\n2,2,1\n2,3,0\n2,3,1\n1,2,1\n1,1,0\n";
}

inline const char* example_qmatrix_csv() { return "0,0,0\n1,1,0\n0,1,1\n"; }

/// Random row over `width` columns with `nnz` distinct indices and values in
/// [-2, 2] (some exactly 1, as in one-hot blocks).
template <typename Engine>
SparseRow random_row(Engine& rng, std::size_t width, std::size_t nnz) {
  std::vector<std::size_t> cols(width);
  for (std::size_t i = 0; i < width; ++i) cols[i] = i;
  std::shuffle(cols.begin(), cols.end(), rng);
  cols.resize(std::min(nnz, width));
  std::sort(cols.begin(), cols.end());
  std::uniform_real_distribution<double> value(-2.0, 2.0);
  std::bernoulli_distribution one(0.3);
  std::vector<Entry> entries;
  for (std::size_t c : cols) {
    double x = one(rng) ? 1.0 : value(rng);
    if (x == 0.0) x = 0.5;
    entries.push_back({c, x});
  }
  return SparseRow(std::move(entries));
}

}  // namespace ktm::test
