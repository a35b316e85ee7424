#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ktm/encoder.hpp"
#include "ktm/sparse.hpp"

namespace ktm {

/// Factorization machine parameters: global bias, one bias per feature and,
/// when dim > 0, one embedding row per feature (row-major, features x dim).
struct FMParams {
  double mu = 0.0;
  std::vector<double> w;
  std::vector<double> v;
  std::size_t dim = 0;

  FMParams() = default;
  FMParams(std::size_t features, std::size_t dim);

  std::size_t feature_count() const { return w.size(); }
  double& embedding(std::size_t k, std::size_t f) { return v[k * dim + f]; }
  double embedding(std::size_t k, std::size_t f) const { return v[k * dim + f]; }
  std::span<const double> embedding_row(std::size_t k) const {
    return std::span<const double>(v).subspan(k * dim, dim);
  }

  /// Throws std::invalid_argument on shape mismatch or non-finite entries.
  void validate() const;

  friend bool operator==(const FMParams&, const FMParams&) = default;
};

enum class Link { logit, probit };

Link parse_link(std::string_view name);
std::string to_string(Link link);

/// mu + <w, x> + sum_{k<l} x_k x_l <v_k, v_l>, evaluated in O(nnz * dim).
double raw_score(const FMParams& params, const SparseRow& x);

/// Logistic sigmoid or standard normal CDF, saturating one ulp inside (0, 1).
double inverse_link(double z, Link link);

double predict_proba(const FMParams& params, const SparseRow& x, Link link);
std::vector<double> predict_all(const FMParams& params, const DesignMatrix& data, Link link);

/// Dimension a preset admits.
enum class DimRule { zero, positive, any };

struct Preset {
  std::string name;
  EncodingConfig config;
  DimRule dim_rule = DimRule::any;
};

/// Named encodings: IRT, MIRTb, AFM, PFA, KTM-iswf, KTM-iswfe. Any block code
/// built from the letters u, i, s, a, w, f, e (e.g. "uis") is accepted too,
/// with an "ktm-" prefix optional. Case-insensitive.
Preset preset_encoding(std::string_view name);

/// Throws std::invalid_argument if `dim` violates the preset's rule.
void check_dim(const Preset& preset, std::size_t dim);

struct EmbeddingRow {
  std::string block;
  std::size_t local_id = 0;
  double bias = 0.0;
  std::vector<double> embedding;
};

/// One row per feature, labelled by block and local id.
std::vector<EmbeddingRow> export_embeddings(const FMParams& params, const FeatureSpace& space);

/// CSV with header `block,local_id,bias,v0,...,v{d-1}`; values are written
/// in shortest round-trip form.
void write_embeddings_csv(std::ostream& out, const std::vector<EmbeddingRow>& rows, std::size_t dim);
std::vector<EmbeddingRow> read_embeddings_csv(std::istream& in);

/// Rebuilds w and V from an export. The global bias is not part of the
/// export and is passed separately.
FMParams params_from_embeddings(const std::vector<EmbeddingRow>& rows, const FeatureSpace& space,
                                std::size_t dim, double mu = 0.0);

}  // namespace ktm
