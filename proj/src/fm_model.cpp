#include "ktm/fm_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "ktm/format.hpp"

namespace ktm {

FMParams::FMParams(std::size_t features, std::size_t dim_)
    : w(features, 0.0), v(features * dim_, 0.0), dim(dim_) {}

void FMParams::validate() const {
  if (v.size() != w.size() * dim)
    throw std::invalid_argument("FM parameters: embedding matrix has wrong shape");
  if (!std::isfinite(mu)) throw std::invalid_argument("FM parameters: non-finite global bias");
  const auto finite = [](double x) { return std::isfinite(x); };
  if (!std::all_of(w.begin(), w.end(), finite) || !std::all_of(v.begin(), v.end(), finite))
    throw std::invalid_argument("FM parameters: non-finite entries");
}

Link parse_link(std::string_view name) {
  if (name == "logit") return Link::logit;
  if (name == "probit") return Link::probit;
  throw std::invalid_argument("unknown link '" + std::string(name) + "' (expected logit or probit)");
}

std::string to_string(Link link) { return link == Link::logit ? "logit" : "probit"; }

double raw_score(const FMParams& params, const SparseRow& x) {
  const std::size_t n = params.feature_count();
  if (x.extent() > n)
    throw std::out_of_range("raw_score: row index beyond the " + std::to_string(n) + " model features");
  double score = params.mu;
  for (const Entry& e : x.entries()) score += params.w[e.index] * e.value;
  // Pairwise term per factor: ((sum x v)^2 - sum (x v)^2) / 2.
  for (std::size_t f = 0; f < params.dim; ++f) {
    double sum = 0.0, sum_sq = 0.0;
    for (const Entry& e : x.entries()) {
      const double t = e.value * params.embedding(e.index, f);
      sum += t;
      sum_sq += t * t;
    }
    score += 0.5 * (sum * sum - sum_sq);
  }
  return score;
}

double inverse_link(double z, Link link) {
  double p;
  if (link == Link::logit) {
    if (z >= 0) {
      p = 1.0 / (1.0 + std::exp(-z));
    } else {
      const double e = std::exp(z);
      p = e / (1.0 + e);
    }
  } else {
    p = 0.5 * std::erfc(-z / std::sqrt(2.0));
  }
  return std::clamp(p, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
}

double predict_proba(const FMParams& params, const SparseRow& x, Link link) {
  return inverse_link(raw_score(params, x), link);
}

std::vector<double> predict_all(const FMParams& params, const DesignMatrix& data, Link link) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& row : data.rows()) out.push_back(predict_proba(params, row, link));
  return out;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

EncodingConfig config_from_code(std::string_view code) {
  EncodingConfig c;
  for (char ch : code) {
    bool* flag = nullptr;
    switch (ch) {
      case 'u': flag = &c.use_users; break;
      case 'i': flag = &c.use_items; break;
      case 's': flag = &c.use_skills; break;
      case 'a': flag = &c.use_attempts; break;
      case 'w': flag = &c.use_wins; break;
      case 'f': flag = &c.use_fails; break;
      case 'e': flag = &c.use_extras; break;
      default: throw std::invalid_argument("unknown preset '" + std::string(code) + "'");
    }
    if (*flag) throw std::invalid_argument("repeated block letter in preset '" + std::string(code) + "'");
    *flag = true;
  }
  c.validate();
  return c;
}

}  // namespace

Preset preset_encoding(std::string_view name) {
  const std::string key = lower(name);
  if (key.empty()) throw std::invalid_argument("empty preset name");
  if (key == "irt") return {"IRT", config_from_code("ui"), DimRule::zero};
  if (key == "mirtb") return {"MIRTb", config_from_code("ui"), DimRule::positive};
  if (key == "afm") return {"AFM", config_from_code("sa"), DimRule::zero};
  if (key == "pfa") return {"PFA", config_from_code("swf"), DimRule::zero};
  std::string_view code = key;
  if (code.rfind("ktm-", 0) == 0) code.remove_prefix(4);
  return {"KTM-" + std::string(code), config_from_code(code), DimRule::any};
}

void check_dim(const Preset& preset, std::size_t dim) {
  if (preset.dim_rule == DimRule::zero && dim != 0)
    throw std::invalid_argument(preset.name + " requires d = 0, got d = " + std::to_string(dim));
  if (preset.dim_rule == DimRule::positive && dim == 0)
    throw std::invalid_argument(preset.name + " requires d > 0");
}

std::vector<EmbeddingRow> export_embeddings(const FMParams& params, const FeatureSpace& space) {
  if (params.feature_count() != space.total_width())
    throw std::invalid_argument("export_embeddings: parameter count does not match the feature space");
  std::vector<EmbeddingRow> rows;
  rows.reserve(space.total_width());
  for (const auto& block : space.blocks()) {
    for (std::size_t id = 0; id < block.width; ++id) {
      const std::size_t k = block.offset + id;
      auto emb = params.embedding_row(k);
      rows.push_back({block.name, id, params.w[k], std::vector<double>(emb.begin(), emb.end())});
    }
  }
  return rows;
}

void write_embeddings_csv(std::ostream& out, const std::vector<EmbeddingRow>& rows, std::size_t dim) {
  out << "block,local_id,bias";
  for (std::size_t f = 0; f < dim; ++f) out << ",v" << f;
  out << '\n';
  for (const auto& r : rows) {
    if (r.embedding.size() != dim) throw std::invalid_argument("embedding row has the wrong dimension");
    out << r.block << ',' << r.local_id << ',' << format_double(r.bias);
    for (double x : r.embedding) out << ',' << format_double(x);
    out << '\n';
  }
}

std::vector<EmbeddingRow> read_embeddings_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("block,local_id,bias", 0) != 0)
    throw std::runtime_error("embedding CSV: bad header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<EmbeddingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != columns) throw std::runtime_error("embedding CSV: ragged row '" + line + "'");
    EmbeddingRow r{fields[0], parse_integer<std::size_t>(fields[1]), parse_double(fields[2]), {}};
    for (std::size_t c = 3; c < fields.size(); ++c) r.embedding.push_back(parse_double(fields[c]));
    rows.push_back(std::move(r));
  }
  return rows;
}

FMParams params_from_embeddings(const std::vector<EmbeddingRow>& rows, const FeatureSpace& space,
                                std::size_t dim, double mu) {
  FMParams params(space.total_width(), dim);
  params.mu = mu;
  std::vector<bool> seen(space.total_width(), false);
  for (const auto& r : rows) {
    const std::size_t k = space.index(r.block, r.local_id);
    if (r.embedding.size() != dim) throw std::invalid_argument("embedding row has the wrong dimension");
    if (seen[k]) throw std::invalid_argument("duplicate embedding row for " + r.block);
    seen[k] = true;
    params.w[k] = r.bias;
    std::copy(r.embedding.begin(), r.embedding.end(), params.v.begin() + static_cast<std::ptrdiff_t>(k * dim));
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw std::invalid_argument("embedding export does not cover every feature");
  return params;
}

}  // namespace ktm
