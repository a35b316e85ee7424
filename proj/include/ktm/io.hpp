#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ktm/encoder.hpp"
#include "ktm/fm_model.hpp"
#include "ktm/sparse.hpp"

namespace ktm {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kModelFormatVersion = 1;

/// Reads RFC 4180 style records: comma separated, double-quoted fields may
/// hold commas, quotes ("") and newlines.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}
  /// False at end of input.
  bool next(std::vector<std::string>& fields);
  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

/// Raw id strings for every dense index.
struct Vocabulary {
  std::vector<std::string> users;
  std::vector<std::string> items;
  std::vector<std::string> skills;  // only for logs that carry skill tags
  std::vector<std::pair<std::string, std::vector<std::string>>> extras;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical JSON text.
  std::string digest() const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// How dense ids are assigned when no vocabulary is given. `sorted` orders
/// raw ids numerically when all are integers, lexicographically otherwise;
/// `appearance` follows first appearance in the log.
enum class IdOrder { sorted, appearance };

IdOrder parse_id_order(std::string_view name);

struct TripletLoadOptions {
  IdOrder id_order = IdOrder::sorted;
  /// Fixed vocabulary: ids absent from it are an error.
  const Vocabulary* vocabulary = nullptr;
};

struct TripletLog {
  std::vector<Triplet> triplets;
  ExtraTable extras;
  Vocabulary vocab;
};

/// CSV with header `user_id,item_id,correct[,<extra>...]`, rows in
/// chronological order. Every column besides the three named ones is a
/// categorical extra.
TripletLog parse_triplets(std::istream& in, const TripletLoadOptions& options = {});
TripletLog load_triplets(const std::filesystem::path& path, const TripletLoadOptions& options = {});

/// Writes a log back with its raw ids.
void write_triplets(std::ostream& out, const TripletLog& log);

/// Pairs a log with its q-matrix (row j is dense item j). Without a q-matrix
/// items carry no skills.
Dataset make_dataset(const TripletLog& log, std::optional<QMatrix> qmatrix);

/// Public ASSISTments 2009-2010 skill-builder CSV. Rows sharing an order_id
/// are one attempt whose skills are merged; attempts are ordered by order_id.
/// The q-matrix is the union of skill tags seen per problem; first_action,
/// school_id, teacher_id and tutor_mode become extra columns when present.
std::pair<Dataset, Vocabulary> load_assistments(const std::filesystem::path& path);
std::pair<Dataset, Vocabulary> parse_assistments(std::istream& in);

/// A trained model with everything needed to re-encode data for it.
struct Model {
  std::string preset;
  EncodingConfig encoding;
  FeatureSpace space;
  Link link = Link::logit;
  FMParams params;
  Vocabulary vocab;
};

std::string model_to_json(const Model& model);
/// Throws std::runtime_error on a wrong format version, a vocabulary digest
/// that does not match the embedded vocabulary (or `expected`, when given),
/// or malformed content.
Model model_from_json(std::string_view text, const Vocabulary* expected = nullptr);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path, const Vocabulary* expected = nullptr);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// Provenance of one CLI run.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;

  nlohmann::json to_json() const;
};

std::string utc_timestamp();

}  // namespace ktm
