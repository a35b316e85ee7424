#include "ktm/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "ktm/format.hpp"

namespace ktm {

using nlohmann::json;

bool CsvReader::next(std::vector<std::string>& fields) {
  fields.clear();
  std::string line;
  if (!std::getline(in_, line)) return false;
  ++line_;
  std::string field;
  bool quoted = false;
  std::size_t i = 0;
  while (true) {
    if (i == line.size()) {
      if (quoted) {
        // A quoted field continues on the next physical line.
        if (!std::getline(in_, line)) throw std::runtime_error("CSV: unterminated quoted field");
        ++line_;
        field += '\n';
        i = 0;
        continue;
      }
      break;
    }
    const char c = line[i++];
    if (quoted) {
      if (c == '"') {
        if (i < line.size() && line[i] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r' || i != line.size()) {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return true;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::optional<long long> as_integer(const std::string& s) {
  try {
    return parse_integer<long long>(s);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

/// Dense ids for one categorical column.
class IdMapper {
 public:
  void observe(const std::string& raw) {
    if (seen_.insert(raw).second) order_.push_back(raw);
  }

  std::vector<std::string> vocabulary(IdOrder order) const {
    std::vector<std::string> out = order_;
    if (order == IdOrder::sorted) {
      const bool numeric = std::all_of(out.begin(), out.end(), [](const auto& s) { return as_integer(s).has_value(); });
      if (numeric) {
        std::stable_sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
          const long long x = *as_integer(a), y = *as_integer(b);
          return x != y ? x < y : a < b;
        });
      } else {
        std::sort(out.begin(), out.end());
      }
    }
    return out;
  }

 private:
  std::set<std::string> seen_;
  std::vector<std::string> order_;
};

class Lookup {
 public:
  Lookup(const std::vector<std::string>& vocab, std::string what) : what_(std::move(what)) {
    for (std::size_t i = 0; i < vocab.size(); ++i) index_.emplace(vocab[i], i);
  }
  std::size_t operator()(const std::string& raw) const {
    auto it = index_.find(raw);
    if (it == index_.end()) throw std::runtime_error(what_ + " '" + raw + "' is not in the vocabulary");
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::string what_;
};

std::size_t column_of(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("CSV: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::string trimmed(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  const auto last = s.find_last_not_of(" \t");
  return first == std::string::npos ? std::string() : s.substr(first, last - first + 1);
}

int parse_outcome(const std::string& text, std::size_t line) {
  const std::string t = trimmed(text);
  if (t == "0") return 0;
  if (t == "1") return 1;
  throw std::runtime_error("line " + std::to_string(line) + ": outcome '" + t + "' is not 0 or 1");
}

json vocab_map(const std::vector<std::string>& ids) {
  json m = json::object();
  for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = i;
  return m;
}

std::vector<std::string> vocab_list(const json& m, const std::string& what) {
  std::vector<std::string> ids(m.size());
  std::vector<bool> filled(m.size(), false);
  for (const auto& [raw, idx] : m.items()) {
    const auto i = idx.get<std::size_t>();
    if (i >= ids.size() || filled[i]) throw std::runtime_error("vocabulary: bad index for " + what + " '" + raw + "'");
    ids[i] = raw;
    filled[i] = true;
  }
  return ids;
}

}  // namespace

json Vocabulary::to_json() const {
  json extra_json = json::array();
  for (const auto& [name, categories] : extras) extra_json.push_back({{"name", name}, {"ids", vocab_map(categories)}});
  return {{"users", vocab_map(users)},
          {"items", vocab_map(items)},
          {"skills", vocab_map(skills)},
          {"extras", extra_json}};
}

Vocabulary Vocabulary::from_json(const json& j) {
  Vocabulary v;
  v.users = vocab_list(j.at("users"), "user");
  v.items = vocab_list(j.at("items"), "item");
  if (j.contains("skills")) v.skills = vocab_list(j.at("skills"), "skill");
  if (j.contains("extras"))
    for (const auto& e : j.at("extras")) {
      const auto name = e.at("name").get<std::string>();
      v.extras.emplace_back(name, vocab_list(e.at("ids"), name));
    }
  return v;
}

std::string Vocabulary::digest() const { return sha256_hex(to_json().dump()); }

IdOrder parse_id_order(std::string_view name) {
  if (name == "sorted") return IdOrder::sorted;
  if (name == "appearance") return IdOrder::appearance;
  throw std::invalid_argument("unknown id order '" + std::string(name) + "' (expected sorted or appearance)");
}

TripletLog parse_triplets(std::istream& in, const TripletLoadOptions& options) {
  CsvReader reader(in);
  std::vector<std::string> header;
  if (!reader.next(header)) throw std::runtime_error("triplet CSV is empty");
  for (auto& h : header) h = trimmed(h);
  const std::size_t user_col = column_of(header, "user_id");
  const std::size_t item_col = column_of(header, "item_id");
  const std::size_t correct_col = column_of(header, "correct");
  std::vector<std::size_t> extra_cols;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != user_col && c != item_col && c != correct_col) extra_cols.push_back(c);

  struct RawRow {
    std::string user, item;
    int outcome;
    std::vector<std::string> extras;
  };
  std::vector<RawRow> raw;
  std::vector<std::string> fields;
  while (reader.next(fields)) {
    if (fields.size() == 1 && trimmed(fields[0]).empty()) continue;
    if (fields.size() != header.size())
      throw std::runtime_error("line " + std::to_string(reader.line()) + ": expected " +
                               std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    RawRow row{trimmed(fields[user_col]), trimmed(fields[item_col]),
               parse_outcome(fields[correct_col], reader.line()), {}};
    for (std::size_t c : extra_cols) row.extras.push_back(trimmed(fields[c]));
    raw.push_back(std::move(row));
  }
  if (raw.empty()) throw std::runtime_error("triplet CSV has no data rows");

  TripletLog log;
  if (options.vocabulary != nullptr) {
    log.vocab = *options.vocabulary;
    if (log.vocab.extras.size() != extra_cols.size())
      throw std::runtime_error("vocabulary declares " + std::to_string(log.vocab.extras.size()) +
                               " extra columns, the CSV has " + std::to_string(extra_cols.size()));
    for (std::size_t e = 0; e < extra_cols.size(); ++e)
      if (log.vocab.extras[e].first != header[extra_cols[e]])
        throw std::runtime_error("extra column '" + header[extra_cols[e]] + "' is not in the vocabulary");
  } else {
    IdMapper users, items;
    std::vector<IdMapper> extras(extra_cols.size());
    for (const auto& r : raw) {
      users.observe(r.user);
      items.observe(r.item);
      for (std::size_t e = 0; e < extras.size(); ++e) extras[e].observe(r.extras[e]);
    }
    log.vocab.users = users.vocabulary(options.id_order);
    log.vocab.items = items.vocabulary(options.id_order);
    for (std::size_t e = 0; e < extras.size(); ++e)
      log.vocab.extras.emplace_back(header[extra_cols[e]], extras[e].vocabulary(options.id_order));
  }

  const Lookup user_id(log.vocab.users, "user"), item_id(log.vocab.items, "item");
  std::vector<Lookup> extra_id;
  for (const auto& [name, categories] : log.vocab.extras) {
    extra_id.emplace_back(categories, name);
    log.extras.columns.push_back({name, categories.size()});
  }
  log.triplets.reserve(raw.size());
  log.extras.values.reserve(raw.size() * extra_cols.size());
  for (const auto& r : raw) {
    log.triplets.push_back({user_id(r.user), item_id(r.item), r.outcome});
    for (std::size_t e = 0; e < extra_id.size(); ++e) log.extras.values.push_back(extra_id[e](r.extras[e]));
  }
  return log;
}

TripletLog load_triplets(const std::filesystem::path& path, const TripletLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_triplets(in, options);
}

void write_triplets(std::ostream& out, const TripletLog& log) {
  out << "user_id,item_id,correct";
  for (const auto& [name, categories] : log.vocab.extras) out << ',' << csv_escape(name);
  out << '\n';
  for (std::size_t r = 0; r < log.triplets.size(); ++r) {
    const Triplet& t = log.triplets[r];
    out << csv_escape(log.vocab.users.at(t.student)) << ',' << csv_escape(log.vocab.items.at(t.item)) << ','
        << t.outcome;
    for (std::size_t e = 0; e < log.vocab.extras.size(); ++e)
      out << ',' << csv_escape(log.vocab.extras[e].second.at(log.extras.row(r)[e]));
    out << '\n';
  }
}

Dataset make_dataset(const TripletLog& log, std::optional<QMatrix> qmatrix) {
  Dataset data;
  data.triplets = log.triplets;
  data.extras = log.extras;
  data.students = log.vocab.users.size();
  if (qmatrix) {
    if (qmatrix->item_count() < log.vocab.items.size())
      throw std::runtime_error("q-matrix has " + std::to_string(qmatrix->item_count()) + " rows but the log has " +
                               std::to_string(log.vocab.items.size()) + " items");
    data.qmatrix = std::move(*qmatrix);
  } else {
    data.qmatrix = QMatrix::without_skills(log.vocab.items.size());
  }
  return data;
}

std::pair<Dataset, Vocabulary> parse_assistments(std::istream& in) {
  CsvReader reader(in);
  std::vector<std::string> header;
  if (!reader.next(header)) throw std::runtime_error("ASSISTments CSV is empty");
  for (auto& h : header) h = trimmed(h);
  const std::size_t order_col = column_of(header, "order_id");
  const std::size_t user_col = column_of(header, "user_id");
  const std::size_t item_col = column_of(header, "problem_id");
  const std::size_t correct_col = column_of(header, "correct");
  const std::size_t skill_col = column_of(header, "skill_id");
  std::vector<std::pair<std::string, std::size_t>> extra_cols;
  for (const char* name : {"first_action", "school_id", "teacher_id", "tutor_mode"}) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it != header.end()) extra_cols.emplace_back(name, static_cast<std::size_t>(it - header.begin()));
  }

  struct Attempt {
    std::string order, user, item;
    int outcome;
    std::vector<std::string> extras;
  };
  std::vector<Attempt> attempts;
  std::unordered_map<std::string, std::size_t> attempt_of_order;
  std::map<std::string, std::set<std::string>> skills_of_item;
  IdMapper skill_ids;

  std::vector<std::string> fields;
  while (reader.next(fields)) {
    if (fields.size() == 1 && trimmed(fields[0]).empty()) continue;
    if (fields.size() != header.size())
      throw std::runtime_error("ASSISTments line " + std::to_string(reader.line()) + ": expected " +
                               std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    const std::string order = trimmed(fields[order_col]);
    const std::string item = trimmed(fields[item_col]);
    const std::string skill = trimmed(fields[skill_col]);
    auto& item_skills = skills_of_item[item];
    if (!skill.empty() && skill != "NA") {
      item_skills.insert(skill);
      skill_ids.observe(skill);
    }
    if (attempt_of_order.count(order)) continue;
    const std::string raw_correct = trimmed(fields[correct_col]);
    int outcome;
    if (raw_correct == "0" || raw_correct == "1") {
      outcome = raw_correct == "1";
    } else {
      throw std::runtime_error("ASSISTments line " + std::to_string(reader.line()) + ": correct '" + raw_correct +
                               "' is not 0 or 1");
    }
    Attempt a{order, trimmed(fields[user_col]), item, outcome, {}};
    for (const auto& [name, col] : extra_cols) a.extras.push_back(trimmed(fields[col]));
    attempt_of_order.emplace(order, attempts.size());
    attempts.push_back(std::move(a));
  }
  if (attempts.empty()) throw std::runtime_error("ASSISTments CSV has no data rows");

  const bool numeric_order = std::all_of(attempts.begin(), attempts.end(),
                                         [](const Attempt& a) { return as_integer(a.order).has_value(); });
  if (numeric_order)
    std::stable_sort(attempts.begin(), attempts.end(),
                     [](const Attempt& a, const Attempt& b) { return *as_integer(a.order) < *as_integer(b.order); });

  IdMapper users, items;
  std::vector<IdMapper> extras(extra_cols.size());
  for (const auto& a : attempts) {
    users.observe(a.user);
    items.observe(a.item);
    for (std::size_t e = 0; e < extras.size(); ++e) extras[e].observe(a.extras[e]);
  }
  Vocabulary vocab;
  vocab.users = users.vocabulary(IdOrder::sorted);
  vocab.items = items.vocabulary(IdOrder::sorted);
  vocab.skills = skill_ids.vocabulary(IdOrder::sorted);
  for (std::size_t e = 0; e < extras.size(); ++e)
    vocab.extras.emplace_back(extra_cols[e].first, extras[e].vocabulary(IdOrder::sorted));

  const Lookup user_id(vocab.users, "user"), item_id(vocab.items, "item"), skill_id(vocab.skills, "skill");
  std::vector<std::uint8_t> cells(vocab.items.size() * vocab.skills.size(), 0);
  for (std::size_t j = 0; j < vocab.items.size(); ++j)
    for (const auto& s : skills_of_item[vocab.items[j]]) cells[j * vocab.skills.size() + skill_id(s)] = 1;

  Dataset data;
  data.qmatrix = QMatrix(vocab.items.size(), vocab.skills.size(), std::move(cells));
  data.students = vocab.users.size();
  std::vector<Lookup> extra_id;
  for (const auto& [name, categories] : vocab.extras) {
    extra_id.emplace_back(categories, name);
    data.extras.columns.push_back({name, categories.size()});
  }
  for (const auto& a : attempts) {
    data.triplets.push_back({user_id(a.user), item_id(a.item), a.outcome});
    for (std::size_t e = 0; e < extra_id.size(); ++e) data.extras.values.push_back(extra_id[e](a.extras[e]));
  }
  return {std::move(data), std::move(vocab)};
}

std::pair<Dataset, Vocabulary> load_assistments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_assistments(in);
}

namespace {

json encoding_to_json(const EncodingConfig& c) {
  json cols = json::array();
  for (const auto& col : c.extra_columns) cols.push_back({{"name", col.name}, {"cardinality", col.cardinality}});
  return {{"users", c.use_users},   {"items", c.use_items}, {"skills", c.use_skills},
          {"attempts", c.use_attempts}, {"wins", c.use_wins}, {"fails", c.use_fails},
          {"extras", c.use_extras}, {"extra_columns", cols}};
}

EncodingConfig encoding_from_json(const json& j) {
  EncodingConfig c;
  c.use_users = j.at("users").get<bool>();
  c.use_items = j.at("items").get<bool>();
  c.use_skills = j.at("skills").get<bool>();
  c.use_attempts = j.at("attempts").get<bool>();
  c.use_wins = j.at("wins").get<bool>();
  c.use_fails = j.at("fails").get<bool>();
  c.use_extras = j.at("extras").get<bool>();
  for (const auto& col : j.at("extra_columns"))
    c.extra_columns.push_back({col.at("name").get<std::string>(), col.at("cardinality").get<std::size_t>()});
  c.validate();
  return c;
}

}  // namespace

std::string model_to_json(const Model& model) {
  model.params.validate();
  if (model.params.feature_count() != model.space.total_width())
    throw std::invalid_argument("model parameters do not match the feature space");
  json blocks = json::array();
  for (const auto& b : model.space.blocks()) blocks.push_back({{"name", b.name}, {"width", b.width}});
  json v = json::array();
  if (model.params.dim > 0)
    for (std::size_t k = 0; k < model.params.feature_count(); ++k) {
      auto row = model.params.embedding_row(k);
      v.push_back(json(std::vector<double>(row.begin(), row.end())));
    }
  json j = {{"format", "ktm-model"},
            {"version", kModelFormatVersion},
            {"preset", model.preset},
            {"link", to_string(model.link)},
            {"encoding", encoding_to_json(model.encoding)},
            {"feature_space", blocks},
            {"dim", model.params.dim},
            {"mu", model.params.mu},
            {"w", model.params.w},
            {"V", v},
            {"vocabulary", model.vocab.to_json()},
            {"vocab_digest", model.vocab.digest()}};
  return j.dump(1) + "\n";
}

Model model_from_json(std::string_view text, const Vocabulary* expected) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("corrupt model file: ") + e.what());
  }
  try {
    if (j.value("format", "") != "ktm-model") throw std::runtime_error("not a model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw std::runtime_error("unsupported model format version " + std::to_string(version));

    Model m;
    m.vocab = Vocabulary::from_json(j.at("vocabulary"));
    const auto digest = j.at("vocab_digest").get<std::string>();
    if (digest != m.vocab.digest()) throw std::runtime_error("vocabulary digest mismatch: the model file was altered");
    if (expected != nullptr && expected->digest() != digest)
      throw std::runtime_error("vocabulary digest mismatch: the model was trained with a different vocabulary");

    m.preset = j.at("preset").get<std::string>();
    m.link = parse_link(j.at("link").get<std::string>());
    m.encoding = encoding_from_json(j.at("encoding"));
    std::vector<std::pair<std::string, std::size_t>> blocks;
    for (const auto& b : j.at("feature_space")) blocks.emplace_back(b.at("name").get<std::string>(), b.at("width").get<std::size_t>());
    m.space = FeatureSpace(blocks);

    const auto dim = j.at("dim").get<std::size_t>();
    m.params = FMParams(m.space.total_width(), dim);
    m.params.mu = j.at("mu").get<double>();
    m.params.w = j.at("w").get<std::vector<double>>();
    if (m.params.w.size() != m.space.total_width()) throw std::runtime_error("bias vector has the wrong length");
    const auto& v = j.at("V");
    if (v.size() != (dim > 0 ? m.space.total_width() : 0)) throw std::runtime_error("embedding matrix has the wrong shape");
    for (std::size_t k = 0; k < v.size(); ++k) {
      const auto row = v[k].get<std::vector<double>>();
      if (row.size() != dim) throw std::runtime_error("embedding row has the wrong dimension");
      std::copy(row.begin(), row.end(), m.params.v.begin() + static_cast<std::ptrdiff_t>(k * dim));
    }
    m.params.validate();
    return m;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("corrupt model file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("corrupt model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Model& model) { write_file(path, model_to_json(model)); }

Model load_model(const std::filesystem::path& path, const Vocabulary* expected) {
  return model_from_json(read_file(path), expected);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

json RunManifest::to_json() const {
  json in = json::array();
  for (const auto& [path, digest] : inputs) in.push_back({{"path", path}, {"sha256", digest}});
  return {{"command", command},
          {"config", config},
          {"config_digest", sha256_hex(config.dump())},
          {"inputs", in},
          {"seed", seed},
          {"tool_version", kToolVersion},
          {"started_at", started_at},
          {"finished_at", finished_at}};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace ktm
