#include "ktm/encoder.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string_view>

namespace ktm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

QMatrix::QMatrix(std::size_t items, std::size_t skills, std::vector<std::uint8_t> cells)
    : items_(items), skills_(skills), cells_(std::move(cells)) {
  if (cells_.size() != items_ * skills_)
    throw std::invalid_argument("q-matrix: expected " + std::to_string(items_ * skills_) +
                                " cells, got " + std::to_string(cells_.size()));
  kc_offsets_.reserve(items_ + 1);
  kc_offsets_.push_back(0);
  for (std::size_t j = 0; j < items_; ++j) {
    for (std::size_t k = 0; k < skills_; ++k) {
      const auto c = cells_[j * skills_ + k];
      if (c > 1)
        throw std::invalid_argument("q-matrix: cell (" + std::to_string(j) + ", " +
                                    std::to_string(k) + ") is not binary");
      if (c == 1) kc_skills_.push_back(k);
    }
    kc_offsets_.push_back(kc_skills_.size());
  }
}

QMatrix QMatrix::without_skills(std::size_t items) { return QMatrix(items, 0, {}); }

std::span<const std::size_t> QMatrix::skills_of(std::size_t item) const {
  if (item >= items_) throw std::out_of_range("q-matrix: item " + std::to_string(item) + " out of range");
  return std::span<const std::size_t>(kc_skills_)
      .subspan(kc_offsets_[item], kc_offsets_[item + 1] - kc_offsets_[item]);
}

QMatrix parse_qmatrix(std::istream& in) {
  std::vector<std::uint8_t> cells;
  std::size_t items = 0;
  std::size_t skills = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::size_t width = 0;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      const auto cell = trim(rest.substr(0, comma));
      if (cell == "0" || cell == "1") {
        cells.push_back(cell == "1" ? 1 : 0);
      } else {
        throw std::invalid_argument("q-matrix row " + std::to_string(items + 1) +
                                    ": non-binary cell '" + std::string(cell) + "'");
      }
      ++width;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (items == 0) {
      skills = width;
    } else if (width != skills) {
      throw std::invalid_argument("q-matrix row " + std::to_string(items + 1) + " has " +
                                  std::to_string(width) + " columns, expected " +
                                  std::to_string(skills));
    }
    ++items;
  }
  if (items == 0) throw std::invalid_argument("q-matrix is empty");
  return QMatrix(items, skills, std::move(cells));
}

QMatrix load_qmatrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open q-matrix " + path.string());
  return parse_qmatrix(in);
}

void write_qmatrix(std::ostream& out, const QMatrix& q) {
  for (std::size_t j = 0; j < q.item_count(); ++j) {
    for (std::size_t k = 0; k < q.skill_count(); ++k) out << (k ? "," : "") << (q.involves(j, k) ? 1 : 0);
    out << '\n';
  }
}

CounterState::CounterState(std::size_t students, std::size_t skills)
    : students_(students), skills_(skills), wins_(students * skills, 0), fails_(students * skills, 0) {}

std::size_t CounterState::cell(std::size_t student, std::size_t skill) const {
  if (student >= students_ || skill >= skills_) throw std::out_of_range("counter cell out of range");
  return student * skills_ + skill;
}

void CounterState::apply(const Triplet& t, const QMatrix& q) {
  for (std::size_t k : q.skills_of(t.item)) {
    auto& tally = t.outcome == 1 ? wins_ : fails_;
    ++tally[cell(t.student, k)];
  }
}

CounterState update_counters(CounterState state, const Triplet& t, const QMatrix& q) {
  state.apply(t, q);
  return state;
}

ExtraTable ExtraTable::subset(std::span<const std::size_t> indices) const {
  ExtraTable out{columns, {}};
  out.values.reserve(indices.size() * columns.size());
  for (std::size_t i : indices) {
    auto r = row(i);
    out.values.insert(out.values.end(), r.begin(), r.end());
  }
  return out;
}

void EncodingConfig::validate() const {
  if (!(use_users || use_items || use_skills || use_attempts || use_wins || use_fails || use_extras))
    throw std::invalid_argument("encoding config enables no feature block");
  if (use_attempts && (use_wins || use_fails))
    throw std::invalid_argument("attempts cannot be combined with wins/fails counters");
}

FeatureSpace EncodingConfig::feature_space(std::size_t students, std::size_t items,
                                           std::size_t skills) const {
  validate();
  std::vector<std::pair<std::string, std::size_t>> blocks;
  if (use_users) blocks.emplace_back("users", students);
  if (use_items) blocks.emplace_back("items", items);
  if (use_skills) blocks.emplace_back("skills", skills);
  if (use_attempts) blocks.emplace_back("attempts", skills);
  if (use_wins) blocks.emplace_back("wins", skills);
  if (use_fails) blocks.emplace_back("fails", skills);
  if (use_extras) {
    if (extra_columns.empty())
      throw std::invalid_argument("encoding requests extra columns but the data has none");
    for (const auto& c : extra_columns) blocks.emplace_back(c.name, c.cardinality);
  }
  return FeatureSpace(blocks);
}

std::string EncodingConfig::code() const {
  std::string s;
  if (use_users) s += 'u';
  if (use_items) s += 'i';
  if (use_skills) s += 's';
  if (use_attempts) s += 'a';
  if (use_wins) s += 'w';
  if (use_fails) s += 'f';
  if (use_extras) s += 'e';
  return s;
}

std::vector<Entry> encode_extra(std::span<const std::size_t> values, const EncodingConfig& config,
                                const FeatureSpace& space) {
  std::vector<Entry> fragment;
  if (!config.use_extras) return fragment;
  if (values.size() != config.extra_columns.size())
    throw std::invalid_argument("extra values do not match the declared extra columns");
  for (std::size_t c = 0; c < values.size(); ++c) {
    const auto& col = config.extra_columns[c];
    if (values[c] >= col.cardinality)
      throw std::out_of_range("extra column '" + col.name + "': category " +
                              std::to_string(values[c]) + " outside cardinality " +
                              std::to_string(col.cardinality));
    fragment.push_back({space.index(col.name, values[c]), 1.0});
  }
  return fragment;
}

DesignMatrix encode_dataset(std::span<const Triplet> triplets, const QMatrix& q,
                            const EncodingConfig& config, std::size_t students,
                            const ExtraTable& extras) {
  const std::size_t skills = q.skill_count();
  if ((config.use_skills || config.use_attempts || config.use_wins || config.use_fails) && skills == 0)
    throw std::invalid_argument("skill-based blocks need a q-matrix with at least one skill");
  if (config.use_extras && extras.columns != config.extra_columns)
    throw std::invalid_argument("extra table columns differ from the encoding config");
  if (config.use_extras && extras.row_count() != triplets.size())
    throw std::invalid_argument("extras have " + std::to_string(extras.row_count()) +
                                " rows for " + std::to_string(triplets.size()) + " triplets");

  const FeatureSpace space = config.feature_space(students, q.item_count(), skills);
  const auto offset = [&](const char* name) {
    return space.has_block(name) ? space.block(name).offset : 0;
  };
  const std::size_t users_at = offset("users"), items_at = offset("items"),
                    skills_at = offset("skills"), attempts_at = offset("attempts"),
                    wins_at = offset("wins"), fails_at = offset("fails");

  CounterState counters(students, skills);
  std::vector<SparseRow> rows;
  std::vector<int> labels;
  rows.reserve(triplets.size());
  labels.reserve(triplets.size());

  for (std::size_t r = 0; r < triplets.size(); ++r) {
    const Triplet& t = triplets[r];
    if (t.student >= students)
      throw std::out_of_range("row " + std::to_string(r) + ": student id out of range");
    if (t.item >= q.item_count())
      throw std::out_of_range("row " + std::to_string(r) + ": item id out of range");
    if (t.outcome != 0 && t.outcome != 1)
      throw std::invalid_argument("row " + std::to_string(r) + ": outcome is not binary");

    const auto kc = q.skills_of(t.item);
    std::vector<Entry> entries;
    entries.reserve(2 + 3 * kc.size() + extras.columns.size());
    if (config.use_users) entries.push_back({users_at + t.student, 1.0});
    if (config.use_items) entries.push_back({items_at + t.item, 1.0});
    if (config.use_skills)
      for (std::size_t k : kc) entries.push_back({skills_at + k, 1.0});
    if (config.use_attempts)
      for (std::size_t k : kc) entries.push_back({attempts_at + k, double(counters.attempts(t.student, k))});
    if (config.use_wins)
      for (std::size_t k : kc) entries.push_back({wins_at + k, double(counters.wins(t.student, k))});
    if (config.use_fails)
      for (std::size_t k : kc) entries.push_back({fails_at + k, double(counters.fails(t.student, k))});
    if (config.use_extras) {
      auto fragment = encode_extra(extras.row(r), config, space);
      entries.insert(entries.end(), fragment.begin(), fragment.end());
    }

    rows.emplace_back(std::move(entries));
    labels.push_back(t.outcome);
    counters.apply(t, q);
  }
  return DesignMatrix(space, std::move(rows), std::move(labels));
}

std::vector<std::size_t> Dataset::student_of_row() const {
  std::vector<std::size_t> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back(t.student);
  return out;
}

}  // namespace ktm
