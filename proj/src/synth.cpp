#include "ktm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ktm/io.hpp"
#include "ktm/rng.hpp"

namespace ktm {

using nlohmann::json;

Generator parse_generator(std::string_view name) {
  if (name == "rasch") return Generator::rasch;
  if (name == "mirt") return Generator::mirt;
  if (name == "pfa") return Generator::pfa;
  if (name == "ktm") return Generator::ktm;
  throw std::invalid_argument("unknown generator '" + std::string(name) + "'");
}

std::string to_string(Generator g) {
  switch (g) {
    case Generator::rasch: return "rasch";
    case Generator::mirt: return "mirt";
    case Generator::pfa: return "pfa";
    case Generator::ktm: return "ktm";
  }
  return "?";
}

void SynthSpec::validate() const {
  if (students == 0 || items == 0 || skills == 0 || attempts == 0)
    throw std::invalid_argument("synthetic spec: counts must be positive");
  if ((generator == Generator::mirt || generator == Generator::ktm) && dim == 0)
    throw std::invalid_argument("synthetic spec: mirt and ktm need d >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("synthetic spec: sigma must be positive");
}

QMatrix sample_qmatrix(const SynthSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, RngStream::generator, 1);
  std::bernoulli_distribution involve(0.3);
  std::uniform_int_distribution<std::size_t> any_skill(0, spec.skills - 1);
  std::vector<std::uint8_t> cells(spec.items * spec.skills, 0);
  for (std::size_t j = 0; j < spec.items; ++j) {
    bool some = false;
    for (std::size_t k = 0; k < spec.skills; ++k)
      if (involve(rng)) cells[j * spec.skills + k] = 1, some = true;
    if (!some) cells[j * spec.skills + any_skill(rng)] = 1;
  }
  return QMatrix(spec.items, spec.skills, std::move(cells));
}

SynthTruth sample_truth(const SynthSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, RngStream::generator, 2);
  std::normal_distribution<double> normal(0.0, spec.sigma);
  const auto draw = [&](std::size_t n, double scale) {
    std::vector<double> out(n);
    for (double& x : out) x = scale * normal(rng);
    return out;
  };

  SynthTruth truth;
  switch (spec.generator) {
    case Generator::rasch:
      truth.ability = draw(spec.students, 1.0);
      truth.difficulty = draw(spec.items, 1.0);
      break;
    case Generator::pfa:
      truth.skill_bias = draw(spec.skills, 1.0);
      truth.win_rate = draw(spec.skills, 0.2);
      for (double& g : truth.win_rate) g = std::abs(g);
      truth.fail_rate = draw(spec.skills, 0.1);
      break;
    case Generator::mirt:
    case Generator::ktm: {
      truth.encoding.use_users = truth.encoding.use_items = true;
      if (spec.generator == Generator::ktm)
        truth.encoding.use_skills = truth.encoding.use_wins = truth.encoding.use_fails = true;
      const FeatureSpace space = truth.encoding.feature_space(spec.students, spec.items, spec.skills);
      truth.fm = FMParams(space.total_width(), spec.dim);
      // Entry sd s with d * s^4 = sigma^2 keeps <v_k, v_l> at variance sigma^2.
      const double entry_sd = std::sqrt(spec.sigma) / std::pow(double(spec.dim), 0.25);
      std::normal_distribution<double> unit;
      for (const auto& block : space.blocks()) {
        const bool counter = block.name == "wins" || block.name == "fails";
        const double scale = counter ? 0.1 : 1.0;
        for (std::size_t id = 0; id < block.width; ++id) {
          const std::size_t k = block.offset + id;
          truth.fm.w[k] = scale * normal(rng);
          for (std::size_t f = 0; f < spec.dim; ++f)
            truth.fm.embedding(k, f) = scale * entry_sd * unit(rng);
        }
      }
      break;
    }
  }
  return truth;
}

SynthData simulate(const SynthSpec& spec, const QMatrix& q, const SynthTruth& truth) {
  spec.validate();
  if (q.item_count() != spec.items || q.skill_count() != spec.skills)
    throw std::invalid_argument("q-matrix shape does not match the synthetic spec");
  Rng rng = make_rng(spec.seed, RngStream::generator, 3);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  FeatureSpace space;
  if (spec.generator == Generator::mirt || spec.generator == Generator::ktm)
    space = truth.encoding.feature_space(spec.students, spec.items, spec.skills);

  SynthData data{spec, q, truth, {}, {}};
  CounterState counters(spec.students, spec.skills);
  std::vector<std::size_t> order(spec.items);
  for (std::size_t round = 0; round < spec.attempts; ++round) {
    for (std::size_t i = 0; i < spec.students; ++i) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t j : order) {
        double z = 0.0;
        switch (spec.generator) {
          case Generator::rasch:
            z = truth.ability.at(i) - truth.difficulty.at(j);
            break;
          case Generator::pfa:
            for (std::size_t k : q.skills_of(j))
              z += truth.skill_bias.at(k) + truth.win_rate.at(k) * counters.wins(i, k) +
                   truth.fail_rate.at(k) * counters.fails(i, k);
            break;
          case Generator::mirt:
          case Generator::ktm: {
            std::vector<Entry> entries{{space.index("users", i), 1.0}, {space.index("items", j), 1.0}};
            if (spec.generator == Generator::ktm) {
              const auto kc = q.skills_of(j);
              for (std::size_t k : kc) entries.push_back({space.index("skills", k), 1.0});
              for (std::size_t k : kc) entries.push_back({space.index("wins", k), double(counters.wins(i, k))});
              for (std::size_t k : kc) entries.push_back({space.index("fails", k), double(counters.fails(i, k))});
            }
            z = raw_score(truth.fm, SparseRow(std::move(entries)));
            break;
          }
        }
        const double p = inverse_link(z, spec.link);
        const Triplet t{i, j, uniform(rng) < p ? 1 : 0};
        data.triplets.push_back(t);
        data.probabilities.push_back(p);
        counters.apply(t, q);
      }
    }
  }
  return data;
}

SynthData generate_synthetic(const SynthSpec& spec) {
  return simulate(spec, sample_qmatrix(spec), sample_truth(spec));
}

json SynthTruth::to_json(const FeatureSpace* space) const {
  json j = json::object();
  if (!ability.empty()) j["ability"] = ability;
  if (!difficulty.empty()) j["difficulty"] = difficulty;
  if (!skill_bias.empty()) {
    j["skill_bias"] = skill_bias;
    j["win_rate"] = win_rate;
    j["fail_rate"] = fail_rate;
  }
  if (!fm.w.empty()) {
    json fmj = {{"mu", fm.mu}, {"w", fm.w}, {"dim", fm.dim}};
    json v = json::array();
    for (std::size_t k = 0; k < fm.feature_count(); ++k) {
      auto row = fm.embedding_row(k);
      v.push_back(std::vector<double>(row.begin(), row.end()));
    }
    fmj["V"] = v;
    if (space != nullptr) {
      json blocks = json::array();
      for (const auto& b : space->blocks()) blocks.push_back({{"name", b.name}, {"width", b.width}});
      fmj["feature_space"] = blocks;
    }
    j["fm"] = fmj;
  }
  return j;
}

void write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream triplets;
  triplets << "user_id,item_id,correct\n";
  for (const auto& t : data.triplets) triplets << t.student << ',' << t.item << ',' << t.outcome << '\n';
  write_file(dir / "triplets.csv", triplets.str());

  std::ostringstream q;
  write_qmatrix(q, data.qmatrix);
  write_file(dir / "qmatrix.csv", q.str());

  const SynthSpec& s = data.spec;
  std::optional<FeatureSpace> space;
  if (s.generator == Generator::mirt || s.generator == Generator::ktm)
    space = data.truth.encoding.feature_space(s.students, s.items, s.skills);
  json truth = {{"generator", to_string(s.generator)},
                {"students", s.students},
                {"items", s.items},
                {"skills", s.skills},
                {"dim", s.dim},
                {"attempts", s.attempts},
                {"link", to_string(s.link)},
                {"seed", s.seed},
                {"sigma", s.sigma},
                {"parameters", data.truth.to_json(space ? &*space : nullptr)}};
  write_file(dir / "truth.json", truth.dump(1) + "\n");
}

}  // namespace ktm
