#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ktm/encoder.hpp"
#include "ktm/fm_model.hpp"

namespace ktm {

enum class Generator { rasch, mirt, pfa, ktm };

Generator parse_generator(std::string_view name);
std::string to_string(Generator g);

struct SynthSpec {
  Generator generator = Generator::rasch;
  std::size_t students = 50;
  std::size_t items = 20;
  std::size_t skills = 5;
  std::size_t dim = 2;  // mirt and ktm only
  /// Every student answers every item this many times.
  std::size_t attempts = 1;
  Link link = Link::logit;
  std::uint64_t seed = 42;
  double sigma = 1.0;

  void validate() const;
};

/// Generating parameters. Only the members of the chosen generator are set.
struct SynthTruth {
  // rasch: logit p = ability_i - difficulty_j
  std::vector<double> ability;
  std::vector<double> difficulty;
  // pfa: logit p = sum_{k in KC(j)} skill_bias_k + win_rate_k W_ik + fail_rate_k F_ik
  std::vector<double> skill_bias;
  std::vector<double> win_rate;
  std::vector<double> fail_rate;
  // mirt (users, items) and ktm (users, items, skills, wins, fails)
  EncodingConfig encoding;
  FMParams fm;

  nlohmann::json to_json(const FeatureSpace* space = nullptr) const;
};

struct SynthData {
  SynthSpec spec;
  QMatrix qmatrix;
  SynthTruth truth;
  std::vector<Triplet> triplets;
  /// Success probability each triplet was drawn with.
  std::vector<double> probabilities;
};

/// Each item gets each skill with probability 0.3, and at least one skill.
QMatrix sample_qmatrix(const SynthSpec& spec);
SynthTruth sample_truth(const SynthSpec& spec);

/// Simulates the log in rounds: each round, every student answers every item
/// in a fresh random order, counters updating as they go.
SynthData simulate(const SynthSpec& spec, const QMatrix& q, const SynthTruth& truth);

SynthData generate_synthetic(const SynthSpec& spec);

/// Writes triplets.csv, qmatrix.csv and truth.json into `dir`.
void write_synthetic(const SynthData& data, const std::filesystem::path& dir);

}  // namespace ktm
