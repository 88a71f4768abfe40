#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankedit/encoder.hpp"
#include "rankedit/types.hpp"

namespace rankedit {

enum class DistanceMetric { kL2, kCosine };
enum class Objective { kContrastive, kDirect };
// Statistic compared against the stop threshold for the contrastive
// objective.
enum class StopStatistic { kTargetProbability, kOneMinusLoss };
enum class UpdateRule { kAdam, kGradientDescent };

struct OptimizerConfig {
  double learning_rate = 0.05;
  std::size_t max_steps = 100;
  double stop_threshold = 0.99;
  DistanceMetric distance = DistanceMetric::kL2;
  Objective objective = Objective::kContrastive;
  StopStatistic stop_statistic = StopStatistic::kTargetProbability;
  UpdateRule update_rule = UpdateRule::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Size of the contrastive set including the target.
  std::size_t num_contrastive = 20;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

// The target embedding sits at index 0 of distances(); the contrastive
// embeddings follow with the source prompt first.
struct ContrastiveSet {
  Vec target;
  std::vector<Vec> contrastive;

  std::size_t size() const { return 1 + contrastive.size(); }
};

using TargetSpec = std::variant<std::string, Vec>;

// Encodes the target (or takes the supplied vector), the source prompt and
// `num_contrastive - 2` distractors drawn without replacement from
// `distractor_pool` with a generator seeded by `seed`.
ContrastiveSet build_contrastive_set(const EncoderWeights& frozen, const Vocabulary& vocab,
                                     const TargetSpec& target, const std::string& source_text,
                                     std::span<const std::string> distractor_pool,
                                     std::size_t num_contrastive, std::uint64_t seed);

double distance(const Vec& a, const Vec& b, DistanceMetric metric);
// d distance(a, b) / d a.
Vec distance_gradient(const Vec& a, const Vec& b, DistanceMetric metric);

// exp(d_target) / sum_j exp(d_j).
double contrastive_loss(std::span<const double> distances);
// exp(-d_target) / sum_j exp(-d_j).
double target_probability(std::span<const double> distances);
double direct_loss(const Vec& sub_embedding, const Vec& target, DistanceMetric metric);

std::vector<double> set_distances(const Vec& embedding, const ContrastiveSet& set,
                                  DistanceMetric metric);

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double target_probability = 0.0;
  double target_distance = 0.0;
};

struct ValueResult {
  Vec v_star;
  Vec v_initial;
  std::size_t steps = 0;
  bool converged = false;
  std::size_t best_step = 0;
  std::vector<LossRecord> history;
};

// Optimizes the MLP output substituted at (layer, token) of `model` so that
// the EOS embedding of `prompt` moves toward set.target. `history[0]` is the
// starting point; one record is appended per update step.
ValueResult optimize_value(const EncoderWeights& model, const TokenSequence& prompt,
                           std::size_t layer, std::size_t token, const ContrastiveSet& set,
                           const OptimizerConfig& cfg);

nlohmann::json loss_history_json(const std::vector<LossRecord>& history);

}  // namespace rankedit
