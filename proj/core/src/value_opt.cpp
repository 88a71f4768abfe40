#include "rankedit/value_opt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "rankedit/error.hpp"

namespace rankedit {

namespace {

void require_finite(std::span<const double> distances, const char* what) {
  if (distances.empty()) {
    throw DataError(std::string(what) + ": need at least one distance");
  }
  for (double d : distances) {
    if (!std::isfinite(d)) {
      throw NumericError(std::string(what) + ": non-finite distance");
    }
  }
}

// softmax(sign * d) evaluated at every index.
std::vector<double> softmax(std::span<const double> distances, double sign) {
  double max_value = -std::numeric_limits<double>::infinity();
  for (double d : distances) max_value = std::max(max_value, sign * d);
  std::vector<double> p(distances.size());
  double total = 0.0;
  for (std::size_t j = 0; j < distances.size(); ++j) {
    p[j] = std::exp(sign * distances[j] - max_value);
    total += p[j];
  }
  for (double& x : p) x /= total;
  return p;
}

const char* metric_name(DistanceMetric m) {
  return m == DistanceMetric::kL2 ? "l2" : "cosine";
}

struct Evaluation {
  double loss = 0.0;
  double probability = 0.0;
  double target_distance = 0.0;
  Vec loss_grad;  // d loss / d embedding
};

Evaluation evaluate(const Vec& embedding, const ContrastiveSet& set,
                    const OptimizerConfig& cfg) {
  Evaluation e;
  const auto d = set_distances(embedding, set, cfg.distance);
  e.target_distance = d[0];
  e.probability = target_probability(d);
  if (cfg.objective == Objective::kDirect) {
    e.loss = d[0];
    e.loss_grad = distance_gradient(embedding, set.target, cfg.distance);
    return e;
  }
  const auto p = softmax(d, 1.0);
  e.loss = p[0];
  // d p0 / d d_j = p0 * (delta_0j - p_j)
  e.loss_grad = Vec::Zero(embedding.size());
  for (std::size_t j = 0; j < d.size(); ++j) {
    const double coeff = p[0] * ((j == 0 ? 1.0 : 0.0) - p[j]);
    if (coeff == 0.0) continue;
    const Vec& other = j == 0 ? set.target : set.contrastive[j - 1];
    e.loss_grad += coeff * distance_gradient(embedding, other, cfg.distance);
  }
  return e;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw DataError("optimizer: learning_rate must be > 0");
  }
  if (!(stop_threshold > 0.0 && stop_threshold <= 1.0)) {
    throw DataError("optimizer: stop_threshold must lie in (0, 1]");
  }
  if (max_steps < 1) {
    throw DataError("optimizer: max_steps must be >= 1");
  }
  if (num_contrastive < 1) {
    throw DataError("optimizer: num_contrastive must be >= 1");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw DataError("optimizer: adam betas must lie in [0, 1)");
  }
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"max_steps", max_steps},
          {"stop_threshold", stop_threshold},
          {"distance", metric_name(distance)},
          {"objective", objective == Objective::kContrastive ? "contrastive" : "direct"},
          {"stop_statistic", stop_statistic == StopStatistic::kTargetProbability
                                 ? "target_probability"
                                 : "one_minus_loss"},
          {"update_rule", update_rule == UpdateRule::kAdam ? "adam" : "gd"},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_epsilon", adam_epsilon},
          {"num_contrastive", num_contrastive},
          {"seed", seed}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  auto pick = [&](const char* key, const std::string& fallback,
                  std::initializer_list<const char*> allowed) {
    const auto value = j.value(key, fallback);
    for (const char* a : allowed) {
      if (value == a) return value;
    }
    throw DataError(std::string("optimizer: unknown ") + key + " '" + value + "'");
  };
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.stop_threshold = j.value("stop_threshold", c.stop_threshold);
    c.distance = pick("distance", "l2", {"l2", "cosine"}) == "l2" ? DistanceMetric::kL2
                                                                  : DistanceMetric::kCosine;
    c.objective = pick("objective", "contrastive", {"contrastive", "direct"}) == "contrastive"
                      ? Objective::kContrastive
                      : Objective::kDirect;
    c.stop_statistic =
        pick("stop_statistic", "target_probability",
             {"target_probability", "one_minus_loss"}) == "target_probability"
            ? StopStatistic::kTargetProbability
            : StopStatistic::kOneMinusLoss;
    c.update_rule = pick("update_rule", "adam", {"adam", "gd"}) == "adam"
                        ? UpdateRule::kAdam
                        : UpdateRule::kGradientDescent;
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.num_contrastive = j.value("num_contrastive", c.num_contrastive);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("optimizer: ") + e.what());
  }
  c.validate();
  return c;
}

ContrastiveSet build_contrastive_set(const EncoderWeights& frozen, const Vocabulary& vocab,
                                     const TargetSpec& target, const std::string& source_text,
                                     std::span<const std::string> distractor_pool,
                                     std::size_t num_contrastive, std::uint64_t seed) {
  if (num_contrastive < 1) {
    throw DataError("contrastive set needs at least the target");
  }
  const std::size_t max_len = frozen.config.max_seq_len;
  auto embed = [&](const std::string& text) {
    return encode(frozen, tokenize(text, vocab, max_len)).eos_embedding;
  };

  ContrastiveSet set;
  std::string target_text;
  if (const auto* text = std::get_if<std::string>(&target)) {
    target_text = *text;
    set.target = embed(*text);
  } else {
    set.target = std::get<Vec>(target);
    if (static_cast<std::size_t>(set.target.size()) != frozen.config.d_model) {
      throw DataError("target embedding must have dimension d_model");
    }
    if (!set.target.allFinite()) {
      throw DataError("target embedding has non-finite entries");
    }
  }
  if (num_contrastive >= 2) {
    set.contrastive.push_back(embed(source_text));
  }

  std::vector<std::size_t> order(distractor_pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t idx : order) {
    if (set.size() >= num_contrastive) break;
    const auto& caption = distractor_pool[idx];
    if (caption == source_text || caption == target_text) continue;
    set.contrastive.push_back(embed(caption));
  }
  return set;
}

double distance(const Vec& a, const Vec& b, DistanceMetric metric) {
  if (a.size() != b.size()) {
    throw DataError("distance: dimension mismatch");
  }
  if (metric == DistanceMetric::kL2) {
    return (a - b).norm();
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw DataError("cosine distance is undefined for a zero vector");
  }
  return 1.0 - a.dot(b) / (na * nb);
}

Vec distance_gradient(const Vec& a, const Vec& b, DistanceMetric metric) {
  if (metric == DistanceMetric::kL2) {
    const Vec diff = a - b;
    const double n = diff.norm();
    if (n == 0.0) return Vec::Zero(a.size());
    return diff / n;
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw DataError("cosine distance is undefined for a zero vector");
  }
  const double cos = a.dot(b) / (na * nb);
  return -(b / (na * nb) - cos * a / (na * na));
}

double contrastive_loss(std::span<const double> distances) {
  require_finite(distances, "contrastive_loss");
  return softmax(distances, 1.0)[0];
}

double target_probability(std::span<const double> distances) {
  require_finite(distances, "target_probability");
  return softmax(distances, -1.0)[0];
}

double direct_loss(const Vec& sub_embedding, const Vec& target, DistanceMetric metric) {
  return distance(sub_embedding, target, metric);
}

std::vector<double> set_distances(const Vec& embedding, const ContrastiveSet& set,
                                  DistanceMetric metric) {
  std::vector<double> d;
  d.reserve(set.size());
  d.push_back(distance(embedding, set.target, metric));
  for (const auto& c : set.contrastive) d.push_back(distance(embedding, c, metric));
  return d;
}

ValueResult optimize_value(const EncoderWeights& model, const TokenSequence& prompt,
                           std::size_t layer, std::size_t token, const ContrastiveSet& set,
                           const OptimizerConfig& cfg) {
  cfg.validate();
  if (layer >= model.config.n_layers || token >= prompt.eos_position()) {
    throw DataError("optimize_value: invalid substitution point");
  }
  const auto d = static_cast<Eigen::Index>(model.config.d_model);
  if (set.target.size() != d ||
      std::any_of(set.contrastive.begin(), set.contrastive.end(),
                  [&](const Vec& c) { return c.size() != d; })) {
    throw DataError("optimize_value: contrastive set dimension mismatch");
  }

  ValueResult result;
  result.v_initial =
      encode(model, prompt).trace.layers[layer].mlp_out.row(static_cast<Eigen::Index>(token))
          .transpose();
  Vec v = result.v_initial;

  auto run_eval = [&](std::size_t step) {
    const Vec embedding = encode_with_substitution(model, prompt, layer, token, v);
    Evaluation e = evaluate(embedding, set, cfg);
    if (!std::isfinite(e.loss) || !e.loss_grad.allFinite()) {
      std::ostringstream msg;
      msg << "optimize_value: non-finite loss at step " << step << " (|v| = " << v.norm()
          << ", loss = " << e.loss << ")";
      throw NumericError(msg.str());
    }
    result.history.push_back({step, e.loss, e.probability, e.target_distance});
    return e;
  };

  Evaluation current = run_eval(0);
  const double initial_loss = current.loss;
  double best_loss = current.loss;
  result.v_star = v;

  auto should_stop = [&](const Evaluation& e) {
    if (cfg.objective == Objective::kDirect) {
      return e.loss <= (1.0 - cfg.stop_threshold) * initial_loss;
    }
    const double statistic = cfg.stop_statistic == StopStatistic::kTargetProbability
                                 ? e.probability
                                 : 1.0 - e.loss;
    return statistic >= cfg.stop_threshold;
  };

  if (should_stop(current)) {
    result.converged = true;
    return result;
  }

  Vec m = Vec::Zero(d);
  Vec s = Vec::Zero(d);
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const Vec g = grad_wrt_substitution(model, prompt, layer, token, v, current.loss_grad);
    if (cfg.update_rule == UpdateRule::kAdam) {
      beta1_pow *= cfg.adam_beta1;
      beta2_pow *= cfg.adam_beta2;
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
      s = cfg.adam_beta2 * s + (1.0 - cfg.adam_beta2) * g.cwiseAbs2();
      const Vec m_hat = m / (1.0 - beta1_pow);
      const Vec s_hat = s / (1.0 - beta2_pow);
      v -= cfg.learning_rate *
           (m_hat.array() / (s_hat.array().sqrt() + cfg.adam_epsilon)).matrix();
    } else {
      v -= cfg.learning_rate * g;
    }

    current = run_eval(step);
    result.steps = step;
    if (current.loss < best_loss) {
      best_loss = current.loss;
      result.v_star = v;
      result.best_step = step;
    }
    if (should_stop(current)) {
      result.converged = true;
      break;
    }
  }
  return result;
}

nlohmann::json loss_history_json(const std::vector<LossRecord>& history) {
  auto out = nlohmann::json::array();
  for (const auto& r : history) {
    out.push_back({{"step", r.step},
                   {"loss", r.loss},
                   {"target_probability", r.target_probability},
                   {"target_distance", r.target_distance}});
  }
  return out;
}

}  // namespace rankedit
