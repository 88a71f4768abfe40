#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankedit/datasets.hpp"
#include "rankedit/encoder.hpp"

namespace rankedit {

enum class Polarity { kEfficacy, kPositive, kNegative };

struct ScoreRecord {
  std::string prompt_id;
  std::uint64_t seed = 0;
  double score_new = 0.0;
  double score_old = 0.0;
  Polarity polarity = Polarity::kEfficacy;
};

// Strict comparisons; ties fail.
bool positive_success(double score_new, double score_old);
bool negative_success(double score_new, double score_old);
bool record_success(const ScoreRecord& r);

// Geometric mean of generalization and specificity.
double f1_score(double generalization, double specificity);

struct MetricValues {
  std::optional<double> efficacy;
  std::optional<double> generalization;
  std::optional<double> specificity;
  std::optional<double> f1;
};

struct PromptTally {
  std::size_t successes = 0;
  std::size_t total = 0;
};

struct MetricReport {
  MetricValues mean;    // per-seed means averaged across seeds
  MetricValues stddev;  // population standard deviation across seeds
  std::map<std::uint64_t, MetricValues> per_seed;
  std::map<std::string, PromptTally> per_prompt;
  std::size_t record_count = 0;

  nlohmann::json to_json() const;
  // Header plus one row: efficacy,generality,specificity,f1.
  std::string to_csv() const;
};

MetricReport aggregate(std::span<const ScoreRecord> records);

// Cosine similarity between the edited encoder's prompt embedding and the
// frozen encoder's descriptor embedding.
double text_proxy_score(const EncoderWeights& edited, const EncoderWeights& frozen,
                        const std::string& prompt, const std::string& descriptor,
                        const Vocabulary& vocab);

// Proxy-scored records for one entry, replicated for every seed id (the
// proxy is deterministic, so seeds only label the rows).
std::vector<ScoreRecord> proxy_records(const EncoderWeights& edited,
                                       const EncoderWeights& frozen, const Vocabulary& vocab,
                                       const DatasetEntry& entry,
                                       std::span<const std::uint64_t> seeds);

std::vector<ScoreRecord> parse_score_csv(const std::string& text, const std::string& origin);
std::vector<ScoreRecord> ingest_external_scores(const std::filesystem::path& path);
std::string emit_score_csv(std::span<const ScoreRecord> records);

const char* to_string(Polarity polarity);

}  // namespace rankedit
