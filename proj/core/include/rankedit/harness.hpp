#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankedit/datasets.hpp"
#include "rankedit/editor.hpp"
#include "rankedit/encoder.hpp"
#include "rankedit/metrics.hpp"
#include "rankedit/value_opt.hpp"

namespace rankedit {

// Everything a command needs, read from one JSON file. Relative paths are
// resolved against the directory holding the config file.
struct RunConfig {
  std::filesystem::path weights;         // clean model; also the frozen reference
  std::filesystem::path edited_weights;  // eval: model under test
  std::filesystem::path vocab;
  std::filesystem::path corpus;          // init-model vocabulary and covariance keys
  std::filesystem::path covariance_dir;  // cache, one file per layer
  std::filesystem::path dataset;
  DatasetFormat dataset_format = DatasetFormat::kRoad;
  std::filesystem::path time_dataset;    // seq-edit: interleaved with `dataset`
  std::filesystem::path captions;        // distractor pool for the contrastive set
  std::filesystem::path request;         // edit: explicit request JSON
  std::filesystem::path scores;          // eval: external score CSV
  std::filesystem::path output_dir = "out";

  std::vector<std::uint64_t> seeds;      // default 0..24
  std::optional<std::size_t> layer;
  std::vector<std::size_t> layers;       // sweep-layers; empty = all
  std::string entry;                     // edit / sweep-layers entry id
  OptimizerConfig optimizer;
  std::vector<std::string> templates;    // empty = default key templates
  EncoderConfig model;                   // init-model; vocab_size caps the vocabulary
  double epsilon_scale = kDefaultEpsilonScale;
  std::size_t checkpoint_interval = 10;

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;
};

// "0,3,7" or "0-24" or a mix ("0-3,9").
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

std::filesystem::path covariance_cache_path(const RunConfig& cfg, std::size_t layer);

// Each command returns a JSON summary of what it wrote; failures throw
// rankedit::Error.
nlohmann::json cmd_init_model(const RunConfig& cfg);
nlohmann::json cmd_estimate_cov(const RunConfig& cfg);
nlohmann::json cmd_edit(const RunConfig& cfg);
nlohmann::json cmd_seq_edit(const RunConfig& cfg);
nlohmann::json cmd_eval(const RunConfig& cfg, bool edit_each);
nlohmann::json cmd_sweep_layers(const RunConfig& cfg);

struct SweepRow {
  std::size_t layer = 0;
  MetricValues metrics;  // all absent when the layer failed
  std::string error;
};

struct SweepReport {
  std::string request_id;
  std::vector<SweepRow> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// Sweep over `layers` for one entry, each row on a fresh copy of `clean`.
SweepReport sweep_layers(const EncoderWeights& clean, const Vocabulary& vocab,
                         const DatasetEntry& entry, DatasetFormat format,
                         const std::vector<std::size_t>& layers,
                         const std::function<CovarianceStats(std::size_t)>& covariance_for,
                         const std::vector<std::string>& templates,
                         const OptimizerConfig& opt, const std::vector<std::string>& captions,
                         const std::vector<std::uint64_t>& seeds);

// RoAD and TIME entries alternated, starting with RoAD.
std::vector<std::pair<DatasetEntry, DatasetFormat>> interleave(const DatasetFile& road,
                                                               const DatasetFile* time);

}  // namespace rankedit
