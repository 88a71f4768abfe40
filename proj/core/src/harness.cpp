#include "rankedit/harness.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "rankedit/error.hpp"
#include "rankedit/io.hpp"

namespace rankedit {

namespace fs = std::filesystem;

namespace {

void require_file(const fs::path& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("config: '") + what + "' is not set");
  if (!fs::is_regular_file(path)) {
    throw DataError(std::string(what) + ": cannot open '" + path.string() + "'");
  }
}

std::vector<std::string> read_corpus(const fs::path& path, const char* what) {
  require_file(path, what);
  auto lines = read_lines(path);
  if (lines.empty()) throw DataError(std::string(what) + ": '" + path.string() + "' is empty");
  return lines;
}

Vocabulary load_checked_vocab(const RunConfig& cfg,
                              std::initializer_list<const EncoderWeights*> models) {
  require_file(cfg.vocab, "vocab");
  Vocabulary vocab = Vocabulary::load(cfg.vocab);
  const std::string digest = vocab.digest();
  for (const EncoderWeights* w : models) {
    if (!w->vocab_digest.empty() && w->vocab_digest != digest) {
      throw DataError("weights were built against a different vocabulary (digest " +
                      w->vocab_digest + ", vocab file " + digest + ")");
    }
    if (w->config.vocab_size != vocab.size()) {
      throw DataError("weights expect " + std::to_string(w->config.vocab_size) +
                      " tokens, vocab file has " + std::to_string(vocab.size()));
    }
  }
  return vocab;
}

EncoderWeights load_weights(const fs::path& path, const char* what) {
  require_file(path, what);
  return EncoderWeights::load(path);
}

std::size_t layer_for(const RunConfig& cfg, DatasetFormat format) {
  if (cfg.layer) return *cfg.layer;
  return format == DatasetFormat::kRoad ? kDefaultRoadLayer : kDefaultTimeLayer;
}

// Loads the cached second moment for `layer`, estimating and caching it
// first when `compute` is set.
CovarianceStats covariance(const RunConfig& cfg, const EncoderWeights& w,
                           const Vocabulary& vocab, std::size_t layer, bool compute) {
  const fs::path path = covariance_cache_path(cfg, layer);
  if (fs::is_regular_file(path)) {
    CovarianceStats c = CovarianceStats::load(path);
    if (c.layer != layer || c.second_moment.rows() != static_cast<Eigen::Index>(w.config.d_mlp)) {
      throw DataError(path.string() + ": cached covariance does not match layer " +
                      std::to_string(layer) + " of this model");
    }
    return c;
  }
  if (!compute) {
    throw DataError("no covariance cache for layer " + std::to_string(layer) + " at '" +
                    path.string() + "'; run estimate-cov first");
  }
  const auto lines = read_corpus(cfg.corpus, "corpus");
  CovarianceStats c = estimate_covariance(w, vocab, lines, layer, cfg.epsilon_scale);
  c.save(path);
  return c;
}

std::vector<std::string> captions_of(const RunConfig& cfg) {
  return read_corpus(cfg.captions, "captions");
}

DatasetFile load_dataset(const fs::path& path, DatasetFormat format) {
  require_file(path, "dataset");
  return format == DatasetFormat::kRoad ? load_road(path) : load_time(path);
}

std::string metric_cell(const std::optional<double>& v) {
  if (!v) return "nan";
  std::ostringstream out;
  out << std::setprecision(17) << *v;
  return out.str();
}

nlohmann::json metrics_json(const MetricValues& v) {
  auto cell = [](const std::optional<double>& x) {
    return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
  };
  return {{"efficacy", cell(v.efficacy)},
          {"generalization", cell(v.generalization)},
          {"specificity", cell(v.specificity)},
          {"f1", cell(v.f1)}};
}

std::string audit_name(std::size_t index, const std::string& id) {
  std::ostringstream out;
  out << std::setw(3) << std::setfill('0') << index << '_' << id << ".json";
  return out.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

fs::path resolve(const nlohmann::json& j, const char* key, const fs::path& base) {
  if (!j.contains(key)) return {};
  if (!j[key].is_string()) throw DataError(std::string("config: ") + key + ": expected a path");
  fs::path p = j[key].get<std::string>();
  return p.is_absolute() ? p : base / p;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(text);
  std::string item;
  auto number = [&](const std::string& s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw UsageError("seed list: '" + s + "' is not an unsigned integer");
    }
    return v;
  };
  while (std::getline(in, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(number(item));
      continue;
    }
    const auto lo = number(item.substr(0, dash));
    const auto hi = number(item.substr(dash + 1));
    if (hi < lo) throw UsageError("seed list: empty range '" + item + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw UsageError("seed list is empty");
  return seeds;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw DataError("config: top level must be an object");
  RunConfig c;
  try {
    c.weights = resolve(j, "weights", base_dir);
    c.edited_weights = resolve(j, "edited_weights", base_dir);
    c.vocab = resolve(j, "vocab", base_dir);
    c.corpus = resolve(j, "corpus", base_dir);
    c.covariance_dir = resolve(j, "covariance_dir", base_dir);
    c.dataset = resolve(j, "dataset", base_dir);
    c.time_dataset = resolve(j, "time_dataset", base_dir);
    c.captions = resolve(j, "captions", base_dir);
    c.request = resolve(j, "request", base_dir);
    c.scores = resolve(j, "scores", base_dir);
    if (j.contains("output_dir")) c.output_dir = resolve(j, "output_dir", base_dir);
    const auto format = j.value("dataset_format", std::string("road"));
    if (format == "road") {
      c.dataset_format = DatasetFormat::kRoad;
    } else if (format == "time") {
      c.dataset_format = DatasetFormat::kTime;
    } else {
      throw DataError("config: dataset_format: expected 'road' or 'time'");
    }
    if (j.contains("seeds")) {
      c.seeds = j["seeds"].is_string() ? parse_seed_list(j["seeds"].get<std::string>())
                                       : j["seeds"].get<std::vector<std::uint64_t>>();
    }
    if (j.contains("layer") && !j["layer"].is_null()) c.layer = j["layer"].get<std::size_t>();
    c.layers = j.value("layers", c.layers);
    c.entry = j.value("entry", c.entry);
    if (j.contains("optimizer")) c.optimizer = OptimizerConfig::from_json(j["optimizer"]);
    c.templates = j.value("templates", c.templates);
    if (j.contains("model")) c.model = EncoderConfig::from_json(j["model"]);
    c.epsilon_scale = j.value("epsilon_scale", c.epsilon_scale);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  if (c.seeds.empty()) {
    for (std::uint64_t s = 0; s < 25; ++s) c.seeds.push_back(s);
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  require_file(path, "config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void RunConfig::validate() const {
  if (seeds.empty()) throw UsageError("config: seeds must be nonempty");
  std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) throw UsageError("config: seeds must be distinct");
  if (!(epsilon_scale >= 0.0) || !std::isfinite(epsilon_scale)) {
    throw UsageError("config: epsilon_scale must be a finite nonnegative number");
  }
  if (checkpoint_interval == 0) throw UsageError("config: checkpoint_interval must be >= 1");
  optimizer.validate();
}

fs::path covariance_cache_path(const RunConfig& cfg, std::size_t layer) {
  const fs::path dir = cfg.covariance_dir.empty() ? cfg.output_dir / "covariance"
                                                  : cfg.covariance_dir;
  return dir / ("layer_" + std::to_string(layer) + ".bin");
}

nlohmann::json cmd_init_model(const RunConfig& cfg) {
  cfg.validate();
  const auto lines = read_corpus(cfg.corpus, "corpus");
  constexpr std::size_t kSpecials = 4;
  if (cfg.model.vocab_size <= kSpecials) {
    throw DataError("model.vocab_size must exceed the " + std::to_string(kSpecials) +
                    " special tokens");
  }
  const Vocabulary vocab = Vocabulary::build_from_corpus(lines, cfg.model.vocab_size - kSpecials);
  EncoderConfig model = cfg.model;
  model.vocab_size = vocab.size();
  EncoderWeights w = EncoderWeights::random_init(model);
  w.vocab_digest = vocab.digest();

  const fs::path weights_path = cfg.output_dir / "model.bin";
  const fs::path vocab_path = cfg.output_dir / "vocab.txt";
  vocab.save(vocab_path);
  w.save(weights_path);
  return {{"weights", weights_path.string()},
          {"vocab", vocab_path.string()},
          {"vocab_size", vocab.size()},
          {"parameters", w.parameter_count()}};
}

nlohmann::json cmd_estimate_cov(const RunConfig& cfg) {
  cfg.validate();
  const EncoderWeights w = load_weights(cfg.weights, "weights");
  const Vocabulary vocab = load_checked_vocab(cfg, {&w});
  const auto lines = read_corpus(cfg.corpus, "corpus");
  std::vector<std::size_t> layers;
  if (cfg.layer) {
    layers.push_back(*cfg.layer);
  } else {
    for (std::size_t l = 0; l < w.config.n_layers; ++l) layers.push_back(l);
  }
  nlohmann::json written = nlohmann::json::array();
  for (auto layer : layers) {
    const CovarianceStats c = estimate_covariance(w, vocab, lines, layer, cfg.epsilon_scale);
    const fs::path path = covariance_cache_path(cfg, layer);
    c.save(path);
    written.push_back({{"layer", layer},
                       {"path", path.string()},
                       {"samples", c.sample_count},
                       {"epsilon", c.epsilon}});
  }
  return {{"covariance", written}};
}

nlohmann::json cmd_edit(const RunConfig& cfg) {
  cfg.validate();
  const EncoderWeights w = load_weights(cfg.weights, "weights");
  const Vocabulary vocab = load_checked_vocab(cfg, {&w});
  EditRequest req;
  if (!cfg.request.empty()) {
    require_file(cfg.request, "request");
    try {
      req = EditRequest::from_json(nlohmann::json::parse(read_text_file(cfg.request)));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(cfg.request.string() + ": " + e.what());
    }
    if (cfg.layer) req.layer = *cfg.layer;
  } else {
    if (cfg.entry.empty()) throw UsageError("edit needs either 'request' or 'entry'");
    const DatasetFile ds = load_dataset(cfg.dataset, cfg.dataset_format);
    req = to_edit_request(ds.find(cfg.entry), cfg.dataset_format,
                          layer_for(cfg, cfg.dataset_format), cfg.templates);
  }
  if (req.layer >= w.config.n_layers) {
    throw UsageError("layer " + std::to_string(req.layer) + " out of range for a " +
                     std::to_string(w.config.n_layers) + "-layer model");
  }
  const CovarianceStats cov = covariance(cfg, w, vocab, req.layer, false);
  const auto captions = captions_of(cfg);
  if (req.contrastive_corpus.empty()) req.contrastive_corpus = cfg.captions.string();
  const EditResult result = edit(w, w, vocab, req, cov, cfg.optimizer, captions);

  const fs::path weights_path = cfg.output_dir / "edited.bin";
  const fs::path audit_path = cfg.output_dir / "audits" / audit_name(0, req.id);
  result.weights.save(weights_path);
  write_json(audit_path, result.audit.to_json());
  return {{"weights", weights_path.string()},
          {"audit", audit_path.string()},
          {"lambda_norm", result.audit.lambda_norm},
          {"optimizer_steps", result.audit.optimizer_steps},
          {"converged", result.audit.converged}};
}

std::vector<std::pair<DatasetEntry, DatasetFormat>> interleave(const DatasetFile& road,
                                                               const DatasetFile* time) {
  std::vector<std::pair<DatasetEntry, DatasetFormat>> out;
  const std::size_t n_time = time ? time->entries.size() : 0;
  for (std::size_t i = 0; i < std::max(road.entries.size(), n_time); ++i) {
    if (i < road.entries.size()) out.emplace_back(road.entries[i], road.format);
    if (i < n_time) out.emplace_back(time->entries[i], time->format);
  }
  return out;
}

nlohmann::json cmd_seq_edit(const RunConfig& cfg) {
  cfg.validate();
  const EncoderWeights w = load_weights(cfg.weights, "weights");
  const Vocabulary vocab = load_checked_vocab(cfg, {&w});
  const DatasetFile primary = load_dataset(cfg.dataset, cfg.dataset_format);
  std::optional<DatasetFile> time;
  if (!cfg.time_dataset.empty()) time = load_dataset(cfg.time_dataset, DatasetFormat::kTime);
  const auto order = interleave(primary, time ? &*time : nullptr);

  std::vector<EditRequest> reqs;
  std::map<std::size_t, CovarianceStats> covs;
  for (const auto& [entry, format] : order) {
    reqs.push_back(to_edit_request(entry, format, layer_for(cfg, format), cfg.templates));
    reqs.back().contrastive_corpus = cfg.captions.string();
    if (reqs.back().layer >= w.config.n_layers) {
      throw UsageError("entry '" + entry.id + "': layer " + std::to_string(reqs.back().layer) +
                       " out of range; pass --layer");
    }
    if (!covs.count(reqs.back().layer)) {
      covs.emplace(reqs.back().layer, covariance(cfg, w, vocab, reqs.back().layer, false));
    }
  }
  const auto captions = captions_of(cfg);

  // Applied one at a time so the metrics curve can be sampled every
  // checkpoint_interval edits.
  EncoderWeights current = w;
  std::vector<RankOneEdit> audits;
  std::ostringstream curve;
  curve << "edits,efficacy,generality,specificity,f1\n";
  std::size_t curve_rows = 0;
  auto checkpoint = [&](std::size_t done) {
    std::vector<ScoreRecord> records;
    for (std::size_t i = 0; i < done; ++i) {
      auto r = proxy_records(current, w, vocab, order[i].first, cfg.seeds);
      records.insert(records.end(), r.begin(), r.end());
    }
    const MetricReport rep = aggregate(records);
    curve << done << ',' << metric_cell(rep.mean.efficacy) << ','
          << metric_cell(rep.mean.generalization) << ',' << metric_cell(rep.mean.specificity)
          << ',' << metric_cell(rep.mean.f1) << '\n';
    ++curve_rows;
  };
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    try {
      EditResult r = edit(current, w, vocab, reqs[i], covs.at(reqs[i].layer), cfg.optimizer,
                          captions);
      current = std::move(r.weights);
      write_json(cfg.output_dir / "audits" / audit_name(i, reqs[i].id), r.audit.to_json());
      audits.push_back(std::move(r.audit));
    } catch (const Error& e) {
      current.save(cfg.output_dir / "last_good.bin");
      throw Error(e.kind(), "edit " + std::to_string(i) + " ('" + reqs[i].id +
                                "') failed: " + e.what() + "; last good weights saved");
    }
    if ((i + 1) % cfg.checkpoint_interval == 0) checkpoint(i + 1);
  }
  if (reqs.size() % cfg.checkpoint_interval != 0) checkpoint(reqs.size());

  const fs::path weights_path = cfg.output_dir / "edited.bin";
  const fs::path curve_path = cfg.output_dir / "metrics_curve.csv";
  current.save(weights_path);
  write_text_file(curve_path, curve.str());
  return {{"weights", weights_path.string()},
          {"edits", audits.size()},
          {"metrics_curve", curve_path.string()},
          {"checkpoints", curve_rows}};
}

nlohmann::json cmd_eval(const RunConfig& cfg, bool edit_each) {
  cfg.validate();
  const EncoderWeights frozen = load_weights(cfg.weights, "weights");
  std::optional<EncoderWeights> edited;
  if (!edit_each && cfg.scores.empty()) {
    edited = load_weights(cfg.edited_weights.empty() ? cfg.weights : cfg.edited_weights,
                          "edited_weights");
  }
  const Vocabulary vocab = edited ? load_checked_vocab(cfg, {&frozen, &*edited})
                                  : load_checked_vocab(cfg, {&frozen});
  const DatasetFile ds = load_dataset(cfg.dataset, cfg.dataset_format);

  std::vector<ScoreRecord> records;
  std::string source = "proxy";
  if (!cfg.scores.empty()) {
    require_file(cfg.scores, "scores");
    records = ingest_external_scores(cfg.scores);
    source = "external";
  } else if (edit_each) {
    const auto captions = captions_of(cfg);
    const std::size_t layer = layer_for(cfg, cfg.dataset_format);
    const CovarianceStats cov = covariance(cfg, frozen, vocab, layer, true);
    for (const auto& entry : ds.entries) {
      EditRequest req = to_edit_request(entry, cfg.dataset_format, layer, cfg.templates);
      req.contrastive_corpus = cfg.captions.string();
      const EditResult r = edit(frozen, frozen, vocab, req, cov, cfg.optimizer, captions);
      auto recs = proxy_records(r.weights, frozen, vocab, entry, cfg.seeds);
      records.insert(records.end(), recs.begin(), recs.end());
    }
  } else {
    for (const auto& entry : ds.entries) {
      auto recs = proxy_records(*edited, frozen, vocab, entry, cfg.seeds);
      records.insert(records.end(), recs.begin(), recs.end());
    }
  }
  const MetricReport report = aggregate(records);
  nlohmann::json j = report.to_json();
  j["score_source"] = source;
  j["entries"] = ds.entries.size();

  const fs::path json_path = cfg.output_dir / "report.json";
  const fs::path csv_path = cfg.output_dir / "report.csv";
  const fs::path scores_path = cfg.output_dir / "scores.csv";
  write_json(json_path, j);
  write_text_file(csv_path, report.to_csv());
  write_text_file(scores_path, emit_score_csv(records));
  return {{"report", json_path.string()},
          {"csv", csv_path.string()},
          {"scores", scores_path.string()},
          {"metrics", j["metrics"]}};
}

SweepReport sweep_layers(const EncoderWeights& clean, const Vocabulary& vocab,
                         const DatasetEntry& entry, DatasetFormat format,
                         const std::vector<std::size_t>& layers,
                         const std::function<CovarianceStats(std::size_t)>& covariance_for,
                         const std::vector<std::string>& templates,
                         const OptimizerConfig& opt, const std::vector<std::string>& captions,
                         const std::vector<std::uint64_t>& seeds) {
  SweepReport report;
  report.request_id = entry.id;
  for (auto layer : layers) {
    SweepRow row;
    row.layer = layer;
    try {
      if (layer >= clean.config.n_layers) {
        throw UsageError("layer " + std::to_string(layer) + " out of range");
      }
      const EditRequest req = to_edit_request(entry, format, layer, templates);
      const EncoderWeights fresh = clean;
      const EditResult r = edit(fresh, clean, vocab, req, covariance_for(layer), opt, captions);
      row.metrics = aggregate(proxy_records(r.weights, clean, vocab, entry, seeds)).mean;
    } catch (const Error& e) {
      row.metrics = {};
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string SweepReport::to_csv() const {
  std::ostringstream out;
  out << "layer,efficacy,generality,specificity,f1\n";
  for (const auto& r : rows) {
    out << r.layer << ',' << metric_cell(r.metrics.efficacy) << ','
        << metric_cell(r.metrics.generalization) << ',' << metric_cell(r.metrics.specificity)
        << ',' << metric_cell(r.metrics.f1) << '\n';
  }
  return out.str();
}

nlohmann::json SweepReport::to_json() const {
  auto arr = nlohmann::json::array();
  std::vector<std::size_t> layer_list;
  for (const auto& r : rows) {
    auto j = metrics_json(r.metrics);
    j["layer"] = r.layer;
    if (!r.error.empty()) j["error"] = r.error;
    arr.push_back(std::move(j));
    layer_list.push_back(r.layer);
  }
  return {{"request_id", request_id}, {"layers", layer_list}, {"rows", arr}};
}

nlohmann::json cmd_sweep_layers(const RunConfig& cfg) {
  cfg.validate();
  const EncoderWeights clean = load_weights(cfg.weights, "weights");
  const Vocabulary vocab = load_checked_vocab(cfg, {&clean});
  const DatasetFile ds = load_dataset(cfg.dataset, cfg.dataset_format);
  if (cfg.entry.empty()) throw UsageError("sweep-layers needs 'entry'");
  const DatasetEntry& entry = ds.find(cfg.entry);
  std::vector<std::size_t> layers = cfg.layers;
  if (layers.empty()) {
    for (std::size_t l = 0; l < clean.config.n_layers; ++l) layers.push_back(l);
  }
  const auto captions = captions_of(cfg);
  const SweepReport report = sweep_layers(
      clean, vocab, entry, cfg.dataset_format, layers,
      [&](std::size_t layer) { return covariance(cfg, clean, vocab, layer, true); },
      cfg.templates, cfg.optimizer, captions, cfg.seeds);

  const fs::path csv_path = cfg.output_dir / "sweep.csv";
  const fs::path json_path = cfg.output_dir / "sweep.json";
  write_text_file(csv_path, report.to_csv());
  write_json(json_path, report.to_json());
  return {{"sweep", csv_path.string()}, {"report", json_path.string()}, {"rows", report.rows.size()}};
}

}  // namespace rankedit
