#include "rankedit/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "rankedit/error.hpp"
#include "rankedit/io.hpp"

namespace rankedit {

namespace {

constexpr const char* kScoreColumns[] = {"prompt_id", "seed", "polarity", "score_new",
                                         "score_old"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::optional<double> ratio(std::size_t successes, std::size_t total) {
  if (total == 0) return std::nullopt;
  return static_cast<double>(successes) / static_cast<double>(total);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json values_json(const MetricValues& v) {
  return {{"efficacy", optional_json(v.efficacy)},
          {"generalization", optional_json(v.generalization)},
          {"specificity", optional_json(v.specificity)},
          {"f1", optional_json(v.f1)}};
}

void with_f1(MetricValues& v) {
  if (v.generalization && v.specificity) {
    v.f1 = f1_score(*v.generalization, *v.specificity);
  }
}

}  // namespace

bool positive_success(double score_new, double score_old) { return score_new > score_old; }

bool negative_success(double score_new, double score_old) { return score_new < score_old; }

bool record_success(const ScoreRecord& r) {
  return r.polarity == Polarity::kNegative ? negative_success(r.score_new, r.score_old)
                                           : positive_success(r.score_new, r.score_old);
}

double f1_score(double generalization, double specificity) {
  return std::sqrt(generalization * specificity);
}

MetricReport aggregate(std::span<const ScoreRecord> records) {
  if (records.empty()) {
    throw DataError("aggregate: no score records");
  }
  struct Counts {
    std::size_t ok[3] = {0, 0, 0};
    std::size_t total[3] = {0, 0, 0};
  };
  std::map<std::uint64_t, Counts> by_seed;
  MetricReport report;
  for (const auto& r : records) {
    if (!std::isfinite(r.score_new) || !std::isfinite(r.score_old)) {
      throw DataError("aggregate: non-finite score for prompt '" + r.prompt_id + "'");
    }
    const auto p = static_cast<std::size_t>(r.polarity);
    const bool ok = record_success(r);
    Counts& c = by_seed[r.seed];
    c.total[p] += 1;
    c.ok[p] += ok ? 1 : 0;
    PromptTally& tally = report.per_prompt[r.prompt_id];
    tally.total += 1;
    tally.successes += ok ? 1 : 0;
  }
  report.record_count = records.size();

  auto efficacy_of = [](const MetricValues& v) { return v.efficacy; };
  auto general_of = [](const MetricValues& v) { return v.generalization; };
  auto specific_of = [](const MetricValues& v) { return v.specificity; };
  for (const auto& [seed, c] : by_seed) {
    MetricValues v;
    v.efficacy = ratio(c.ok[0], c.total[0]);
    v.generalization = ratio(c.ok[1], c.total[1]);
    v.specificity = ratio(c.ok[2], c.total[2]);
    with_f1(v);
    report.per_seed[seed] = v;
  }

  auto across_seeds = [&](auto getter, std::optional<double>& mean,
                          std::optional<double>& stddev) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [seed, v] : report.per_seed) {
      if (auto x = getter(v)) {
        sum += *x;
        ++n;
      }
    }
    if (n == 0) return;
    mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (const auto& [seed, v] : report.per_seed) {
      if (auto x = getter(v)) sq += (*x - *mean) * (*x - *mean);
    }
    stddev = std::sqrt(sq / static_cast<double>(n));
  };
  across_seeds(efficacy_of, report.mean.efficacy, report.stddev.efficacy);
  across_seeds(general_of, report.mean.generalization, report.stddev.generalization);
  across_seeds(specific_of, report.mean.specificity, report.stddev.specificity);
  with_f1(report.mean);
  return report;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& [seed, v] : per_seed) {
    auto j = values_json(v);
    j["seed"] = seed;
    seeds.push_back(std::move(j));
  }
  nlohmann::json prompts = nlohmann::json::object();
  for (const auto& [id, t] : per_prompt) {
    prompts[id] = {{"successes", t.successes}, {"total", t.total}};
  }
  auto sd = values_json(stddev);
  sd.erase("f1");
  return {{"metrics", values_json(mean)},
          {"seed_stddev", sd},
          {"per_seed", seeds},
          {"per_prompt", prompts},
          {"record_count", record_count}};
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(17);
  auto cell = [&](const std::optional<double>& v) {
    if (v) {
      out << *v;
    } else {
      out << "nan";
    }
  };
  out << "efficacy,generality,specificity,f1\n";
  cell(mean.efficacy);
  out << ',';
  cell(mean.generalization);
  out << ',';
  cell(mean.specificity);
  out << ',';
  cell(mean.f1);
  out << '\n';
  return out.str();
}

double text_proxy_score(const EncoderWeights& edited, const EncoderWeights& frozen,
                        const std::string& prompt, const std::string& descriptor,
                        const Vocabulary& vocab) {
  const Vec a = encode(edited, tokenize(prompt, vocab, edited.config.max_seq_len)).eos_embedding;
  const Vec b =
      encode(frozen, tokenize(descriptor, vocab, frozen.config.max_seq_len)).eos_embedding;
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw NumericError("text_proxy_score: zero embedding");
  }
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::vector<ScoreRecord> proxy_records(const EncoderWeights& edited,
                                       const EncoderWeights& frozen, const Vocabulary& vocab,
                                       const DatasetEntry& entry,
                                       std::span<const std::uint64_t> seeds) {
  std::vector<ScoreRecord> base;
  auto score = [&](const std::string& id, const std::string& prompt, const std::string& now,
                   const std::string& before, Polarity polarity) {
    base.push_back({id, 0, text_proxy_score(edited, frozen, prompt, now, vocab),
                    text_proxy_score(edited, frozen, prompt, before, vocab), polarity});
  };
  score(entry.id + "/efficacy", entry.edit_prompt, entry.target, entry.source,
        Polarity::kEfficacy);
  for (std::size_t i = 0; i < entry.positives.size(); ++i) {
    const auto& p = entry.positives[i];
    score(entry.id + "/positive/" + std::to_string(i), p.prompt, p.new_variant,
          p.old_variant, Polarity::kPositive);
  }
  for (std::size_t i = 0; i < entry.negatives.size(); ++i) {
    const auto& n = entry.negatives[i];
    score(entry.id + "/negative/" + std::to_string(i), n.prompt, n.new_variant,
          n.old_variant, Polarity::kNegative);
  }
  std::vector<ScoreRecord> out;
  out.reserve(base.size() * seeds.size());
  for (auto seed : seeds) {
    for (auto r : base) {
      r.seed = seed;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<ScoreRecord> parse_score_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(origin + ": empty score file");
  const auto header = split_csv_line(trim(line));
  std::size_t column[5];
  for (std::size_t c = 0; c < 5; ++c) {
    auto it = std::find_if(header.begin(), header.end(),
                           [&](const std::string& h) { return trim(h) == kScoreColumns[c]; });
    if (it == header.end()) {
      throw DataError(origin + ":1: missing column '" + kScoreColumns[c] + "'");
    }
    column[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<ScoreRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = origin + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    auto number = [&](std::size_t c) {
      const std::string f = trim(fields[column[c]]);
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(value)) {
        throw DataError(where + ": column '" + kScoreColumns[c] + "': '" + f +
                        "' is not a finite number");
      }
      return value;
    };
    ScoreRecord r;
    r.prompt_id = trim(fields[column[0]]);
    if (r.prompt_id.empty()) throw DataError(where + ": column 'prompt_id': empty");
    const std::string seed = trim(fields[column[1]]);
    const auto [ptr, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), r.seed);
    if (ec != std::errc() || ptr != seed.data() + seed.size() || seed.empty()) {
      throw DataError(where + ": column 'seed': '" + seed + "' is not an unsigned integer");
    }
    const std::string polarity = trim(fields[column[2]]);
    if (polarity == "efficacy") {
      r.polarity = Polarity::kEfficacy;
    } else if (polarity == "positive") {
      r.polarity = Polarity::kPositive;
    } else if (polarity == "negative") {
      r.polarity = Polarity::kNegative;
    } else {
      throw DataError(where + ": column 'polarity': '" + polarity +
                      "' is not one of efficacy/positive/negative");
    }
    r.score_new = number(3);
    r.score_old = number(4);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ScoreRecord> ingest_external_scores(const std::filesystem::path& path) {
  return parse_score_csv(read_text_file(path), path.string());
}

std::string emit_score_csv(std::span<const ScoreRecord> records) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "prompt_id,seed,polarity,score_new,score_old\n";
  for (const auto& r : records) {
    if (r.prompt_id.find(',') != std::string::npos) {
      throw DataError("prompt id '" + r.prompt_id + "' contains a comma");
    }
    out << r.prompt_id << ',' << r.seed << ',' << to_string(r.polarity) << ',' << r.score_new
        << ',' << r.score_old << '\n';
  }
  return out.str();
}

const char* to_string(Polarity polarity) {
  switch (polarity) {
    case Polarity::kEfficacy:
      return "efficacy";
    case Polarity::kPositive:
      return "positive";
    case Polarity::kNegative:
      return "negative";
  }
  return "unknown";
}

}  // namespace rankedit
