#include "rankedit/editor.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

#include "rankedit/io.hpp"

namespace rankedit {

namespace {

constexpr double kMaxAsymmetry = 1e-8;

std::string truncate_words(const std::string& line, std::size_t max_words) {
  auto words = split_words(line);
  if (words.size() > max_words) words.resize(max_words);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

Mat CovarianceStats::regularized() const {
  Mat c = second_moment;
  c.diagonal().array() += epsilon;
  return c;
}

TensorFile CovarianceStats::to_tensor_file() const {
  TensorFile file;
  file.metadata = {{"kind", "covariance"},        {"layer", layer},
                   {"sample_count", sample_count}, {"epsilon", epsilon},
                   {"epsilon_scale", epsilon_scale}, {"corpus_digest", corpus_digest}};
  TensorEntry entry{"second_moment",
                    {static_cast<std::size_t>(second_moment.rows()),
                     static_cast<std::size_t>(second_moment.cols())},
                    {}};
  entry.values.reserve(static_cast<std::size_t>(second_moment.size()));
  for (Eigen::Index i = 0; i < second_moment.size(); ++i) {
    entry.values.push_back(static_cast<float>(second_moment.data()[i]));
  }
  file.tensors.push_back(std::move(entry));
  return file;
}

CovarianceStats CovarianceStats::from_tensor_file(const TensorFile& file) {
  if (file.metadata.value("kind", std::string{}) != "covariance") {
    throw DataError("tensor container does not hold covariance statistics");
  }
  CovarianceStats stats;
  try {
    stats.layer = file.metadata.at("layer").get<std::size_t>();
    stats.sample_count = file.metadata.at("sample_count").get<std::size_t>();
    stats.epsilon = file.metadata.at("epsilon").get<double>();
    stats.epsilon_scale = file.metadata.value("epsilon_scale", kDefaultEpsilonScale);
    stats.corpus_digest = file.metadata.value("corpus_digest", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("covariance metadata: ") + e.what());
  }
  const TensorEntry& entry = file.at("second_moment");
  if (entry.shape.size() != 2 || entry.shape[0] != entry.shape[1]) {
    throw DataError("covariance matrix must be square");
  }
  const auto n = static_cast<Eigen::Index>(entry.shape[0]);
  stats.second_moment.resize(n, n);
  for (Eigen::Index i = 0; i < n * n; ++i) {
    stats.second_moment.data()[i] = entry.values[static_cast<std::size_t>(i)];
  }
  if (stats.sample_count < 1) {
    throw DataError("covariance sample_count must be >= 1");
  }
  return stats;
}

void CovarianceStats::save(const std::filesystem::path& path) const {
  write_tensor_file(path, to_tensor_file());
}

CovarianceStats CovarianceStats::load(const std::filesystem::path& path) {
  return from_tensor_file(read_tensor_file(path));
}

CovarianceStats estimate_covariance(const EncoderWeights& w, const Vocabulary& vocab,
                                    std::span<const std::string> corpus_lines,
                                    std::size_t layer, double epsilon_scale) {
  if (layer >= w.config.n_layers) {
    throw DataError("estimate_covariance: layer " + std::to_string(layer) + " out of range");
  }
  if (!(epsilon_scale >= 0.0) || !std::isfinite(epsilon_scale)) {
    throw DataError("estimate_covariance: epsilon_scale must be a finite non-negative real");
  }
  const auto f = static_cast<Eigen::Index>(w.config.d_mlp);
  Mat sum = Mat::Zero(f, f);
  std::size_t count = 0;
  std::string digest_input;
  for (const auto& raw : corpus_lines) {
    digest_input += raw;
    digest_input.push_back('\n');
    const std::string line = truncate_words(raw, w.config.max_seq_len - 2);
    if (line.empty()) continue;
    const TokenSequence seq = tokenize(line, vocab, w.config.max_seq_len);
    const EncodeResult enc = encode(w, seq);
    const Mat& keys = enc.trace.layers[layer].mlp_key;
    for (std::size_t t = 0; t < seq.ids.size(); ++t) {
      if (vocab.is_special(seq.ids[t])) continue;
      const auto k = keys.row(static_cast<Eigen::Index>(t));
      sum.noalias() += k.transpose() * k;
      ++count;
    }
  }
  if (count == 0) {
    throw DataError("estimate_covariance: corpus yields no non-special tokens");
  }

  CovarianceStats stats;
  stats.layer = layer;
  stats.sample_count = count;
  stats.epsilon_scale = epsilon_scale;
  stats.corpus_digest = sha256_hex(digest_input);
  stats.second_moment = sum / static_cast<double>(count);
  if (!stats.second_moment.allFinite()) {
    throw NumericError("estimate_covariance: non-finite accumulation");
  }
  const double asymmetry = (stats.second_moment - stats.second_moment.transpose())
                               .cwiseAbs()
                               .maxCoeff();
  if (asymmetry > kMaxAsymmetry) {
    throw NumericError("estimate_covariance: accumulated matrix is not symmetric");
  }
  stats.second_moment = 0.5 * (stats.second_moment + stats.second_moment.transpose()).eval();
  stats.epsilon = epsilon_scale * stats.second_moment.trace() / static_cast<double>(f);
  return stats;
}

std::string instantiate_template(const std::string& pattern, const std::string& subject) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = pattern.find("{}", pos);
    if (hit == std::string::npos) {
      out.append(pattern, pos);
      break;
    }
    out.append(pattern, pos, hit - pos);
    out += subject;
    pos = hit + 2;
  }
  return out;
}

std::vector<std::string> default_key_templates() {
  return {"{}", "a photo of {}", "an image of {}", "a picture of {}", "a painting of {}"};
}

Vec compute_key(const EncoderWeights& w, const std::string& subject,
                std::span<const std::string> templates, std::size_t layer,
                const Vocabulary& vocab) {
  if (templates.empty()) {
    throw DataError("compute_key: at least one template is required");
  }
  // Summing in a canonical order keeps the mean bitwise order-invariant.
  std::vector<std::string> prompts;
  for (const auto& t : templates) prompts.push_back(instantiate_template(t, subject));
  std::sort(prompts.begin(), prompts.end());

  Vec total = Vec::Zero(static_cast<Eigen::Index>(w.config.d_mlp));
  for (const auto& prompt : prompts) {
    const TokenSequence seq = tokenize(prompt, vocab, w.config.max_seq_len);
    const TokenSpan span = locate_subject(seq, subject, vocab);
    total += collect_mlp_key(w, seq, layer, span.last);
  }
  return total / static_cast<double>(prompts.size());
}

void EditRequest::validate() const {
  const std::string where = "edit request '" + id + "': ";
  if (split_words(edit_prompt).empty()) throw DataError(where + "edit_prompt is empty");
  if (split_words(subject).empty()) throw DataError(where + "subject is empty");
  if (split_words(source_text).empty()) throw DataError(where + "source is empty");
  if (const auto* text = std::get_if<std::string>(&target);
      text && split_words(*text).empty()) {
    throw DataError(where + "target is empty");
  }
  if (key_templates.empty()) throw DataError(where + "key_templates is empty");
  for (const auto& t : key_templates) {
    if (t.find("{}") == std::string::npos) {
      throw DataError(where + "key template '" + t + "' lacks a {} placeholder");
    }
  }
  // The subject must occur in the prompt at the word level.
  const auto prompt_words = split_words(edit_prompt);
  const auto subject_words = split_words(subject);
  if (std::search(prompt_words.begin(), prompt_words.end(), subject_words.begin(),
                  subject_words.end()) == prompt_words.end()) {
    throw DataError(where + "subject '" + subject + "' does not occur in edit_prompt");
  }
}

nlohmann::json EditRequest::to_json() const {
  nlohmann::json j = {{"id", id},
                      {"edit_prompt", edit_prompt},
                      {"subject", subject},
                      {"source", source_text},
                      {"layer", layer},
                      {"templates", key_templates},
                      {"contrastive_corpus", contrastive_corpus}};
  if (const auto* text = std::get_if<std::string>(&target)) {
    j["target"] = *text;
  } else {
    const Vec& v = std::get<Vec>(target);
    j["target_embedding"] = std::vector<double>(v.data(), v.data() + v.size());
  }
  return j;
}

EditRequest EditRequest::from_json(const nlohmann::json& j) {
  EditRequest r;
  try {
    r.id = j.value("id", std::string("request"));
    r.edit_prompt = j.at("edit_prompt").get<std::string>();
    r.subject = j.at("subject").get<std::string>();
    r.source_text = j.at("source").get<std::string>();
    r.layer = j.value("layer", std::size_t{0});
    r.key_templates = j.value("templates", default_key_templates());
    r.contrastive_corpus = j.value("contrastive_corpus", std::string{});
    const bool has_text = j.contains("target");
    const bool has_vector = j.contains("target_embedding");
    if (has_text == has_vector) {
      throw DataError("edit request '" + r.id +
                      "': exactly one of target / target_embedding must be set");
    }
    if (has_text) {
      r.target = j.at("target").get<std::string>();
    } else {
      const auto values = j.at("target_embedding").get<std::vector<double>>();
      r.target = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("edit request: ") + e.what());
  }
  r.validate();
  return r;
}

nlohmann::json RankOneEdit::to_json() const {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"request_id", request_id},
          {"layer", layer},
          {"token_index", token_index},
          {"k_star", vec(k_star)},
          {"v_star", vec(v_star)},
          {"lambda", vec(lambda)},
          {"u", vec(u)},
          {"denom", denom},
          {"lambda_norm", lambda_norm},
          {"relative_residual", relative_residual},
          {"params_modified", params_modified},
          {"optimizer_steps", optimizer_steps},
          {"converged", converged},
          {"loss_history", loss_history_json(loss_history)}};
}

RankOneResult apply_rank_one(const Mat& w, const Mat& c_regularized, const Vec& k_star,
                             const Vec& v_star) {
  if (k_star.size() != w.cols() || v_star.size() != w.rows() ||
      c_regularized.rows() != w.cols() || c_regularized.cols() != w.cols()) {
    throw DataError("apply_rank_one: dimension mismatch");
  }
  if (!k_star.allFinite() || !v_star.allFinite()) {
    throw NumericError("apply_rank_one: non-finite key or value");
  }
  if (k_star.squaredNorm() == 0.0) {
    throw NumericError("apply_rank_one: key vector is zero");
  }
  const Eigen::LLT<Mat> llt(c_regularized);
  if (llt.info() != Eigen::Success) {
    throw NumericError("apply_rank_one: covariance is not positive definite");
  }
  RankOneResult result;
  RankOneEdit& audit = result.audit;
  audit.k_star = k_star;
  audit.v_star = v_star;
  audit.u = llt.solve(k_star);
  audit.denom = audit.u.dot(k_star);
  if (!(audit.denom > 0.0) || !std::isfinite(audit.denom) || !audit.u.allFinite()) {
    throw NumericError("apply_rank_one: non-positive denominator (C^-1 k*)^T k*");
  }
  audit.lambda = (v_star - w * k_star) / audit.denom;
  audit.lambda_norm = audit.lambda.norm();
  result.w_hat = w + audit.lambda * audit.u.transpose();
  const double scale = v_star.norm();
  const double miss = (result.w_hat * k_star - v_star).norm();
  audit.relative_residual = scale > 0.0 ? miss / scale : miss;
  audit.params_modified = static_cast<std::size_t>(w.size());
  return result;
}

RankOneResult apply_rank_one(const Mat& w, const CovarianceStats& cov, const Vec& k_star,
                             const Vec& v_star) {
  return apply_rank_one(w, cov.regularized(), k_star, v_star);
}

EditResult edit(const EncoderWeights& model, const EncoderWeights& frozen,
                const Vocabulary& vocab, const EditRequest& req, const CovarianceStats& cov,
                const OptimizerConfig& cfg, std::span<const std::string> distractors) {
  req.validate();
  if (req.layer >= model.config.n_layers) {
    throw DataError("edit request '" + req.id + "': layer " + std::to_string(req.layer) +
                    " out of range");
  }
  if (cov.layer != req.layer) {
    throw DataError("edit request '" + req.id + "': covariance was estimated for layer " +
                    std::to_string(cov.layer) + ", request targets layer " +
                    std::to_string(req.layer));
  }
  const TokenSequence prompt = tokenize(req.edit_prompt, vocab, model.config.max_seq_len);
  const TokenSpan span = locate_subject(prompt, req.subject, vocab);

  const Vec k_star = compute_key(model, req.subject, req.key_templates, req.layer, vocab);
  const ContrastiveSet set = build_contrastive_set(frozen, vocab, req.target, req.source_text,
                                                   distractors, cfg.num_contrastive, cfg.seed);
  ValueResult value = optimize_value(model, prompt, req.layer, span.last, set, cfg);

  // v* is a branch output; the associative memory W_proj stores it minus the bias.
  const LayerWeights& layer = model.layers[req.layer];
  RankOneResult update = apply_rank_one(layer.w_proj, cov, k_star, value.v_star - layer.b_proj);

  EditResult out{model, std::move(update.audit)};
  out.weights.layers[req.layer].w_proj = std::move(update.w_hat);
  RankOneEdit& audit = out.audit;
  audit.request_id = req.id;
  audit.layer = req.layer;
  audit.token_index = span.last;
  audit.v_star = value.v_star;
  audit.optimizer_steps = value.steps;
  audit.converged = value.converged;
  audit.loss_history = std::move(value.history);
  return out;
}

SequentialResult sequential_edits(const EncoderWeights& model, const Vocabulary& vocab,
                                  std::span<const EditRequest> reqs,
                                  const std::map<std::size_t, CovarianceStats>& covariances,
                                  const OptimizerConfig& cfg,
                                  std::span<const std::string> distractors) {
  SequentialResult result{model, {}};
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    try {
      auto it = covariances.find(reqs[i].layer);
      if (it == covariances.end()) {
        throw DataError("no covariance statistics for layer " + std::to_string(reqs[i].layer));
      }
      EditResult step =
          edit(result.weights, model, vocab, reqs[i], it->second, cfg, distractors);
      result.weights = std::move(step.weights);
      result.audits.push_back(std::move(step.audit));
    } catch (const Error& e) {
      throw SequentialEditError(e.kind(),
                                "sequential edit " + std::to_string(i) + " failed: " + e.what(),
                                i, std::move(result.weights), std::move(result.audits));
    }
  }
  return result;
}

}  // namespace rankedit
