#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankedit/encoder.hpp"
#include "rankedit/error.hpp"
#include "rankedit/types.hpp"
#include "rankedit/value_opt.hpp"

namespace rankedit {

inline constexpr double kDefaultEpsilonScale = 1e-6;

// Uncentered second moment of W_proj input keys over a reference corpus.
struct CovarianceStats {
  Mat second_moment;  // d_mlp x d_mlp, (1/n) sum k k^T
  std::size_t sample_count = 0;
  std::size_t layer = 0;
  double epsilon = 0.0;  // ridge added on the diagonal
  double epsilon_scale = kDefaultEpsilonScale;
  std::string corpus_digest;

  Mat regularized() const;

  TensorFile to_tensor_file() const;
  static CovarianceStats from_tensor_file(const TensorFile& file);
  void save(const std::filesystem::path& path) const;
  static CovarianceStats load(const std::filesystem::path& path);
};

// Lines are truncated to max_seq_len tokens; every position other than the
// special tokens contributes one key.
CovarianceStats estimate_covariance(const EncoderWeights& w, const Vocabulary& vocab,
                                    std::span<const std::string> corpus_lines,
                                    std::size_t layer,
                                    double epsilon_scale = kDefaultEpsilonScale);

// Mean W_proj input at the last subject token over the instantiated templates.
Vec compute_key(const EncoderWeights& w, const std::string& subject,
                std::span<const std::string> templates, std::size_t layer,
                const Vocabulary& vocab);

// Replaces every "{}" in `pattern` by `subject`.
std::string instantiate_template(const std::string& pattern, const std::string& subject);

std::vector<std::string> default_key_templates();

struct EditRequest {
  std::string id;
  std::string edit_prompt;
  std::string subject;
  std::string source_text;
  TargetSpec target;
  std::size_t layer = 0;
  std::vector<std::string> key_templates;
  // Label of the distractor caption corpus, kept for the audit trail.
  std::string contrastive_corpus;

  void validate() const;
  nlohmann::json to_json() const;
  static EditRequest from_json(const nlohmann::json& j);
};

struct RankOneEdit {
  std::string request_id;
  std::size_t layer = 0;
  std::size_t token_index = 0;
  Vec k_star;
  Vec v_star;    // optimized MLP branch output
  Vec lambda;
  Vec u;         // (C + eps I)^{-1} k*
  double denom = 0.0;
  double lambda_norm = 0.0;
  double relative_residual = 0.0;  // |W_hat k* - target| / |target|
  std::size_t params_modified = 0;
  std::size_t optimizer_steps = 0;
  bool converged = false;
  std::vector<LossRecord> loss_history;

  nlohmann::json to_json() const;
};

struct RankOneResult {
  Mat w_hat;
  RankOneEdit audit;
};

// W_hat = W + lambda u^T with u solving (C + eps I) u = k*, so that
// W_hat k* = v*.
RankOneResult apply_rank_one(const Mat& w, const Mat& c_regularized, const Vec& k_star,
                             const Vec& v_star);
RankOneResult apply_rank_one(const Mat& w, const CovarianceStats& cov, const Vec& k_star,
                             const Vec& v_star);

struct EditResult {
  EncoderWeights weights;
  RankOneEdit audit;
};

// `frozen` supplies target and contrastive embeddings; `model` is the
// encoder being edited (identical to `frozen` for a single edit).
EditResult edit(const EncoderWeights& model, const EncoderWeights& frozen,
                const Vocabulary& vocab, const EditRequest& req, const CovarianceStats& cov,
                const OptimizerConfig& cfg, std::span<const std::string> distractors);

struct SequentialResult {
  EncoderWeights weights;
  std::vector<RankOneEdit> audits;
};

class SequentialEditError : public Error {
 public:
  SequentialEditError(ErrorKind kind, const std::string& message, std::size_t failed_index,
                      EncoderWeights last_good, std::vector<RankOneEdit> completed)
      : Error(kind, message),
        failed_index_(failed_index),
        last_good_(std::move(last_good)),
        completed_(std::move(completed)) {}

  std::size_t failed_index() const { return failed_index_; }
  const EncoderWeights& last_good() const { return last_good_; }
  const std::vector<RankOneEdit>& completed() const { return completed_; }

 private:
  std::size_t failed_index_;
  EncoderWeights last_good_;
  std::vector<RankOneEdit> completed_;
};

// Applies the requests in order. Targets and contrastive embeddings always
// come from the original `model`.
SequentialResult sequential_edits(const EncoderWeights& model, const Vocabulary& vocab,
                                  std::span<const EditRequest> reqs,
                                  const std::map<std::size_t, CovarianceStats>& covariances,
                                  const OptimizerConfig& cfg,
                                  std::span<const std::string> distractors);

}  // namespace rankedit
