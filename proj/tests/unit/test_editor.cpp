#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <Eigen/SVD>

#include "rankedit/datasets.hpp"
#include "rankedit/editor.hpp"
#include "rankedit/error.hpp"
#include "support.hpp"

using namespace rankedit;
using namespace rankedit::testing;

TEST(ApplyRankOne, HandExample) {
  Mat w = Mat::Identity(2, 2);
  const Vec k = (Vec(2) << 1, 0).finished();
  const Vec v = (Vec(2) << 0, 2).finished();
  const RankOneResult r = apply_rank_one(w, Mat::Identity(2, 2), k, v);
  EXPECT_TRUE(r.audit.lambda.isApprox((Vec(2) << -1, 2).finished(), 1e-15));
  EXPECT_TRUE(r.w_hat.isApprox((Mat(2, 2) << 0, 0, 2, 1).finished(), 1e-15));
  EXPECT_TRUE((r.w_hat * k).isApprox(v, 1e-15));
  EXPECT_DOUBLE_EQ(r.audit.denom, 1.0);
  EXPECT_EQ(r.audit.params_modified, 4u);
}

TEST(ApplyRankOne, NoOpEditLeavesWeightsUnchanged) {
  std::mt19937_64 rng(1);
  const Mat w = random_mat(4, 6, rng);
  const Vec k = random_vec(6, rng);
  const RankOneResult r = apply_rank_one(w, random_spd(6, rng), k, w * k);
  EXPECT_LE(r.audit.lambda.norm(), 1e-14);
  EXPECT_LE((r.w_hat - w).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ApplyRankOne, ExactnessRankAndNullDirection) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 3 + trial % 9;
    const std::size_t n = m + trial % 7;
    const Mat w = random_mat(m, n, rng);
    const Mat c = random_spd(n, rng);
    const Vec k = random_vec(n, rng);
    const Vec v = random_vec(m, rng);
    const RankOneResult r = apply_rank_one(w, c, k, v);
    EXPECT_LE((r.w_hat * k - v).norm() / v.norm(), 1e-10);
    EXPECT_LE(r.audit.relative_residual, 1e-10);
    const Eigen::JacobiSVD<Mat> svd(r.w_hat - w);
    const Vec s = svd.singularValues();
    EXPECT_LE(s[1], 1e-8 * s[0]);
    // Any key orthogonal to u is stored unchanged.
    Vec probe = random_vec(n, rng);
    probe -= r.audit.u * (r.audit.u.dot(probe) / r.audit.u.squaredNorm());
    EXPECT_LE((r.w_hat * probe - w * probe).norm(), 1e-10 * (w * probe).norm());
  }
}

TEST(ApplyRankOne, MatchesConstrainedMinimumReference) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 2 + trial % 4;
    const std::size_t n = 2 + trial % 7;
    const Mat w = random_mat(m, n, rng);
    const Mat c = random_spd(n, rng);
    const Vec k = random_vec(n, rng);
    const Vec v = random_vec(m, rng);
    const RankOneResult r = apply_rank_one(w, c, k, v);
    oracles::RealMat cc(n, oracles::RealVec(n));
    oracles::RealVec kk(n), rr(m);
    const Vec resid = v - w * k;
    for (std::size_t i = 0; i < n; ++i) {
      kk[i] = k[static_cast<Eigen::Index>(i)];
      for (std::size_t j = 0; j < n; ++j) cc[i][j] = c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    for (std::size_t i = 0; i < m; ++i) rr[i] = resid[static_cast<Eigen::Index>(i)];
    const auto ref = oracles::constrained_min_reference(cc, kk, rr);
    Mat d(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(ref[i][j]);
    }
    EXPECT_LE((r.w_hat - w - d).norm() / d.norm(), 1e-6);
  }
}

TEST(ApplyRankOne, Errors) {
  const Mat w = Mat::Identity(2, 2);
  const Vec v = Vec::Ones(2);
  EXPECT_THROW(apply_rank_one(w, Mat::Identity(2, 2), Vec::Zero(2), v), NumericError);
  Mat not_pd = Mat::Identity(2, 2);
  not_pd(1, 1) = -1.0;
  EXPECT_THROW(apply_rank_one(w, not_pd, Vec::Ones(2), v), NumericError);
  EXPECT_THROW(apply_rank_one(w, Mat::Identity(3, 3), Vec::Ones(3), v), DataError);
}

TEST(Covariance, IdenticalKeysGiveOuterProduct) {
  // With zero W_fc every key is gelu(b_fc), whatever the token.
  const Vocabulary vocab = small_vocab();
  EncoderWeights w = random_encoder(vocab.size(), 1);
  w.layers[0].w_fc.setZero();
  const std::vector<std::string> corpus = {"a cat", "the red car in the park"};
  const CovarianceStats c = estimate_covariance(w, vocab, corpus, 0);
  const Vec k = w.layers[0].b_fc.unaryExpr([](double x) { return gelu_tanh(x); });
  EXPECT_EQ(c.sample_count, 8u);
  EXPECT_LE((c.second_moment - k * k.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(c.epsilon, 1e-6 * k.squaredNorm() / 32.0, 1e-20);
  EXPECT_LE((c.regularized() - k * k.transpose() - c.epsilon * Mat::Identity(32, 32))
                .cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Covariance, EmptyCorpusIsError) {
  const Vocabulary vocab = small_vocab();
  const EncoderWeights w = random_encoder(vocab.size(), 1);
  EXPECT_THROW(estimate_covariance(w, vocab, std::vector<std::string>{}, 0), DataError);
}

TEST(Covariance, MatchesAccumulationReference) {
  const Vocabulary vocab = small_vocab();
  const EncoderWeights w = random_encoder(vocab.size(), 4);
  std::mt19937_64 rng(8);
  std::vector<std::string> corpus;
  for (int i = 0; i < 50; ++i) {
    std::string line;
    const int len = 1 + static_cast<int>(rng() % 8);
    for (int j = 0; j < len; ++j) line += (j ? " " : "") + vocab.token(4 + static_cast<int>(rng() % 17));
    corpus.push_back(line);
  }
  const CovarianceStats c = estimate_covariance(w, vocab, corpus, 1);
  std::vector<oracles::RealVec> keys;
  for (const auto& line : corpus) {
    const auto seq = tokenize(line, vocab, w.config.max_seq_len);
    const auto ref = oracles::dense_forward_reference(w, ids_of(seq));
    for (std::size_t t = 1; t + 1 < seq.size(); ++t) keys.push_back(ref.mlp_key[1][t]);
  }
  const auto ref = oracles::covariance_reference(keys);
  EXPECT_EQ(c.sample_count, keys.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < 32; ++i) {
    for (std::size_t j = 0; j < 32; ++j) {
      worst = std::max(worst, std::abs(c.second_moment(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -
                                       static_cast<double>(ref[i][j])));
    }
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(Covariance, SaveLoadKeepsMetadata) {
  const Vocabulary vocab = small_vocab();
  const EncoderWeights w = random_encoder(vocab.size(), 4);
  const CovarianceStats c = estimate_covariance(w, vocab, std::vector<std::string>{"a cat"}, 0);
  const auto p = std::filesystem::temp_directory_path() / "rankedit_unit" / "cov.bin";
  c.save(p);
  const CovarianceStats back = CovarianceStats::load(p);
  EXPECT_EQ(back.sample_count, c.sample_count);
  EXPECT_EQ(back.corpus_digest, c.corpus_digest);
  EXPECT_EQ(back.epsilon, c.epsilon);
  EXPECT_LE((back.second_moment - c.second_moment).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ComputeKey, SingleTemplateAndPermutation) {
  const Vocabulary vocab = small_vocab();
  const EncoderWeights w = random_encoder(vocab.size(), 5);
  const std::vector<std::string> one = {"a photo of {}"};
  const auto seq = tokenize("a photo of the cat", vocab, 12);
  EXPECT_TRUE(compute_key(w, "the cat", one, 0, vocab) == collect_mlp_key(w, seq, 0, 5));
  const std::vector<std::string> many = {"{}", "a photo of {}", "{} in the park", "a red {}"};
  std::vector<std::string> shuffled = {many[2], many[0], many[3], many[1]};
  const Vec k = compute_key(w, "cat", many, 0, vocab);
  EXPECT_TRUE(k == compute_key(w, "cat", shuffled, 0, vocab));
  Vec mean = Vec::Zero(32);
  for (const auto& t : many) {
    const auto s = tokenize(instantiate_template(t, "cat"), vocab, 12);
    mean += collect_mlp_key(w, s, 0, locate_subject(s, "cat", vocab).last);
  }
  EXPECT_LE((k - mean / 4.0).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_THROW(compute_key(w, "cat", std::vector<std::string>{}, 0, vocab), DataError);
}

TEST(EditRequest, ValidationAndJson) {
  EditRequest r;
  r.id = "x";
  r.edit_prompt = "the cat";
  r.subject = "cat";
  r.source_text = "the cat";
  r.target = std::string("a dog");
  r.key_templates = default_key_templates();
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(EditRequest::from_json(r.to_json()).to_json(), r.to_json());
  r.subject = "dog";
  EXPECT_THROW(r.validate(), DataError);
  auto j = r.to_json();
  j["subject"] = "cat";
  j["target_embedding"] = std::vector<double>{1.0, 2.0};
  EXPECT_THROW(EditRequest::from_json(j), DataError);
  j.erase("target");
  EXPECT_TRUE(std::holds_alternative<Vec>(EditRequest::from_json(j).target));
}

class ToyEdit : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    toy_ = new Toy(make_toy());
    cov_ = new CovarianceStats(estimate_covariance(toy_->weights, toy_->vocab, toy_->corpus, 0));
    road_ = new DatasetFile(load_road(data_dir() / "synthetic_road.json"));
  }
  static void TearDownTestSuite() {
    delete toy_;
    delete cov_;
    delete road_;
  }
  static EditRequest request(std::size_t i) {
    return to_edit_request(road_->entries[i], DatasetFormat::kRoad, 0, {});
  }
  static Toy* toy_;
  static CovarianceStats* cov_;
  static DatasetFile* road_;
};
Toy* ToyEdit::toy_ = nullptr;
CovarianceStats* ToyEdit::cov_ = nullptr;
DatasetFile* ToyEdit::road_ = nullptr;

TEST_F(ToyEdit, LocalityAndAudit) {
  const EditResult r = edit(toy_->weights, toy_->weights, toy_->vocab, request(5), *cov_,
                            OptimizerConfig{}, toy_->captions);
  EncoderWeights restored = r.weights;
  restored.layers[0].w_proj = toy_->weights.layers[0].w_proj;
  EXPECT_TRUE(bitwise_equal(restored, toy_->weights));
  EXPECT_FALSE(r.weights.layers[0].w_proj == toy_->weights.layers[0].w_proj);
  EXPECT_EQ(r.audit.params_modified, 32u * 128u);
  EXPECT_GT(r.audit.denom, 0.0);
  EXPECT_LE(r.audit.relative_residual, 1e-5);
  EXPECT_EQ(r.audit.loss_history.size(), r.audit.optimizer_steps + 1);
  const auto j = r.audit.to_json();
  EXPECT_EQ(j["request_id"], "apple");
  EXPECT_EQ(j["k_star"].size(), 128u);
}

TEST_F(ToyEdit, ContrastiveLossDrops) {
  for (std::size_t i : {0u, 5u}) {
    const EditRequest req = request(i);
    const EditResult r = edit(toy_->weights, toy_->weights, toy_->vocab, req, *cov_,
                              OptimizerConfig{}, toy_->captions);
    const auto& h = r.audit.loss_history;
    const auto best = std::min_element(h.begin(), h.end(), [](const auto& a, const auto& b) {
      return a.loss < b.loss;
    });
    EXPECT_LT(best->loss, h.front().loss) << req.id;
    EXPECT_GT(best->target_probability, h.front().target_probability) << req.id;
  }
}

TEST_F(ToyEdit, CovarianceLayerMismatchIsError) {
  EditRequest req = request(0);
  req.layer = 1;
  EXPECT_THROW(edit(toy_->weights, toy_->weights, toy_->vocab, req, *cov_, OptimizerConfig{},
                    toy_->captions),
               DataError);
}

TEST_F(ToyEdit, SequentialEditsKeepOrderAndCount) {
  const std::map<std::size_t, CovarianceStats> covs = {{0, *cov_}};
  OptimizerConfig opt;
  opt.max_steps = 5;
  const SequentialResult none =
      sequential_edits(toy_->weights, toy_->vocab, std::span<const EditRequest>{}, covs, opt, toy_->captions);
  EXPECT_TRUE(bitwise_equal(none.weights, toy_->weights));
  EXPECT_TRUE(none.audits.empty());
  std::vector<EditRequest> reqs = {request(0), request(5), request(6)};
  const SequentialResult r = sequential_edits(toy_->weights, toy_->vocab, reqs, covs, opt, toy_->captions);
  ASSERT_EQ(r.audits.size(), 3u);
  EXPECT_EQ(r.audits[0].request_id, "wales");
  EXPECT_EQ(r.audits[2].request_id, "cat");
  // Chaining by hand from the same frozen reference gives the same weights.
  EncoderWeights w = toy_->weights;
  for (const auto& req : reqs) {
    w = edit(w, toy_->weights, toy_->vocab, req, *cov_, opt, toy_->captions).weights;
  }
  EXPECT_TRUE(bitwise_equal(w, r.weights));
}

TEST_F(ToyEdit, SequentialFailureReportsIndex) {
  const std::map<std::size_t, CovarianceStats> covs = {{0, *cov_}};
  OptimizerConfig opt;
  opt.max_steps = 2;
  std::vector<EditRequest> reqs = {request(0), request(1)};
  reqs[1].layer = 1;  // no covariance for layer 1
  try {
    sequential_edits(toy_->weights, toy_->vocab, reqs, covs, opt, toy_->captions);
    FAIL() << "expected SequentialEditError";
  } catch (const SequentialEditError& e) {
    EXPECT_EQ(e.failed_index(), 1u);
    EXPECT_EQ(e.completed().size(), 1u);
    EXPECT_FALSE(bitwise_equal(e.last_good(), toy_->weights));
  }
}
