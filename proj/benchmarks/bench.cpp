#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "rankedit/editor.hpp"
#include "rankedit/encoder.hpp"
#include "rankedit/value_opt.hpp"

namespace {

using namespace rankedit;

const std::vector<std::string>& corpus() {
  static const std::vector<std::string> lines = [] {
    const std::vector<std::string> words = {"a",    "photo", "of", "the",  "prince", "in",
                                            "park", "red",   "car", "dog", "cat",    "and"};
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(3, 12);
    std::vector<std::string> out;
    for (int i = 0; i < 200; ++i) {
      std::string line;
      for (std::size_t n = len(rng), j = 0; j < n; ++j) line += (j ? " " : "") + words[pick(rng)];
      out.push_back(line);
    }
    return out;
  }();
  return lines;
}

struct Fixture {
  Vocabulary vocab = Vocabulary::build_from_corpus(corpus(), 100);
  EncoderWeights weights;
  TokenSequence prompt;

  explicit Fixture(std::size_t d_model) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = d_model;
    cfg.d_mlp = 4 * d_model;
    weights = EncoderWeights::random_init(cfg);
    prompt = tokenize("a photo of the prince in the park", vocab, cfg.max_seq_len);
  }
};

void BM_Encode(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(encode(f.weights, f.prompt));
}
BENCHMARK(BM_Encode)->Arg(32)->Arg(64)->Arg(128);

void BM_GradWrtSubstitution(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  const Vec v = encode(f.weights, f.prompt).trace.layers[0].mlp_out.row(4).transpose();
  const Vec g = Vec::Ones(v.size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_wrt_substitution(f.weights, f.prompt, 0, 4, v, g));
  }
}
BENCHMARK(BM_GradWrtSubstitution)->Arg(32)->Arg(64)->Arg(128);

void BM_ApplyRankOne(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  const Mat w = Mat::NullaryExpr(d, 4 * d, [&] { return normal(rng); });
  const Mat a = Mat::NullaryExpr(4 * d, 4 * d, [&] { return normal(rng); });
  const Mat c = a * a.transpose() / static_cast<double>(4 * d) + Mat::Identity(4 * d, 4 * d);
  const Vec k = Vec::NullaryExpr(4 * d, [&] { return normal(rng); });
  const Vec v = Vec::NullaryExpr(d, [&] { return normal(rng); });
  for (auto _ : state) benchmark::DoNotOptimize(apply_rank_one(w, c, k, v));
}
BENCHMARK(BM_ApplyRankOne)->Arg(32)->Arg(64)->Arg(128);

void BM_EstimateCovariance(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_covariance(f.weights, f.vocab, corpus(), 0));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(corpus().size()));
}
BENCHMARK(BM_EstimateCovariance)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
