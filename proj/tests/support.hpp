#pragma once

#include <random>
#include <string>
#include <vector>

#include "rankedit/encoder.hpp"
#include "rankedit/oracles/oracles.hpp"

namespace rankedit::testing {

inline Vocabulary small_vocab() {
  return Vocabulary::with_specials({"a", "b", "c", "cat", "dog", "and", "the", "prince", "of",
                                    "wales", "joe", "biden", "photo", "red", "car", "in",
                                    "park"});
}

// Random encoder with every parameter perturbed, including biases and
// layer-norm affine terms, so that tests exercise all code paths.
inline EncoderWeights random_encoder(std::size_t vocab_size, std::uint64_t seed,
                                     std::size_t d_model = 16, std::size_t d_mlp = 32,
                                     std::size_t n_layers = 2, std::size_t n_heads = 2,
                                     double scale = 0.3) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = d_model;
  cfg.d_mlp = d_mlp;
  cfg.n_layers = n_layers;
  cfg.n_heads = n_heads;
  cfg.max_seq_len = 12;
  cfg.seed = seed;
  EncoderWeights w = EncoderWeights::random_init(cfg);
  std::mt19937_64 rng(seed * 7919 + 17);
  std::normal_distribution<double> normal(0.0, scale);
  w.for_each_tensor([&](const std::string& name, std::span<double> values,
                        const std::vector<std::size_t>&) {
    const bool gamma = name.find("gamma") != std::string::npos;
    for (auto& v : values) v = (gamma ? 1.0 : 0.0) + normal(rng);
  });
  return w;
}

inline std::vector<int> ids_of(const TokenSequence& seq) {
  return {seq.ids.begin(), seq.ids.end()};
}

inline Vec to_vec(const oracles::RealVec& v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = static_cast<double>(v[i]);
  return out;
}

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v;
}

inline Mat random_mat(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                      double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Well-conditioned SPD matrix: A A^T / n + I.
inline Mat random_spd(std::size_t n, std::mt19937_64& rng) {
  const Mat a = random_mat(n, n, rng);
  return a * a.transpose() / static_cast<double>(n) +
         Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
}

}  // namespace rankedit::testing

#include "rankedit/io.hpp"

namespace rankedit::testing {

inline std::filesystem::path data_dir() { return RANKEDIT_TEST_DATA_DIR; }

// The desk-scale toy: vocabulary from the synthetic corpus, a 2-layer
// d_model 32 / d_mlp 128 encoder with the default N(0, 0.02) init.
struct Toy {
  Vocabulary vocab;
  EncoderWeights weights;
  std::vector<std::string> corpus;
  std::vector<std::string> captions;
};

inline Toy make_toy(std::uint64_t seed = 0) {
  Toy toy;
  toy.corpus = read_lines(data_dir() / "toy_corpus.txt");
  toy.captions = read_lines(data_dir() / "captions.txt");
  toy.vocab = Vocabulary::build_from_corpus(toy.corpus, 508);
  EncoderConfig cfg;
  cfg.vocab_size = toy.vocab.size();
  cfg.seed = seed;
  toy.weights = EncoderWeights::random_init(cfg);
  toy.weights.vocab_digest = toy.vocab.digest();
  return toy;
}

}  // namespace rankedit::testing
