#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankedit/tensor_file.hpp"
#include "rankedit/types.hpp"

namespace rankedit {

enum class Nonlinearity { kGeluTanh };

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t d_mlp = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 32;
  Nonlinearity nonlinearity = Nonlinearity::kGeluTanh;
  double ln_epsilon = 1e-5;
  std::uint64_t seed = 0;

  // Throws DataError naming the offending field.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

class Vocabulary {
 public:
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kPad = "<pad>";

  // Specials occupy ids 0..3 (bos, eos, unk, pad) followed by `words`.
  static Vocabulary with_specials(const std::vector<std::string>& words);

  // Frequency-ranked (ties broken lexicographically), at most `max_words`
  // regular tokens.
  static Vocabulary build_from_corpus(std::span<const std::string> lines,
                                      std::size_t max_words);

  // Text format: a header line "#vocab bos=<id> eos=<id> unk=<id> pad=<id>"
  // followed by one token per line; the n-th token line has id n.
  static Vocabulary parse(std::string_view text, const std::string& origin);
  static Vocabulary load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  std::string digest() const;

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int32_t> find(std::string_view token) const;
  std::int32_t id_or_unk(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  bool is_special(std::int32_t id) const;

  std::int32_t bos() const { return bos_; }
  std::int32_t eos() const { return eos_; }
  std::int32_t unk() const { return unk_; }
  std::int32_t pad() const { return pad_; }

 private:
  void index_and_validate(const std::string& origin);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::int32_t bos_ = -1;
  std::int32_t eos_ = -1;
  std::int32_t unk_ = -1;
  std::int32_t pad_ = -1;
};

struct LayerWeights {
  Vec ln1_gamma, ln1_beta;
  Mat w_q, w_k, w_v, w_o;  // d_model x d_model, applied as W * x
  Vec b_q, b_k, b_v, b_o;
  Vec ln2_gamma, ln2_beta;
  Mat w_fc;  // d_mlp x d_model
  Vec b_fc;
  Mat w_proj;  // d_model x d_mlp
  Vec b_proj;
};

struct EncoderWeights {
  EncoderConfig config;
  Mat token_embedding;     // vocab_size x d_model
  Mat position_embedding;  // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  Vec final_gamma, final_beta;
  // Digest of the vocabulary these weights were built against; empty when
  // unknown.
  std::string vocab_digest;

  // All-zero parameters except unit layer-norm scales.
  static EncoderWeights zeros(const EncoderConfig& config);
  // N(0, 0.02) matrices, zero biases, unit layer-norm scales. Values are
  // rounded to f32 so that a save/load round trip is exact.
  static EncoderWeights random_init(const EncoderConfig& config, double stddev = 0.02);

  // Visits every parameter tensor in a fixed order with its canonical name.
  void for_each_tensor(
      const std::function<void(const std::string&, std::span<double>,
                               std::vector<std::size_t>)>& fn);
  void for_each_tensor(
      const std::function<void(const std::string&, std::span<const double>,
                               std::vector<std::size_t>)>& fn) const;

  std::size_t parameter_count() const;
  // Shapes and finiteness; throws DataError.
  void validate() const;

  TensorFile to_tensor_file() const;
  static EncoderWeights from_tensor_file(const TensorFile& file);
  void save(const std::filesystem::path& path) const;
  static EncoderWeights load(const std::filesystem::path& path);
};

// Bitwise equality of every parameter and of the config.
bool bitwise_equal(const EncoderWeights& a, const EncoderWeights& b);

// Inclusive token span into a TokenSequence.
struct TokenSpan {
  std::size_t first = 0;
  std::size_t last = 0;
  bool operator==(const TokenSpan&) const = default;
};

struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::optional<TokenSpan> subject;
  std::string text;

  std::size_t size() const { return ids.size(); }
  std::size_t eos_position() const { return ids.size() - 1; }
};

// Lowercase words split on whitespace.
std::vector<std::string> split_words(std::string_view text);

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab,
                       std::size_t max_seq_len);

// Last occurrence of the subject's id sequence strictly between BOS and EOS.
TokenSpan locate_subject(const TokenSequence& seq, std::string_view subject,
                         const Vocabulary& vocab);

struct LayerTrace {
  Mat residual;  // T x d_model, residual stream entering the layer
  Mat mlp_key;   // T x d_mlp, input to W_proj
  Mat mlp_out;   // T x d_model, MLP branch output before the residual add
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Mat final_residual;  // T x d_model, residual stream before the final norm
  Vec eos_embedding;
};

struct EncodeResult {
  Vec eos_embedding;
  ForwardTrace trace;
};

EncodeResult encode(const EncoderWeights& w, const TokenSequence& seq);

// Replaces the MLP branch output at (layer, token) by `v` before it is added
// to the residual stream.
Vec encode_with_substitution(const EncoderWeights& w, const TokenSequence& seq,
                             std::size_t layer, std::size_t token, const Vec& v);

Vec collect_mlp_key(const EncoderWeights& w, const TokenSequence& seq,
                    std::size_t layer, std::size_t token);

// d(loss)/dv for the substituted encoder, given d(loss)/d(eos_embedding).
Vec grad_wrt_substitution(const EncoderWeights& w, const TokenSequence& seq,
                          std::size_t layer, std::size_t token, const Vec& v,
                          const Vec& eos_grad);

double gelu_tanh(double x);
double gelu_tanh_derivative(double x);

}  // namespace rankedit
