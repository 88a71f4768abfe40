#include <cmath>
#include <cstring>
#include <random>

#include "rankedit/encoder.hpp"
#include "rankedit/error.hpp"

namespace rankedit {

namespace {

void require_positive(std::size_t value, const char* field) {
  if (value == 0) {
    throw DataError(std::string("encoder config: ") + field + " must be >= 1");
  }
}

const char* nonlinearity_name(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::kGeluTanh:
      return "gelu-tanh";
  }
  return "unknown";
}

template <typename Fn, typename Weights>
void visit_tensors(Weights& w, Fn&& fn) {
  const std::size_t v = w.config.vocab_size;
  const std::size_t d = w.config.d_model;
  const std::size_t f = w.config.d_mlp;
  const std::size_t t = w.config.max_seq_len;
  auto mat = [&](const std::string& name, auto& m, std::size_t rows, std::size_t cols) {
    fn(name, m.data(), static_cast<std::size_t>(m.size()), std::vector<std::size_t>{rows, cols});
  };
  auto vec = [&](const std::string& name, auto& x, std::size_t n) {
    fn(name, x.data(), static_cast<std::size_t>(x.size()), std::vector<std::size_t>{n});
  };
  mat("token_embedding", w.token_embedding, v, d);
  mat("position_embedding", w.position_embedding, t, d);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& L = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    vec(p + "ln1.gamma", L.ln1_gamma, d);
    vec(p + "ln1.beta", L.ln1_beta, d);
    mat(p + "attn.w_q", L.w_q, d, d);
    vec(p + "attn.b_q", L.b_q, d);
    mat(p + "attn.w_k", L.w_k, d, d);
    vec(p + "attn.b_k", L.b_k, d);
    mat(p + "attn.w_v", L.w_v, d, d);
    vec(p + "attn.b_v", L.b_v, d);
    mat(p + "attn.w_o", L.w_o, d, d);
    vec(p + "attn.b_o", L.b_o, d);
    vec(p + "ln2.gamma", L.ln2_gamma, d);
    vec(p + "ln2.beta", L.ln2_beta, d);
    mat(p + "mlp.w_fc", L.w_fc, f, d);
    vec(p + "mlp.b_fc", L.b_fc, f);
    mat(p + "mlp.w_proj", L.w_proj, d, f);
    vec(p + "mlp.b_proj", L.b_proj, d);
  }
  vec("final_ln.gamma", w.final_gamma, d);
  vec("final_ln.beta", w.final_beta, d);
}

}  // namespace

void EncoderConfig::validate() const {
  require_positive(vocab_size, "vocab_size");
  require_positive(d_model, "d_model");
  require_positive(d_mlp, "d_mlp");
  require_positive(n_layers, "n_layers");
  require_positive(n_heads, "n_heads");
  require_positive(max_seq_len, "max_seq_len");
  if (d_model % n_heads != 0) {
    throw DataError("encoder config: d_model must be divisible by n_heads");
  }
  if (d_mlp < d_model) {
    throw DataError("encoder config: d_mlp must be >= d_model");
  }
  if (max_seq_len < 3) {
    throw DataError("encoder config: max_seq_len must leave room for BOS, a word and EOS");
  }
  if (!(ln_epsilon > 0.0) || !std::isfinite(ln_epsilon)) {
    throw DataError("encoder config: ln_epsilon must be a small positive real");
  }
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"vocab_size", vocab_size},   {"d_model", d_model},
          {"d_mlp", d_mlp},             {"n_layers", n_layers},
          {"n_heads", n_heads},         {"max_seq_len", max_seq_len},
          {"nonlinearity", nonlinearity_name(nonlinearity)},
          {"ln_epsilon", ln_epsilon},   {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.d_mlp = j.value("d_mlp", c.d_mlp);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.ln_epsilon = j.value("ln_epsilon", c.ln_epsilon);
    c.seed = j.value("seed", c.seed);
    const auto nl = j.value("nonlinearity", std::string("gelu-tanh"));
    if (nl != "gelu-tanh") {
      throw DataError("encoder config: unsupported nonlinearity '" + nl + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("encoder config: ") + e.what());
  }
  return c;
}

EncoderWeights EncoderWeights::zeros(const EncoderConfig& config) {
  config.validate();
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto f = static_cast<Eigen::Index>(config.d_mlp);
  EncoderWeights w;
  w.config = config;
  w.token_embedding = Mat::Zero(static_cast<Eigen::Index>(config.vocab_size), d);
  w.position_embedding = Mat::Zero(static_cast<Eigen::Index>(config.max_seq_len), d);
  w.layers.resize(config.n_layers);
  for (auto& L : w.layers) {
    L.ln1_gamma = Vec::Ones(d);
    L.ln1_beta = Vec::Zero(d);
    L.w_q = L.w_k = L.w_v = L.w_o = Mat::Zero(d, d);
    L.b_q = L.b_k = L.b_v = L.b_o = Vec::Zero(d);
    L.ln2_gamma = Vec::Ones(d);
    L.ln2_beta = Vec::Zero(d);
    L.w_fc = Mat::Zero(f, d);
    L.b_fc = Vec::Zero(f);
    L.w_proj = Mat::Zero(d, f);
    L.b_proj = Vec::Zero(d);
  }
  w.final_gamma = Vec::Ones(d);
  w.final_beta = Vec::Zero(d);
  return w;
}

EncoderWeights EncoderWeights::random_init(const EncoderConfig& config, double stddev) {
  EncoderWeights w = zeros(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, stddev);
  w.for_each_tensor([&](const std::string&, std::span<double> values,
                        const std::vector<std::size_t>& shape) {
    if (shape.size() != 2) return;  // biases and norm parameters keep their defaults
    for (double& x : values) x = static_cast<double>(static_cast<float>(normal(rng)));
  });
  return w;
}

void EncoderWeights::for_each_tensor(
    const std::function<void(const std::string&, std::span<double>,
                             std::vector<std::size_t>)>& fn) {
  visit_tensors(*this, [&](const std::string& name, double* data, std::size_t n,
                           std::vector<std::size_t> shape) {
    fn(name, std::span<double>(data, n), std::move(shape));
  });
}

void EncoderWeights::for_each_tensor(
    const std::function<void(const std::string&, std::span<const double>,
                             std::vector<std::size_t>)>& fn) const {
  visit_tensors(*this, [&](const std::string& name, const double* data, std::size_t n,
                           std::vector<std::size_t> shape) {
    fn(name, std::span<const double>(data, n), std::move(shape));
  });
}

std::size_t EncoderWeights::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, std::span<const double> values,
                      const std::vector<std::size_t>&) { n += values.size(); });
  return n;
}

void EncoderWeights::validate() const {
  config.validate();
  if (layers.size() != config.n_layers) {
    throw DataError("encoder weights: expected " + std::to_string(config.n_layers) +
                    " layers, found " + std::to_string(layers.size()));
  }
  for_each_tensor([&](const std::string& name, std::span<const double> values,
                      const std::vector<std::size_t>& shape) {
    std::size_t expected = 1;
    for (auto s : shape) expected *= s;
    if (values.size() != expected) {
      throw DataError("encoder weights: tensor '" + name + "' has wrong shape");
    }
    for (double x : values) {
      if (!std::isfinite(x)) {
        throw DataError("encoder weights: tensor '" + name + "' has a non-finite entry");
      }
    }
  });
}

TensorFile EncoderWeights::to_tensor_file() const {
  validate();
  TensorFile file;
  file.config = config.to_json();
  file.metadata = {{"kind", "encoder"}, {"vocab_digest", vocab_digest}};
  for_each_tensor([&](const std::string& name, std::span<const double> values,
                      const std::vector<std::size_t>& shape) {
    TensorEntry entry{name, shape, {}};
    entry.values.reserve(values.size());
    for (double x : values) entry.values.push_back(static_cast<float>(x));
    file.tensors.push_back(std::move(entry));
  });
  return file;
}

EncoderWeights EncoderWeights::from_tensor_file(const TensorFile& file) {
  EncoderWeights w = zeros(EncoderConfig::from_json(file.config));
  w.vocab_digest = file.metadata.value("vocab_digest", std::string{});
  w.for_each_tensor([&](const std::string& name, std::span<double> values,
                        const std::vector<std::size_t>& shape) {
    const TensorEntry& entry = file.at(name);
    if (entry.shape != shape) {
      throw DataError("tensor '" + name + "' shape does not match the encoder config");
    }
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = entry.values[i];
  });
  w.validate();
  return w;
}

void EncoderWeights::save(const std::filesystem::path& path) const {
  write_tensor_file(path, to_tensor_file());
}

EncoderWeights EncoderWeights::load(const std::filesystem::path& path) {
  return from_tensor_file(read_tensor_file(path));
}

bool bitwise_equal(const EncoderWeights& a, const EncoderWeights& b) {
  if (a.config.to_json() != b.config.to_json() || a.layers.size() != b.layers.size()) {
    return false;
  }
  std::vector<std::span<const double>> lhs;
  a.for_each_tensor([&](const std::string&, std::span<const double> values,
                        const std::vector<std::size_t>&) { lhs.push_back(values); });
  bool equal = true;
  std::size_t i = 0;
  b.for_each_tensor([&](const std::string&, std::span<const double> values,
                        const std::vector<std::size_t>&) {
    if (!equal) return;
    const auto& other = lhs[i++];
    equal = other.size() == values.size() &&
            std::memcmp(other.data(), values.data(), values.size() * sizeof(double)) == 0;
  });
  return equal;
}

}  // namespace rankedit
