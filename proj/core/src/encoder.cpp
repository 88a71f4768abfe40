#include <cmath>
#include <numbers>
#include <optional>

#include "rankedit/encoder.hpp"
#include "rankedit/error.hpp"

namespace rankedit {

namespace {

constexpr double kGeluCubic = 0.044715;

struct NormCache {
  Mat xhat;        // T x d
  Vec inv_std;     // T
};

struct LayerCache {
  Mat h_in;        // T x d
  NormCache ln1;
  Mat q, k, v;     // T x d
  std::vector<Mat> probs;  // per head, T x T lower triangle
  Mat attn_mix;    // T x d, concatenated head outputs before w_o
  Mat h_mid;       // T x d
  NormCache ln2;
  Mat pre;         // T x d_mlp, pre-activation
  Mat key;         // T x d_mlp
  Mat mlp_out;     // T x d
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Mat h_final;     // T x d
  Vec eos_xhat;
  double eos_inv_std = 0.0;
  Vec eos_embedding;
};

struct Substitution {
  std::size_t layer;
  std::size_t token;
  const Vec* value;
};

// Normalizes row `t` of `x` into row `t` of `out`, caching what the reverse
// pass needs.
void layer_norm_row(const Mat& x, Eigen::Index t, const Vec& gamma, const Vec& beta,
                    double eps, NormCache& cache, Mat& out) {
  const auto d = static_cast<double>(x.cols());
  const double mean = x.row(t).sum() / d;
  const double var = (x.row(t).array() - mean).square().sum() / d;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  cache.xhat.row(t) = (x.row(t).array() - mean) * inv_std;
  cache.inv_std(t) = inv_std;
  out.row(t) = cache.xhat.row(t).cwiseProduct(gamma.transpose()) + beta.transpose();
}

Vec layer_norm_backward(const Eigen::Ref<const Eigen::RowVectorXd>& xhat, double inv_std,
                        const Vec& gamma, const Vec& grad_out) {
  const Vec g_xhat = gamma.cwiseProduct(grad_out);
  const double d = static_cast<double>(g_xhat.size());
  const double mean_g = g_xhat.sum() / d;
  const double mean_gx = g_xhat.dot(xhat.transpose()) / d;
  return inv_std * (g_xhat.array() - mean_g - xhat.transpose().array() * mean_gx).matrix();
}

void check_finite(const Mat& m, const char* what, std::size_t layer) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite ") + what + " at layer " +
                       std::to_string(layer));
  }
}

void check_sequence(const EncoderWeights& w, const TokenSequence& seq) {
  if (seq.ids.size() < 2) {
    throw DataError("token sequence must contain at least BOS and EOS");
  }
  if (seq.ids.size() > w.config.max_seq_len) {
    throw DataError("token sequence longer than max_seq_len");
  }
  const auto vocab = static_cast<std::int32_t>(w.config.vocab_size);
  for (auto id : seq.ids) {
    if (id < 0 || id >= vocab) {
      throw DataError("token id " + std::to_string(id) + " outside the embedding table");
    }
  }
}

void check_substitution_point(const EncoderWeights& w, const TokenSequence& seq,
                              std::size_t layer, std::size_t token) {
  if (layer >= w.config.n_layers) {
    throw DataError("layer " + std::to_string(layer) + " out of range (n_layers " +
                    std::to_string(w.config.n_layers) + ")");
  }
  if (token >= seq.eos_position()) {
    throw DataError("token index " + std::to_string(token) +
                    " must lie strictly before the EOS position " +
                    std::to_string(seq.eos_position()));
  }
}

ForwardCache forward(const EncoderWeights& w, const TokenSequence& seq,
                     std::optional<Substitution> sub) {
  check_sequence(w, seq);
  const auto T = static_cast<Eigen::Index>(seq.ids.size());
  const auto d = static_cast<Eigen::Index>(w.config.d_model);
  const auto f = static_cast<Eigen::Index>(w.config.d_mlp);
  const auto n_heads = static_cast<Eigen::Index>(w.config.n_heads);
  const auto hd = static_cast<Eigen::Index>(w.config.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double eps = w.config.ln_epsilon;

  ForwardCache cache;
  Mat h(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    h.row(t) = w.token_embedding.row(seq.ids[static_cast<std::size_t>(t)]) +
               w.position_embedding.row(t);
  }

  cache.layers.resize(w.layers.size());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const LayerWeights& L = w.layers[l];
    LayerCache& c = cache.layers[l];
    c.h_in = h;
    c.ln1 = {Mat(T, d), Vec(T)};
    Mat a(T, d);
    c.q.resize(T, d);
    c.k.resize(T, d);
    c.v.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      layer_norm_row(h, t, L.ln1_gamma, L.ln1_beta, eps, c.ln1, a);
      const Vec a_t = a.row(t).transpose();
      c.q.row(t) = (L.w_q * a_t + L.b_q).transpose();
      c.k.row(t) = (L.w_k * a_t + L.b_k).transpose();
      c.v.row(t) = (L.w_v * a_t + L.b_v).transpose();
    }

    c.probs.assign(static_cast<std::size_t>(n_heads), Mat::Zero(T, T));
    c.attn_mix = Mat::Zero(T, d);
    for (Eigen::Index hh = 0; hh < n_heads; ++hh) {
      Mat& p = c.probs[static_cast<std::size_t>(hh)];
      const Eigen::Index off = hh * hd;
      for (Eigen::Index t = 0; t < T; ++t) {
        // Causal: query t sees keys 0..t only.
        double max_score = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= t; ++j) {
          p(t, j) = scale * c.q.row(t).segment(off, hd).dot(c.k.row(j).segment(off, hd));
          max_score = std::max(max_score, p(t, j));
        }
        double total = 0.0;
        for (Eigen::Index j = 0; j <= t; ++j) {
          p(t, j) = std::exp(p(t, j) - max_score);
          total += p(t, j);
        }
        for (Eigen::Index j = 0; j <= t; ++j) {
          p(t, j) /= total;
          c.attn_mix.row(t).segment(off, hd) += p(t, j) * c.v.row(j).segment(off, hd);
        }
      }
    }

    c.h_mid.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      c.h_mid.row(t) =
          h.row(t) + (L.w_o * c.attn_mix.row(t).transpose() + L.b_o).transpose();
    }

    c.ln2 = {Mat(T, d), Vec(T)};
    Mat x2(T, d);
    c.pre.resize(T, f);
    c.key.resize(T, f);
    c.mlp_out.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      layer_norm_row(c.h_mid, t, L.ln2_gamma, L.ln2_beta, eps, c.ln2, x2);
      c.pre.row(t) = (L.w_fc * x2.row(t).transpose() + L.b_fc).transpose();
      c.key.row(t) = c.pre.row(t).unaryExpr([](double x) { return gelu_tanh(x); });
      if (sub && sub->layer == l && static_cast<Eigen::Index>(sub->token) == t) {
        c.mlp_out.row(t) = sub->value->transpose();
      } else {
        c.mlp_out.row(t) = (L.w_proj * c.key.row(t).transpose() + L.b_proj).transpose();
      }
    }
    h = c.h_mid + c.mlp_out;
    check_finite(h, "residual stream", l);
  }

  cache.h_final = h;
  const Eigen::Index eos = T - 1;
  const double mean = h.row(eos).sum() / static_cast<double>(d);
  const double var = (h.row(eos).array() - mean).square().sum() / static_cast<double>(d);
  cache.eos_inv_std = 1.0 / std::sqrt(var + eps);
  cache.eos_xhat = ((h.row(eos).array() - mean) * cache.eos_inv_std).transpose();
  cache.eos_embedding = cache.eos_xhat.cwiseProduct(w.final_gamma) + w.final_beta;
  if (!cache.eos_embedding.allFinite()) {
    throw NumericError("non-finite EOS embedding");
  }
  return cache;
}

// Pulls a gradient w.r.t. a layer's output residual back to its input
// residual.
Mat layer_backward(const LayerWeights& L, const LayerCache& c, std::size_t n_heads,
                   const Mat& grad_out) {
  const Eigen::Index T = grad_out.rows();
  const Eigen::Index d = grad_out.cols();
  const auto H = static_cast<Eigen::Index>(n_heads);
  const Eigen::Index hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat g_mid = grad_out;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vec g_key = L.w_proj.transpose() * grad_out.row(t).transpose();
    Vec g_pre(g_key.size());
    for (Eigen::Index i = 0; i < g_key.size(); ++i) {
      g_pre(i) = g_key(i) * gelu_tanh_derivative(c.pre(t, i));
    }
    const Vec g_x2 = L.w_fc.transpose() * g_pre;
    g_mid.row(t) +=
        layer_norm_backward(c.ln2.xhat.row(t), c.ln2.inv_std(t), L.ln2_gamma, g_x2)
            .transpose();
  }

  Mat g_mix(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    g_mix.row(t) = (L.w_o.transpose() * g_mid.row(t).transpose()).transpose();
  }
  Mat g_q = Mat::Zero(T, d);
  Mat g_k = Mat::Zero(T, d);
  Mat g_v = Mat::Zero(T, d);
  for (Eigen::Index hh = 0; hh < H; ++hh) {
    const Mat& p = c.probs[static_cast<std::size_t>(hh)];
    const Eigen::Index off = hh * hd;
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto g_o = g_mix.row(t).segment(off, hd);
      Eigen::VectorXd g_p(t + 1);
      double weighted = 0.0;
      for (Eigen::Index j = 0; j <= t; ++j) {
        g_p(j) = g_o.dot(c.v.row(j).segment(off, hd));
        weighted += p(t, j) * g_p(j);
        g_v.row(j).segment(off, hd) += p(t, j) * g_o;
      }
      for (Eigen::Index j = 0; j <= t; ++j) {
        const double g_score = scale * p(t, j) * (g_p(j) - weighted);
        g_q.row(t).segment(off, hd) += g_score * c.k.row(j).segment(off, hd);
        g_k.row(j).segment(off, hd) += g_score * c.q.row(t).segment(off, hd);
      }
    }
  }

  Mat g_in = g_mid;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vec g_a = L.w_q.transpose() * g_q.row(t).transpose() +
                    L.w_k.transpose() * g_k.row(t).transpose() +
                    L.w_v.transpose() * g_v.row(t).transpose();
    g_in.row(t) +=
        layer_norm_backward(c.ln1.xhat.row(t), c.ln1.inv_std(t), L.ln1_gamma, g_a)
            .transpose();
  }
  return g_in;
}

}  // namespace

double gelu_tanh(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + kGeluCubic * x * x * x)));
}

double gelu_tanh_derivative(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double th = std::tanh(c * (x + kGeluCubic * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * kGeluCubic * x * x);
}

EncodeResult encode(const EncoderWeights& w, const TokenSequence& seq) {
  ForwardCache cache = forward(w, seq, std::nullopt);
  EncodeResult result;
  result.trace.layers.reserve(cache.layers.size());
  for (auto& c : cache.layers) {
    result.trace.layers.push_back(
        LayerTrace{std::move(c.h_in), std::move(c.key), std::move(c.mlp_out)});
  }
  result.trace.final_residual = std::move(cache.h_final);
  result.trace.eos_embedding = cache.eos_embedding;
  result.eos_embedding = std::move(cache.eos_embedding);
  return result;
}

Vec encode_with_substitution(const EncoderWeights& w, const TokenSequence& seq,
                             std::size_t layer, std::size_t token, const Vec& v) {
  check_substitution_point(w, seq, layer, token);
  if (static_cast<std::size_t>(v.size()) != w.config.d_model) {
    throw DataError("substituted value must have dimension d_model");
  }
  return forward(w, seq, Substitution{layer, token, &v}).eos_embedding;
}

Vec collect_mlp_key(const EncoderWeights& w, const TokenSequence& seq, std::size_t layer,
                    std::size_t token) {
  if (layer >= w.config.n_layers) {
    throw DataError("layer " + std::to_string(layer) + " out of range");
  }
  if (token >= seq.ids.size()) {
    throw DataError("token index " + std::to_string(token) + " out of range");
  }
  const ForwardCache cache = forward(w, seq, std::nullopt);
  return cache.layers[layer].key.row(static_cast<Eigen::Index>(token)).transpose();
}

Vec grad_wrt_substitution(const EncoderWeights& w, const TokenSequence& seq,
                          std::size_t layer, std::size_t token, const Vec& v,
                          const Vec& eos_grad) {
  check_substitution_point(w, seq, layer, token);
  const auto d = static_cast<Eigen::Index>(w.config.d_model);
  if (v.size() != d || eos_grad.size() != d) {
    throw DataError("substituted value and upstream gradient must have dimension d_model");
  }
  const ForwardCache cache = forward(w, seq, Substitution{layer, token, &v});
  const auto T = static_cast<Eigen::Index>(seq.ids.size());

  Mat g = Mat::Zero(T, d);
  g.row(T - 1) = layer_norm_backward(cache.eos_xhat.transpose(), cache.eos_inv_std,
                                     w.final_gamma, eos_grad)
                     .transpose();
  for (std::size_t l = w.layers.size(); l-- > layer + 1;) {
    g = layer_backward(w.layers[l], cache.layers[l], w.config.n_heads, g);
  }
  // The substituted value enters the residual stream additively.
  Vec grad = g.row(static_cast<Eigen::Index>(token)).transpose();
  if (!grad.allFinite()) {
    throw NumericError("non-finite gradient with respect to the substituted value");
  }
  return grad;
}

}  // namespace rankedit
