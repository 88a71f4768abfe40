#include "rankedit/oracles/oracles.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace rankedit::oracles {

namespace {

RealMat zeros(std::size_t rows, std::size_t cols) { return RealMat(rows, RealVec(cols, 0.0L)); }

// y = M x + b, M given as Eigen storage but read element by element.
RealVec affine(const Mat& m, const RealVec& x, const Vec& b) {
  RealVec y(static_cast<std::size_t>(m.rows()));
  for (std::size_t i = 0; i < y.size(); ++i) {
    long double acc = b[static_cast<Eigen::Index>(i)];
    for (std::size_t j = 0; j < x.size(); ++j) {
      acc += static_cast<long double>(m(static_cast<Eigen::Index>(i),
                                        static_cast<Eigen::Index>(j))) * x[j];
    }
    y[i] = acc;
  }
  return y;
}

RealVec norm(const RealVec& x, const Vec& gamma, const Vec& beta, long double eps) {
  long double mean = 0.0L;
  for (auto v : x) mean += v;
  mean /= static_cast<long double>(x.size());
  long double var = 0.0L;
  for (auto v : x) var += (v - mean) * (v - mean);
  var /= static_cast<long double>(x.size());
  const long double inv = 1.0L / std::sqrt(var + eps);
  RealVec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    y[i] = (x[i] - mean) * inv * gamma[e] + beta[e];
  }
  return y;
}

long double gelu(long double x) {
  const long double c = std::sqrt(2.0L / std::numbers::pi_v<long double>);
  return 0.5L * x * (1.0L + std::tanh(c * (x + 0.044715L * x * x * x)));
}

}  // namespace

OracleTolerance::OracleTolerance(double absolute_, double relative_, std::string label_)
    : absolute(absolute_), relative(relative_), label(std::move(label_)) {
  if (absolute < 0.0 || relative < 0.0 || (absolute == 0.0 && relative == 0.0)) {
    throw std::invalid_argument("OracleTolerance '" + label +
                                "': tolerances must be nonnegative and not both zero");
  }
}

bool OracleTolerance::accepts(double a, double b) const {
  if (!std::isfinite(a) || !std::isfinite(b)) return false;
  return std::abs(a - b) <= absolute + relative * std::max(std::abs(a), std::abs(b));
}

std::string OracleTolerance::describe(double a, double b) const {
  std::ostringstream out;
  out.precision(17);
  out << "[" << label << "] got " << a << ", reference " << b << ", |diff| " << std::abs(a - b)
      << " (abs tol " << absolute << ", rel tol " << relative << ")";
  return out.str();
}

ReferenceTrace dense_forward_reference(const EncoderWeights& w, const std::vector<int>& ids,
                                       const std::optional<SubstitutionPoint>& sub) {
  const auto& cfg = w.config;
  const std::size_t T = ids.size();
  const std::size_t d = cfg.d_model;
  const std::size_t heads = cfg.n_heads;
  const std::size_t hd = d / heads;
  const long double eps = cfg.ln_epsilon;
  if (T == 0 || T > cfg.max_seq_len) throw std::invalid_argument("bad sequence length");

  RealMat h = zeros(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      h[t][i] = static_cast<long double>(w.token_embedding(ids[t], static_cast<Eigen::Index>(i))) +
                w.position_embedding(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
    }
  }

  ReferenceTrace trace;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& L = w.layers[l];
    trace.residual.push_back(h);

    std::vector<RealVec> q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      const RealVec a = norm(h[t], L.ln1_gamma, L.ln1_beta, eps);
      q[t] = affine(L.w_q, a, L.b_q);
      k[t] = affine(L.w_k, a, L.b_k);
      v[t] = affine(L.w_v, a, L.b_v);
    }
    RealMat mid = h;
    for (std::size_t t = 0; t < T; ++t) {
      RealVec mix(d, 0.0L);
      for (std::size_t head = 0; head < heads; ++head) {
        RealVec score(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          long double s = 0.0L;
          for (std::size_t c = head * hd; c < (head + 1) * hd; ++c) s += q[t][c] * k[j][c];
          score[j] = s / std::sqrt(static_cast<long double>(hd));
        }
        long double total = 0.0L;
        for (auto& s : score) {
          s = std::exp(s);
          total += s;
        }
        for (std::size_t j = 0; j <= t; ++j) {
          for (std::size_t c = head * hd; c < (head + 1) * hd; ++c) {
            mix[c] += score[j] / total * v[j][c];
          }
        }
      }
      const RealVec o = affine(L.w_o, mix, L.b_o);
      for (std::size_t i = 0; i < d; ++i) mid[t][i] += o[i];
    }

    RealMat keys(T), outs(T);
    for (std::size_t t = 0; t < T; ++t) {
      const RealVec x = norm(mid[t], L.ln2_gamma, L.ln2_beta, eps);
      RealVec pre = affine(L.w_fc, x, L.b_fc);
      for (auto& p : pre) p = gelu(p);
      keys[t] = pre;
      if (sub && sub->layer == l && sub->token == t) {
        outs[t] = RealVec(sub->value.begin(), sub->value.end());
      } else {
        outs[t] = affine(L.w_proj, pre, L.b_proj);
      }
      for (std::size_t i = 0; i < d; ++i) h[t][i] = mid[t][i] + outs[t][i];
    }
    trace.mlp_key.push_back(std::move(keys));
    trace.mlp_out.push_back(std::move(outs));
  }
  trace.eos_embedding = norm(h[T - 1], w.final_gamma, w.final_beta, eps);
  return trace;
}

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& v, double epsilon) {
  std::vector<double> grad(v.size());
  std::vector<double> probe = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    probe[i] = v[i] + epsilon;
    const double up = f(probe);
    probe[i] = v[i] - epsilon;
    const double down = f(probe);
    probe[i] = v[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_diff_grad: non-finite function value");
    }
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

RealMat constrained_min_reference(const RealMat& c_reg, const RealVec& k_star, const RealVec& r) {
  const std::size_t n = k_star.size();
  const std::size_t m = r.size();
  if (c_reg.size() != n || n == 0 || m == 0) throw std::invalid_argument("shape mismatch");
  // Unknowns: D row-major (m*n entries) then one multiplier per row.
  // Stationarity: 2 C D_i^T + mu_i k = 0; feasibility: D_i k = r_i.
  const std::size_t dim = m * n + m;
  RealMat a = zeros(dim, dim + 1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t row = i * n + p;
      for (std::size_t q = 0; q < n; ++q) a[row][i * n + q] = 2.0L * c_reg[p][q];
      a[row][m * n + i] = k_star[p];
    }
    const std::size_t row = m * n + i;
    for (std::size_t q = 0; q < n; ++q) a[row][i * n + q] = k_star[q];
    a[row][dim] = r[i];
  }
  // Gaussian elimination with partial pivoting.
  for (std::size_t col = 0; col < dim; ++col) {
    std::size_t pivot = col;
    for (std::size_t row = col + 1; row < dim; ++row) {
      if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
    }
    if (std::abs(a[pivot][col]) < 1e-30L) {
      throw std::domain_error("constrained_min_reference: singular constraint system");
    }
    std::swap(a[col], a[pivot]);
    for (std::size_t row = 0; row < dim; ++row) {
      if (row == col || a[row][col] == 0.0L) continue;
      const long double factor = a[row][col] / a[col][col];
      for (std::size_t c = col; c <= dim; ++c) a[row][c] -= factor * a[col][c];
    }
  }
  RealMat delta = zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t q = 0; q < n; ++q) {
      const std::size_t idx = i * n + q;
      delta[i][q] = a[idx][dim] / a[idx][idx];
    }
  }
  return delta;
}

RealMat covariance_reference(const std::vector<RealVec>& keys) {
  if (keys.empty()) throw std::invalid_argument("covariance_reference: no keys");
  const std::size_t n = keys.front().size();
  RealMat c = zeros(n, n);
  for (const auto& k : keys) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) c[i][j] += k[i] * k[j];
    }
  }
  for (auto& row : c) {
    for (auto& x : row) x /= static_cast<long double>(keys.size());
  }
  return c;
}

}  // namespace rankedit::oracles
