#pragma once

// Brute-force references for tests. Everything here is written with plain
// loops in long double and shares no numerical code with the library.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rankedit/encoder.hpp"

namespace rankedit::oracles {

using RealVec = std::vector<long double>;
using RealMat = std::vector<RealVec>;  // row-major, rows of equal length

struct OracleTolerance {
  double absolute = 0.0;
  double relative = 0.0;
  std::string label;

  OracleTolerance(double absolute, double relative, std::string label);

  // |a - b| <= absolute + relative * max(|a|, |b|)
  bool accepts(double a, double b) const;
  std::string describe(double a, double b) const;
};

struct SubstitutionPoint {
  std::size_t layer = 0;
  std::size_t token = 0;
  std::vector<double> value;
};

struct ReferenceTrace {
  std::vector<RealMat> residual;  // per layer: T x d_model entering the layer
  std::vector<RealMat> mlp_key;   // per layer: T x d_mlp
  std::vector<RealMat> mlp_out;   // per layer: T x d_model
  RealVec eos_embedding;
};

ReferenceTrace dense_forward_reference(const EncoderWeights& w, const std::vector<int>& ids,
                                       const std::optional<SubstitutionPoint>& sub = {});

// Central differences; throws std::domain_error when f is not finite.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& v, double epsilon = 1e-4);

// min ||D C^{1/2}||_F subject to D k = r, solved through the full KKT system
// of the vectorized problem (dims <= 8). Throws std::domain_error when the
// system is singular.
RealMat constrained_min_reference(const RealMat& c_reg, const RealVec& k_star, const RealVec& r);

// (1/n) sum k k^T accumulated in long double.
RealMat covariance_reference(const std::vector<RealVec>& keys);

}  // namespace rankedit::oracles
