// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "livo/state.hpp"

namespace livo {

/// Stacked residuals z, Jacobian H (rows x error dim) and per-row variance.
/// The lumped measurement noise L^k v is folded into the diagonal variance.
struct MeasurementBatch {
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd noise_var;

  Eigen::Index rows() const { return residuals.size(); }

  void validate(int state_dim) const {
    if (jacobian.rows() != rows() || noise_var.size() != rows()) {
      throw std::invalid_argument("MeasurementBatch: inconsistent row counts");
    }
    if (rows() > 0 && jacobian.cols() != state_dim) {
      throw std::invalid_argument("MeasurementBatch: Jacobian column mismatch");
    }
    if (rows() > 0 && noise_var.minCoeff() <= 0.0) {
      throw std::invalid_argument("MeasurementBatch: non-positive noise variance");
    }
  }
};

struct UpdateReport {
  int iterations = 0;
  double final_delta_norm = 0.0;
  bool converged = false;
  std::vector<double> residual_rms;
};

template <class State>
struct UpdateResult {
  State state;
  Eigen::MatrixXd covariance;
  UpdateReport report;
};

/// Iterated error-state update. One relinearization per iteration:
///   K = (H^T R^-1 H + P^-1)^-1 H^T R^-1
///   x^{k+1} = x^k [+] ( -K z^k - (I - K H)(x^k [-] x) )
/// until the step norm drops below eps. Solved in information form, so the
/// posterior covariance (I - K H) P equals (P^-1 + H^T R^-1 H)^-1.
template <class State, class Provider>
UpdateResult<State> iterated_update(const State& prior_state, const Eigen::MatrixXd& prior_cov,
                                    Provider&& provider, int max_iters, double eps) {
  constexpr int n = State::kDim;
  using MatN = Eigen::Matrix<double, n, n>;
  using VecN = Eigen::Matrix<double, n, 1>;

  UpdateResult<State> out{prior_state, prior_cov, {}};
  MatN prior = prior_cov;
  prior = 0.5 * (prior + prior.transpose()).eval();
  Eigen::LDLT<MatN> prior_ldlt(prior);
  if (prior_ldlt.info() != Eigen::Success) {
    throw std::runtime_error("iterated_update: prior covariance factorization failed");
  }
  const MatN prior_info = prior_ldlt.solve(MatN::Identity());

  State x = prior_state;
  MatN info = prior_info;
  bool any_rows = false;

  for (int iter = 0; iter < max_iters; ++iter) {
    const MeasurementBatch batch = provider(x);
    batch.validate(n);
    if (batch.rows() == 0) break;
    any_rows = true;

    const Eigen::VectorXd w = batch.noise_var.cwiseInverse();
    const Eigen::MatrixXd hw = batch.jacobian.transpose() * w.asDiagonal();
    info = prior_info + hw * batch.jacobian;
    info = 0.5 * (info + info.transpose()).eval();
    Eigen::LDLT<MatN> ldlt(info);
    if (ldlt.info() != Eigen::Success) {
      throw std::runtime_error("iterated_update: singular normal matrix");
    }

    const VecN anchor = x.boxminus(prior_state);
    const VecN rhs = hw * batch.residuals + prior_info * anchor;
    const VecN delta = -ldlt.solve(rhs);

    x = x.boxplus(delta);
    out.report.iterations = iter + 1;
    out.report.final_delta_norm = delta.norm();
    out.report.residual_rms.push_back(
        std::sqrt(batch.residuals.squaredNorm() / static_cast<double>(batch.rows())));
    if (out.report.final_delta_norm < eps) {
      out.report.converged = true;
      break;
    }
  }

  out.state = x;
  if (any_rows) {
    Eigen::LDLT<MatN> ldlt(info);
    out.covariance = ldlt.solve(MatN::Identity());
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  } else {
    out.report.converged = true;
  }
  return out;
}

/// Two-stage sequential update: LiDAR first, then the visual stage over the
/// image pyramid from coarsest to finest. Intermediate pyramid levels move
/// the state only; the posterior covariance comes from the last level with
/// measurements, applied against the LiDAR-stage posterior.
template <class State, class LidarProvider, class VisualProvider>
UpdateResult<State> sequential_update(const State& prior_state, const Eigen::MatrixXd& prior_cov,
                                      LidarProvider&& lidar_model,
                                      std::vector<VisualProvider>& visual_model_per_level,
                                      int lidar_max_iters, int visual_max_iters, double eps,
                                      UpdateReport* lidar_report = nullptr,
                                      std::vector<UpdateReport>* visual_reports = nullptr) {
  auto lidar = iterated_update<State>(prior_state, prior_cov, lidar_model, lidar_max_iters, eps);
  if (lidar_report) *lidar_report = lidar.report;

  State x = lidar.state;
  Eigen::MatrixXd posterior_cov = lidar.covariance;
  for (auto& level_model : visual_model_per_level) {
    auto res = iterated_update<State>(x, lidar.covariance, level_model, visual_max_iters, eps);
    x = res.state;
    if (res.report.iterations > 0) posterior_cov = res.covariance;
    if (visual_reports) visual_reports->push_back(res.report);
  }
  return {x, posterior_cov, lidar.report};
}

/// NavState adapter for the templated filter core.
struct FilterState {
  static constexpr int kDim = kErrorDim;
  NavState nav;

  FilterState boxplus(const ErrorVec& d) const { return {nav.boxplus(d)}; }
  ErrorVec boxminus(const FilterState& o) const { return nav.boxminus(o.nav); }
};

}  // namespace livo
