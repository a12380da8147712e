#include "sr2/ssm.hpp"

#include <cmath>
#include <string>

#include "sr2/rng.hpp"

namespace sr2 {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_symmetric(const MatrixXd& M, const std::string& name) {
  if (M.rows() != M.cols()) {
    throw DimensionError(name + " must be square, got " +
                         std::to_string(M.rows()) + "x" +
                         std::to_string(M.cols()));
  }
  const double scale = 1.0 + (M.size() ? M.cwiseAbs().maxCoeff() : 0.0);
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw NumericError(name + " is not symmetric");
  }
}

// Textbook Cholesky with an explicit pivot check: the factorization exists
// exactly when the matrix is positive definite, so a failed pivot *is* the
// PD test.
MatrixXd cholesky_pd(const MatrixXd& M, const std::string& name) {
  check_symmetric(M, name);
  const auto n = M.rows();
  MatrixXd L = MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = M(j, j);
    for (Eigen::Index k = 0; k < j; ++k) diag -= L(j, k) * L(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) {
      throw NumericError(name + ": not positive definite (pivot " +
                         std::to_string(diag) + " at index " +
                         std::to_string(j) + ")");
    }
    L(j, j) = std::sqrt(diag);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = M(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / L(j, j);
    }
  }
  return L;
}

// Solves L Y = B in place for lower-triangular L.
void forward_subst(const MatrixXd& L, MatrixXd& B) {
  for (Eigen::Index c = 0; c < B.cols(); ++c) {
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
      double s = B(i, c);
      for (Eigen::Index k = 0; k < i; ++k) s -= L(i, k) * B(k, c);
      B(i, c) = s / L(i, i);
    }
  }
}

// Solves L^T Y = B in place for lower-triangular L.
void backward_subst(const MatrixXd& L, MatrixXd& B) {
  for (Eigen::Index c = 0; c < B.cols(); ++c) {
    for (Eigen::Index i = L.rows() - 1; i >= 0; --i) {
      double s = B(i, c);
      for (Eigen::Index k = i + 1; k < L.rows(); ++k) s -= L(k, i) * B(k, c);
      B(i, c) = s / L(i, i);
    }
  }
}

// Inverse of an SPD matrix through its Cholesky factor, symmetrised so the
// algebraic symmetry of the inverse holds exactly as stored.
MatrixXd spd_inverse(const MatrixXd& M, const std::string& name) {
  const MatrixXd L = cholesky_pd(M, name);
  MatrixXd X = MatrixXd::Identity(M.rows(), M.cols());
  forward_subst(L, X);
  backward_subst(L, X);
  return 0.5 * (X + X.transpose());
}

// Factor G with G G^T = M for a merely positive semidefinite M (eigenvalue
// clamping); indefinite input raises NumericError. Used only for sampling,
// where the zero-noise limit must stay representable.
MatrixXd psd_factor(const MatrixXd& M, const std::string& name) {
  check_symmetric(M, name);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  if (es.info() != Eigen::Success) {
    throw NumericError(name + ": eigendecomposition failed");
  }
  const VectorXd& ev = es.eigenvalues();
  const double top = std::max(ev.size() ? ev.maxCoeff() : 0.0, 0.0);
  const double tol = 1e-10 * std::max(top, 1.0);
  VectorXd root(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol) {
      throw NumericError(name + ": not positive semidefinite (eigenvalue " +
                         std::to_string(ev[i]) + ")");
    }
    root[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * root.asDiagonal();
}

void check_shapes(const SSMParams& p) {
  const auto d = p.A.rows();
  const auto m = p.C.rows();
  if (d < 1 || m < 1) throw DimensionError("ssm: need d >= 1 and m >= 1");
  if (p.A.cols() != d || p.C.cols() != d || p.Q.rows() != d ||
      p.Q.cols() != d || p.P0.rows() != d || p.P0.cols() != d ||
      p.R.rows() != m || p.R.cols() != m || p.mu0.size() != d) {
    throw DimensionError("ssm: parameter shapes are inconsistent");
  }
}

void check_observations(const SSMParams& p,
                        const std::vector<VectorXd>& x_sequence) {
  if (x_sequence.empty()) {
    throw UsageError("ssm: need at least one observation");
  }
  for (const VectorXd& x : x_sequence) {
    if (x.size() != p.m()) {
      throw DimensionError("ssm: observation of size " +
                           std::to_string(x.size()) + ", expected " +
                           std::to_string(p.m()));
    }
  }
}

VectorXd draw_normal(Rng& rng, Eigen::Index n) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rand_normal(rng);
  return v;
}

}  // namespace

void SSMParams::validate() const {
  check_shapes(*this);
  cholesky_pd(Q, "Q");
  cholesky_pd(R, "R");
  cholesky_pd(P0, "P0");
}

SSMParams random_ssm_params(int d, int m, std::uint64_t seed) {
  if (m < 1 || m >= d) {
    throw UsageError("random_ssm_params: need 1 <= m < d, got m=" +
                     std::to_string(m) + " d=" + std::to_string(d));
  }
  Rng rng = make_rng(seed);
  const auto randn = [&](Eigen::Index r, Eigen::Index c) {
    MatrixXd M(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) M(i, j) = rand_normal(rng);
    }
    return M;
  };
  const auto spd = [&](Eigen::Index n) {
    const MatrixXd W = randn(n, n);
    return MatrixXd(W * W.transpose() / static_cast<double>(n) +
                    0.3 * MatrixXd::Identity(n, n));
  };

  SSMParams p;
  const MatrixXd G = randn(d, d);
  p.A = 0.5 * G / G.norm();  // Frobenius bound keeps the dynamics contractive
  p.C = randn(m, d);
  p.Q = spd(d);
  p.R = spd(m);
  p.P0 = spd(d);
  p.mu0 = draw_normal(rng, d);
  return p;
}

std::pair<std::vector<VectorXd>, std::vector<VectorXd>> simulate(
    const SSMParams& params, long T, std::uint64_t seed) {
  check_shapes(params);
  if (T < 1) throw UsageError("simulate: need T >= 1");
  const MatrixXd Lq = psd_factor(params.Q, "Q");
  const MatrixXd Lr = psd_factor(params.R, "R");
  const MatrixXd Lp = psd_factor(params.P0, "P0");

  Rng rng = make_rng(seed);
  std::vector<VectorXd> z, x;
  z.reserve(static_cast<std::size_t>(T));
  x.reserve(static_cast<std::size_t>(T));
  for (long t = 0; t < T; ++t) {
    if (t == 0) {
      z.push_back(params.mu0 + Lp * draw_normal(rng, params.d()));
    } else {
      z.push_back(params.A * z.back() + Lq * draw_normal(rng, params.d()));
    }
    x.push_back(params.C * z.back() + Lr * draw_normal(rng, params.m()));
  }
  return {std::move(z), std::move(x)};
}

ObsOnlySystem obs_only_normal_system(const SSMParams& params,
                                     const std::vector<VectorXd>& x_sequence) {
  check_shapes(params);
  check_observations(params, x_sequence);
  const MatrixXd Ri = spd_inverse(params.R, "R");
  const MatrixXd CtRi = params.C.transpose() * Ri;
  const MatrixXd block = CtRi * params.C;

  const long T = static_cast<long>(x_sequence.size());
  const int d = params.d();
  ObsOnlySystem sys;
  sys.B = MatrixXd::Zero(T * d, T * d);
  sys.h_data = VectorXd::Zero(T * d);
  for (long t = 0; t < T; ++t) {
    sys.B.block(t * d, t * d, d, d) = block;
    sys.h_data.segment(t * d, d) = CtRi * x_sequence[static_cast<std::size_t>(t)];
  }

  const Eigen::JacobiSVD<MatrixXd> svd(sys.B);
  const VectorXd& sv = svd.singularValues();
  sys.rank.max_sv = sv.size() ? sv[0] : 0.0;
  sys.rank.min_sv = sv.size() ? sv[sv.size() - 1] : 0.0;
  const double cut = 1e-10 * sys.rank.max_sv;
  sys.rank.rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > cut && sv[i] > 0.0) ++sys.rank.rank;
  }
  return sys;
}

Eigen::VectorXd min_norm_obs_solution(const ObsOnlySystem& sys) {
  Eigen::BDCSVD<MatrixXd> svd(sys.B, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-10);
  return svd.solve(sys.h_data);
}

MapSystem build_map_system(const SSMParams& params,
                           const std::vector<VectorXd>& x_sequence) {
  params.validate();
  const ObsOnlySystem obs = obs_only_normal_system(params, x_sequence);

  const long T = static_cast<long>(x_sequence.size());
  const int d = params.d();
  const MatrixXd Qi = spd_inverse(params.Q, "Q");
  const MatrixXd P0i = spd_inverse(params.P0, "P0");
  const MatrixXd AtQiA = params.A.transpose() * Qi * params.A;
  const MatrixXd upper = -params.A.transpose() * Qi;
  const MatrixXd lower = -Qi * params.A;

  MapSystem sys;
  sys.T = T;
  sys.d = d;
  sys.H = obs.B;
  sys.h = obs.h_data;
  for (long t = 0; t < T; ++t) {
    MatrixXd diag = t == 0 ? P0i : Qi;
    if (t + 1 < T) diag += AtQiA;
    sys.H.block(t * d, t * d, d, d) += diag;
    if (t + 1 < T) {
      sys.H.block(t * d, (t + 1) * d, d, d) = upper;
      sys.H.block((t + 1) * d, t * d, d, d) = lower;
    }
  }
  sys.h.head(d) += P0i * params.mu0;
  return sys;
}

std::vector<VectorXd> solve_map(const MapSystem& sys) {
  const long T = sys.T;
  const int d = sys.d;
  if (T < 1 || d < 1 || sys.H.rows() != T * d || sys.H.cols() != T * d ||
      sys.h.size() != T * d) {
    throw DimensionError("solve_map: inconsistent system dimensions");
  }

  // Block Cholesky H = L L^T with lower-bidiagonal block structure:
  //   H_tt = B_t B_t^T + L_t L_t^T,   H_{t,t-1} = B_t L_{t-1}^T.
  std::vector<MatrixXd> L(static_cast<std::size_t>(T));
  std::vector<MatrixXd> B(static_cast<std::size_t>(T));  // B[0] unused
  for (long t = 0; t < T; ++t) {
    MatrixXd S = sys.H.block(t * d, t * d, d, d);
    if (t > 0) {
      // B_t^T solves L_{t-1} B_t^T = H_{t-1,t} (the transposed coupling).
      MatrixXd Bt_T = sys.H.block((t - 1) * d, t * d, d, d);
      forward_subst(L[static_cast<std::size_t>(t - 1)], Bt_T);
      B[static_cast<std::size_t>(t)] = Bt_T.transpose();
      S -= B[static_cast<std::size_t>(t)] *
           B[static_cast<std::size_t>(t)].transpose();
    }
    L[static_cast<std::size_t>(t)] =
        cholesky_pd(0.5 * (S + S.transpose()),
                    "solve_map: Schur block " + std::to_string(t));
  }

  // Forward pass L y = h, blockwise.
  std::vector<VectorXd> y(static_cast<std::size_t>(T));
  for (long t = 0; t < T; ++t) {
    MatrixXd rhs = sys.h.segment(t * d, d);
    if (t > 0) rhs -= B[static_cast<std::size_t>(t)] * y[static_cast<std::size_t>(t - 1)];
    forward_subst(L[static_cast<std::size_t>(t)], rhs);
    y[static_cast<std::size_t>(t)] = rhs;
  }

  // Backward pass L^T z = y, blockwise.
  std::vector<VectorXd> z(static_cast<std::size_t>(T));
  for (long t = T - 1; t >= 0; --t) {
    MatrixXd rhs = y[static_cast<std::size_t>(t)];
    if (t + 1 < T) {
      rhs -= B[static_cast<std::size_t>(t + 1)].transpose() *
             z[static_cast<std::size_t>(t + 1)];
    }
    backward_subst(L[static_cast<std::size_t>(t)], rhs);
    z[static_cast<std::size_t>(t)] = rhs;
  }
  return z;
}

double map_objective(const MapSystem& sys, const std::vector<VectorXd>& z) {
  if (static_cast<long>(z.size()) != sys.T) {
    throw DimensionError("map_objective: trajectory length " +
                         std::to_string(z.size()) + ", system expects " +
                         std::to_string(sys.T));
  }
  VectorXd flat(sys.T * sys.d);
  for (long t = 0; t < sys.T; ++t) {
    if (z[static_cast<std::size_t>(t)].size() != sys.d) {
      throw DimensionError("map_objective: step vector of wrong dimension");
    }
    flat.segment(t * sys.d, sys.d) = z[static_cast<std::size_t>(t)];
  }
  return 0.5 * flat.dot(sys.H * flat) - sys.h.dot(flat);
}

std::vector<VectorXd> rts_smoother(const SSMParams& params,
                                   const std::vector<VectorXd>& x_sequence) {
  params.validate();
  check_observations(params, x_sequence);
  const long T = static_cast<long>(x_sequence.size());
  const int d = params.d();
  const MatrixXd I = MatrixXd::Identity(d, d);

  // Forward Kalman filter. Joseph-form covariance updates keep the filtered
  // covariances symmetric PD even for nearly noise-free observations.
  std::vector<VectorXd> pred_m(static_cast<std::size_t>(T));
  std::vector<MatrixXd> pred_P(static_cast<std::size_t>(T));
  std::vector<VectorXd> filt_m(static_cast<std::size_t>(T));
  std::vector<MatrixXd> filt_P(static_cast<std::size_t>(T));
  for (long t = 0; t < T; ++t) {
    if (t == 0) {
      pred_m[0] = params.mu0;
      pred_P[0] = params.P0;
    } else {
      pred_m[static_cast<std::size_t>(t)] =
          params.A * filt_m[static_cast<std::size_t>(t - 1)];
      pred_P[static_cast<std::size_t>(t)] =
          params.A * filt_P[static_cast<std::size_t>(t - 1)] *
              params.A.transpose() +
          params.Q;
    }
    const MatrixXd& Pp = pred_P[static_cast<std::size_t>(t)];
    const MatrixXd S = params.C * Pp * params.C.transpose() + params.R;
    const MatrixXd K = S.llt().solve(params.C * Pp).transpose();
    const VectorXd innovation =
        x_sequence[static_cast<std::size_t>(t)] -
        params.C * pred_m[static_cast<std::size_t>(t)];
    filt_m[static_cast<std::size_t>(t)] =
        pred_m[static_cast<std::size_t>(t)] + K * innovation;
    const MatrixXd J = I - K * params.C;
    filt_P[static_cast<std::size_t>(t)] =
        J * Pp * J.transpose() + K * params.R * K.transpose();
  }

  // Backward Rauch-Tung-Striebel pass over the means.
  std::vector<VectorXd> smooth(static_cast<std::size_t>(T));
  smooth[static_cast<std::size_t>(T - 1)] = filt_m[static_cast<std::size_t>(T - 1)];
  for (long t = T - 2; t >= 0; --t) {
    const MatrixXd G =
        pred_P[static_cast<std::size_t>(t + 1)]
            .llt()
            .solve(params.A * filt_P[static_cast<std::size_t>(t)])
            .transpose();
    smooth[static_cast<std::size_t>(t)] =
        filt_m[static_cast<std::size_t>(t)] +
        G * (smooth[static_cast<std::size_t>(t + 1)] -
             pred_m[static_cast<std::size_t>(t + 1)]);
  }
  return smooth;
}

}  // namespace sr2
