#pragma once

// Linear-Gaussian state-space oracle: the fully checkable mathematical
// counterpart of the learned refinement loop. Observations alone give an
// under-determined normal system whose matrix B is rank deficient; adding the
// dynamics prior yields H = B + D_dyn, which is symmetric positive definite,
// so the MAP trajectory is the unique minimiser of
//   J(z) = 1/2 z^T H z - h^T z
// and must coincide with the posterior mean produced by a Kalman smoother.
// Everything here runs in double precision with direct solvers only.

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "sr2/errors.hpp"

namespace sr2 {

struct SSMParams {
  Eigen::MatrixXd A;   // d x d transition
  Eigen::MatrixXd C;   // m x d observation
  Eigen::MatrixXd Q;   // d x d process noise covariance
  Eigen::MatrixXd R;   // m x m observation noise covariance
  Eigen::MatrixXd P0;  // d x d initial covariance
  Eigen::VectorXd mu0; // d initial mean

  int d() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(C.rows()); }

  // Shape coherence plus symmetric positive definiteness of Q, R, P0,
  // established by running the Cholesky factorization; throws NumericError.
  // Estimators call this. The under-determined regime of interest has m < d,
  // but that is a property of the instances studied, not of the type: the
  // m = d identity case is exactly where the ill-posedness vanishes, and the
  // assembly routines must be able to exhibit that.
  void validate() const;
};

// Well-conditioned random instance in the under-determined regime (m < d):
// contractive A, generic C, well-separated SPD covariances.
SSMParams random_ssm_params(int d, int m, std::uint64_t seed);

// Draws z^1 ~ N(mu0, P0), z^t = A z^(t-1) + w_t, x^t = C z^t + v_t.
// Tolerates merely positive *semi*definite covariances so the exact
// noise-free limit (zero covariance) is reachable; an indefinite or
// asymmetric covariance raises NumericError.
std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::VectorXd>>
simulate(const SSMParams& params, long T, std::uint64_t seed);

struct RankReport {
  long rank = 0;        // singular values above 1e-10 x the largest
  double min_sv = 0.0;
  double max_sv = 0.0;
};

// Observation-only normal equations: B = C_b^T R_b^-1 C_b (block diagonal),
// h_data = C_b^T R_b^-1 x. With m < d, B is singular: rank <= mT < dT, the
// witness that least squares alone cannot pick a trajectory.
struct ObsOnlySystem {
  Eigen::MatrixXd B;       // (T d) x (T d)
  Eigen::VectorXd h_data;  // T d
  RankReport rank;
};
ObsOnlySystem obs_only_normal_system(
    const SSMParams& params, const std::vector<Eigen::VectorXd>& x_sequence);

// Minimum-norm least-squares solution of the observation-only system, the
// canonical representative of its affine solution set (for comparisons).
Eigen::VectorXd min_norm_obs_solution(const ObsOnlySystem& sys);

struct MapSystem {
  Eigen::MatrixXd H;  // B + D_dyn, (T d) x (T d), block tridiagonal
  Eigen::VectorXd h;  // h_data + h_init
  long T = 0;
  int d = 0;
};

// D_dyn diagonal blocks: P0^-1 + A^T Q^-1 A (t = 1), Q^-1 + A^T Q^-1 A
// (1 < t < T), Q^-1 (t = T); off-diagonal blocks -A^T Q^-1 / -Q^-1 A.
// h_init = (P0^-1 mu0, 0, ..., 0).
MapSystem build_map_system(const SSMParams& params,
                           const std::vector<Eigen::VectorXd>& x_sequence);

// Unique minimiser of J via a block-tridiagonal Cholesky factorization,
// O(T d^3). NumericError if a pivot fails, i.e. the system is not positive
// definite.
std::vector<Eigen::VectorXd> solve_map(const MapSystem& sys);

// 1/2 z^T H z - h^T z, stacking the per-step vectors.
double map_objective(const MapSystem& sys,
                     const std::vector<Eigen::VectorXd>& z);

// Independent oracle: forward Kalman filter, backward Rauch-Tung-Striebel
// pass, returning the posterior means. For a linear-Gaussian model these are
// exactly the MAP trajectory, so the two routes must agree.
std::vector<Eigen::VectorXd> rts_smoother(
    const SSMParams& params, const std::vector<Eigen::VectorXd>& x_sequence);

}  // namespace sr2
