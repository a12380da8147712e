#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sr2/tensor.hpp"

namespace sr2::testing {

// Central-difference gradient oracle. Runs one analytic backward pass, then
// perturbs every entry of every tensor in `params` in place and recomputes
// the loss, so loss_fn must rebuild its graph from the current parameter
// values on each call. Returns the worst relative error
//   |analytic - cd| / (|cd| + 1e-8),  cd = (f(x+h) - f(x-h)) / 2h.
inline double max_grad_rel_err(const std::function<Tensor<double>()>& loss_fn,
                               const std::vector<Tensor<double>*>& params,
                               double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  Tensor<double> loss = loss_fn();
  backward(loss);

  NoGradGuard tape_off;
  double worst = 0.0;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->data->size(); ++i) {
      const double keep = (*p->data)[i];
      (*p->data)[i] = keep + h;
      const double up = loss_fn().item();
      (*p->data)[i] = keep - h;
      const double down = loss_fn().item();
      (*p->data)[i] = keep;
      const double cd = (up - down) / (2.0 * h);
      const double rel = std::abs((*p->grad)[i] - cd) / (std::abs(cd) + 1e-8);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace sr2::testing
