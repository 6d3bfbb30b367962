#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ctaf/num/params.hpp"
#include "ctaf/num/tensor.hpp"

namespace ctaf::num {

// Evaluate the scalar objective from the current parameter values. When
// grads is non-null, also run backward and fill per-parameter gradients
// (parameters that do not influence the objective may be absent).
using GradEval =
    std::function<double(ParamStore& params, std::map<std::string, Tensor>* grads)>;

// |a - n| / max(1, |a|, |n|): absolute near zero, relative when large.
double grad_rel_err(double analytic, double numeric);

struct GradCheckResult {
  struct Item {
    std::string param;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  std::vector<Item> items;  // one per parameter, registration order
  double tol = 0.0;
  bool pass = false;
  std::string summary() const;
};

// Central finite differences over every scalar in every parameter.
// Parameters the objective never touches are reported with zero error.
GradCheckResult grad_check(ParamStore& params, const GradEval& eval,
                           double eps = 1e-5, double tol = 1e-4);

}  // namespace ctaf::num
