#include "ctaf/num/grad_check.hpp"

#include <cmath>
#include <sstream>

namespace ctaf::num {

double grad_rel_err(double analytic, double numeric) {
  const double denom =
      std::max(1.0, std::max(std::fabs(analytic), std::fabs(numeric)));
  return std::fabs(analytic - numeric) / denom;
}

std::string GradCheckResult::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " (tol " << tol << ")\n";
  for (const auto& it : items) {
    os << "  " << it.param << ": max_rel_err=" << it.max_rel_err;
    if (it.max_rel_err > tol)
      os << "  [worst idx " << it.worst_index << " analytic " << it.analytic
         << " numeric " << it.numeric << "]";
    os << "\n";
  }
  return os.str();
}

GradCheckResult grad_check(ParamStore& params, const GradEval& eval, double eps,
                           double tol) {
  GradCheckResult res;
  res.tol = tol;

  std::map<std::string, Tensor> grads;
  eval(params, &grads);

  for (auto& e : params.entries) {
    GradCheckResult::Item item;
    item.param = e.name;
    const auto git = grads.find(e.name);
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + eps;
      const double f1 = eval(params, nullptr);
      e.value[i] = saved - eps;
      const double f2 = eval(params, nullptr);
      e.value[i] = saved;
      const double numeric = (f1 - f2) / (2.0 * eps);
      const double analytic = git == grads.end() ? 0.0 : git->second[i];
      const double err = grad_rel_err(analytic, numeric);
      if (err > item.max_rel_err) {
        item.max_rel_err = err;
        item.worst_index = i;
        item.analytic = analytic;
        item.numeric = numeric;
      }
    }
    res.items.push_back(std::move(item));
  }
  res.pass = true;
  for (const auto& it : res.items)
    if (it.max_rel_err > tol) res.pass = false;
  return res;
}

}  // namespace ctaf::num
