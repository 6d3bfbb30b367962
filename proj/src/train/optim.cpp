#include "ctaf/train/optim.hpp"

#include <cmath>

#include "ctaf/common/errors.hpp"

namespace ctaf::train {

void AdamW::step(num::ParamStore& params,
                 const std::map<std::string, num::Tensor>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& e : params.entries) {
    const auto git = grads.find(e.name);
    if (git == grads.end()) continue;
    const num::Tensor& g = git->second;
    if (!g.same_shape(e.value))
      throw NumericError("gradient shape mismatch for '" + e.name + "'");
    if (!e.has_state) {
      e.m = num::Tensor(e.value.shape());
      e.v = num::Tensor(e.value.shape());
      e.has_state = true;
    }
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      const double gi = g[i];
      e.m[i] = cfg_.beta1 * e.m[i] + (1.0 - cfg_.beta1) * gi;
      e.v[i] = cfg_.beta2 * e.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      e.value[i] -=
          cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                     cfg_.weight_decay * e.value[i]);
    }
  }
}

}  // namespace ctaf::train
