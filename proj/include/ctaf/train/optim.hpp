#pragma once

#include <map>
#include <string>

#include "ctaf/num/params.hpp"
#include "ctaf/num/tensor.hpp"

namespace ctaf::train {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay. Moment buffers live in the ParamStore
// entries; parameters absent from the gradient map are left untouched (their
// moments do not advance either).
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(num::ParamStore& params,
            const std::map<std::string, num::Tensor>& grads);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long t() const { return t_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
};

}  // namespace ctaf::train
