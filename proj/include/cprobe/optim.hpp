#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cprobe/tensor.hpp"

namespace cprobe {

// Raised when training math breaks down (non-finite gradients or losses).
// The CLI maps this to its numerical-failure exit code.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AdamWConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with decoupled weight decay: the decay shrink is applied to the
// parameter before the Adam update each step. Frozen params are skipped
// entirely, even if someone filled in their grad buffers.
class AdamW {
 public:
  explicit AdamW(std::vector<Param*> params, AdamWConfig cfg = {});

  // One update over all params. Throws NumericalError naming the first
  // parameter with a non-finite gradient.
  void step();
  void zero_grad();

  long steps() const { return step_; }
  void set_steps(long s) { step_ = s; }
  const std::vector<Param*>& params() const { return params_; }
  std::vector<double>& moment1(int i) { return m_[i]; }
  std::vector<double>& moment2(int i) { return v_[i]; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Param*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

// Plain full-batch gradient descent step (used by the representation
// probes). Same frozen/finite rules as AdamW.
void sgd_step(const std::vector<Param*>& params, double lr);

}  // namespace cprobe
