#pragma once

#include <map>
#include <string>
#include <vector>

#include "densebody/core/rng.hpp"
#include "densebody/core/tensor.hpp"

namespace densebody::core {

// Named parameter tensors plus Adam state. std::map keeps iteration order
// deterministic, which the reproducibility guarantees rely on.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor m;  // Adam first moment (lazy, sized on first step)
    Tensor v;  // Adam second moment
    bool trainable = true;
  };

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;

  Tensor& create(const std::string& name, Tensor init, bool trainable = true);

  // Xavier-uniform init for a [fan_in, fan_out] matrix.
  Tensor& create_xavier(const std::string& name, int64_t fan_in, int64_t fan_out,
                        Rng& rng, bool trainable = true);
  Tensor& create_normal(const std::string& name, std::vector<int64_t> shape,
                        Scalar stddev, Rng& rng, bool trainable = true);
  Tensor& create_zeros(const std::string& name, std::vector<int64_t> shape,
                       bool trainable = true);
  Tensor& create_const(const std::string& name, std::vector<int64_t> shape,
                       Scalar value, bool trainable = true);

  std::map<std::string, Entry>& entries() { return params_; }
  const std::map<std::string, Entry>& entries() const { return params_; }

  void set_trainable(const std::string& prefix, bool trainable);
  int64_t total_size() const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Entry> params_;
};

struct AdamConfig {
  Scalar lr = 3e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

// One Adam update over all trainable entries. `grads` maps name -> gradient;
// missing entries are treated as zero gradient (still counts for bias
// correction). `lr_scale` implements the cosine schedule.
void adam_step(ParamStore& ps, const std::map<std::string, Tensor>& grads,
               const AdamConfig& cfg, int64_t step_index, Scalar lr_scale);

// Cosine decay multiplier in [0, 1] for step t of total.
Scalar cosine_decay(int64_t t, int64_t total);

}  // namespace densebody::core
