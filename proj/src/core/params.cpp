#include "densebody/core/params.hpp"

#include <cmath>
#include <stdexcept>

namespace densebody::core {

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

Tensor& ParamStore::create(const std::string& name, Tensor init, bool trainable) {
  if (has(name)) throw std::invalid_argument("parameter exists: " + name);
  Entry e;
  e.value = std::move(init);
  e.trainable = trainable;
  auto [it, ok] = params_.emplace(name, std::move(e));
  (void)ok;
  return it->second.value;
}

Tensor& ParamStore::create_xavier(const std::string& name, int64_t fan_in,
                                  int64_t fan_out, Rng& rng, bool trainable) {
  Tensor t(fan_in, fan_out);
  const Scalar bound = std::sqrt(6.0 / Scalar(fan_in + fan_out));
  for (auto& x : t.v) x = rng.uniform(-bound, bound);
  return create(name, std::move(t), trainable);
}

Tensor& ParamStore::create_normal(const std::string& name,
                                  std::vector<int64_t> shape, Scalar stddev,
                                  Rng& rng, bool trainable) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = rng.normal(0.0, stddev);
  return create(name, std::move(t), trainable);
}

Tensor& ParamStore::create_zeros(const std::string& name,
                                 std::vector<int64_t> shape, bool trainable) {
  return create(name, Tensor(std::move(shape)), trainable);
}

Tensor& ParamStore::create_const(const std::string& name,
                                 std::vector<int64_t> shape, Scalar value,
                                 bool trainable) {
  Tensor t(std::move(shape));
  std::fill(t.v.begin(), t.v.end(), value);
  return create(name, std::move(t), trainable);
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, e] : params_)
    if (name.rfind(prefix, 0) == 0) e.trainable = trainable;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, e] : params_) n += e.value.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, e] : params_) out.push_back(name);
  return out;
}

void adam_step(ParamStore& ps, const std::map<std::string, Tensor>& grads,
               const AdamConfig& cfg, int64_t step_index, Scalar lr_scale) {
  const Scalar bc1 = 1.0 - std::pow(cfg.beta1, Scalar(step_index + 1));
  const Scalar bc2 = 1.0 - std::pow(cfg.beta2, Scalar(step_index + 1));
  const Scalar lr = cfg.lr * lr_scale;
  for (auto& [name, e] : ps.entries()) {
    if (!e.trainable) continue;
    auto git = grads.find(name);
    const size_t n = e.value.v.size();
    if (e.m.v.size() != n) {
      e.m = Tensor(e.value.shape);
      e.v = Tensor(e.value.shape);
    }
    for (size_t i = 0; i < n; ++i) {
      const Scalar g = git == grads.end() ? 0.0 : git->second.v[i];
      e.m.v[i] = cfg.beta1 * e.m.v[i] + (1.0 - cfg.beta1) * g;
      e.v.v[i] = cfg.beta2 * e.v.v[i] + (1.0 - cfg.beta2) * g * g;
      const Scalar mhat = e.m.v[i] / bc1;
      const Scalar vhat = e.v.v[i] / bc2;
      e.value.v[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Scalar cosine_decay(int64_t t, int64_t total) {
  if (total <= 1) return 1.0;
  const Scalar x = Scalar(t) / Scalar(total);
  return 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

}  // namespace densebody::core
