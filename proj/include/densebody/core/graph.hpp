#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "densebody/core/params.hpp"
#include "densebody/core/tensor.hpp"

namespace densebody::core {

// Define-by-run reverse-mode autodiff over rank-2 tensors. A Graph is built
// per forward pass and discarded afterwards; parameters live in a ParamStore
// and enter the graph as leaves. With record=false only forward values are
// computed (inference mode).
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  int leaf(Tensor t, bool needs_grad = false);
  int constant(Tensor t) { return leaf(std::move(t), false); }
  // Leaf bound to a named parameter; grads are exported back by name.
  int param(ParamStore& ps, const std::string& name);

  const Tensor& val(int id) const { return nodes_[size_t(id)].val; }
  const Tensor& grad(int id) const;
  int64_t num_nodes() const { return int64_t(nodes_.size()); }

  // Runs the tape backwards from a scalar root (seeds d(root)=1).
  void backward(int root);

  // Adds scale * grad of every bound parameter into `out[name]`.
  void export_param_grads(std::map<std::string, Tensor>& out, Scalar scale = 1.0) const;

  // ---- ops -------------------------------------------------------------
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, Scalar s);
  int add_rowvec(int a, int rowvec);            // [m,n] + [1,n]
  int add_colbroadcast_const(int a, Tensor row); // [m,n] + const [1,n]
  int add_const(int a, Tensor c);               // same shape constant
  int mul_rowmask_const(int a, Tensor rowmask); // row i scaled by rowmask[i]
  int matmul(int a, int b, bool ta = false, bool tb = false);
  int gelu(int a);
  int tanh_op(int a);
  int layernorm(int x, int gamma, int beta, Scalar eps = 1e-5);
  int softmax_rows(int x);
  int concat_rows(const std::vector<int>& ids);
  int slice_rows(int a, int64_t lo, int64_t len);
  int concat_cols(const std::vector<int>& ids);
  int slice_cols(int a, int64_t lo, int64_t len);
  int gather_rows(int a, std::vector<int64_t> idx);
  int scatter_add_rows(int a, std::vector<int64_t> idx, int64_t out_rows);
  int sum_all(int a);
  int mean_all(int a);
  // Mean smooth-L1 against a constant target; optional per-element weights.
  int smooth_l1(int pred, Tensor target, Scalar beta, Tensor weights = Tensor());
  int mse(int pred, Tensor target);

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    bool grad_alloc = false;
  };

  int new_node(Tensor val, bool needs_grad);
  Tensor& grad_buf(int id);
  void tape_push(std::function<void(Graph&)> f) { tape_.push_back(std::move(f)); }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::function<void(Graph&)>> tape_;
  std::vector<std::pair<std::string, int>> param_ids_;
  std::map<std::string, int> param_lookup_;
};

}  // namespace densebody::core
