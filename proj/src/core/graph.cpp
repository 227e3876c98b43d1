#include "densebody/core/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "densebody/core/kernels.hpp"

namespace densebody::core {

namespace {
void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

int Graph::new_node(Tensor val, bool needs_grad) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad && record_;
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

int Graph::leaf(Tensor t, bool needs_grad) { return new_node(std::move(t), needs_grad); }

int Graph::param(ParamStore& ps, const std::string& name) {
  auto it = param_lookup_.find(name);
  if (it != param_lookup_.end()) return it->second;
  int id = new_node(ps.at(name).value, true);
  param_lookup_[name] = id;
  param_ids_.emplace_back(name, id);
  return id;
}

Tensor& Graph::grad_buf(int id) {
  Node& n = nodes_[size_t(id)];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.val.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(int id) const {
  const Node& n = nodes_[size_t(id)];
  check(n.grad_alloc, "gradient was never populated; call backward first");
  return n.grad;
}

void Graph::backward(int root) {
  check(record_, "backward on a non-recording graph");
  check(nodes_[size_t(root)].val.numel() == 1, "backward root must be scalar");
  grad_buf(root).v[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)(*this);
}

void Graph::export_param_grads(std::map<std::string, Tensor>& out, Scalar scale) const {
  for (const auto& [name, id] : param_ids_) {
    const Node& n = nodes_[size_t(id)];
    if (!n.grad_alloc) continue;
    auto it = out.find(name);
    if (it == out.end()) {
      Tensor t(n.val.shape);
      for (size_t i = 0; i < t.v.size(); ++i) t.v[i] = scale * n.grad.v[i];
      out.emplace(name, std::move(t));
    } else {
      for (size_t i = 0; i < it->second.v.size(); ++i)
        it->second.v[i] += scale * n.grad.v[i];
    }
  }
}

// ---------------------------------------------------------------------------

int Graph::add(int a, int b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.same_shape(tb), "add: shape mismatch");
  Tensor y = ta;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += tb.v[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, b, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      if (g.nodes_[a].needs_grad) {
        Tensor& ga = g.grad_buf(a);
        for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i];
      }
      if (g.nodes_[b].needs_grad) {
        Tensor& gb = g.grad_buf(b);
        for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += gy.v[i];
      }
    });
  return id;
}

int Graph::sub(int a, int b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.same_shape(tb), "sub: shape mismatch");
  Tensor y = ta;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] -= tb.v[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, b, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      if (g.nodes_[a].needs_grad) {
        Tensor& ga = g.grad_buf(a);
        for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i];
      }
      if (g.nodes_[b].needs_grad) {
        Tensor& gb = g.grad_buf(b);
        for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] -= gy.v[i];
      }
    });
  return id;
}

int Graph::mul(int a, int b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check(ta.same_shape(tb), "mul: shape mismatch");
  Tensor y = ta;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] *= tb.v[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, b, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      if (g.nodes_[a].needs_grad) {
        Tensor& ga = g.grad_buf(a);
        const Tensor& vb = g.val(b);
        for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i] * vb.v[i];
      }
      if (g.nodes_[b].needs_grad) {
        Tensor& gb = g.grad_buf(b);
        const Tensor& va = g.val(a);
        for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += gy.v[i] * va.v[i];
      }
    });
  return id;
}

int Graph::scale(int a, Scalar s) {
  Tensor y = val(a);
  for (auto& x : y.v) x *= s;
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id, s](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += s * gy.v[i];
    });
  return id;
}

int Graph::add_rowvec(int a, int rowvec) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(rowvec);
  check(tb.rows() == 1 && tb.cols() == ta.cols(), "add_rowvec: bad bias shape");
  Tensor y = ta;
  const int64_t m = ta.rows(), n = ta.cols();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y.v[size_t(i * n + j)] += tb.v[size_t(j)];
  bool ng = nodes_[a].needs_grad || nodes_[rowvec].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, rowvec, id, m, n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      if (g.nodes_[a].needs_grad) {
        Tensor& ga = g.grad_buf(a);
        for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i];
      }
      if (g.nodes_[rowvec].needs_grad) {
        Tensor& gb = g.grad_buf(rowvec);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) gb.v[size_t(j)] += gy.v[size_t(i * n + j)];
      }
    });
  return id;
}

int Graph::add_colbroadcast_const(int a, Tensor row) {
  const Tensor& ta = val(a);
  check(row.rows() == 1 && row.cols() == ta.cols(), "add_colbroadcast_const: bad shape");
  Tensor y = ta;
  const int64_t m = ta.rows(), n = ta.cols();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y.v[size_t(i * n + j)] += row.v[size_t(j)];
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i];
    });
  return id;
}

int Graph::add_const(int a, Tensor c) {
  const Tensor& ta = val(a);
  check(ta.same_shape(c), "add_const: shape mismatch");
  Tensor y = ta;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += c.v[i];
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i];
    });
  return id;
}

int Graph::mul_rowmask_const(int a, Tensor rowmask) {
  const Tensor& ta = val(a);
  check(rowmask.numel() == ta.rows(), "mul_rowmask_const: mask length != rows");
  Tensor y = ta;
  const int64_t m = ta.rows(), n = ta.cols();
  for (int64_t i = 0; i < m; ++i) {
    const Scalar s = rowmask.v[size_t(i)];
    for (int64_t j = 0; j < n; ++j) y.v[size_t(i * n + j)] *= s;
  }
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id, rowmask = std::move(rowmask), m, n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (int64_t i = 0; i < m; ++i) {
        const Scalar s = rowmask.v[size_t(i)];
        for (int64_t j = 0; j < n; ++j)
          ga.v[size_t(i * n + j)] += s * gy.v[size_t(i * n + j)];
      }
    });
  return id;
}

int Graph::matmul(int a, int b, bool ta, bool tb) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  const int64_t m = ta ? A.cols() : A.rows();
  const int64_t k = ta ? A.rows() : A.cols();
  const int64_t kb = tb ? B.cols() : B.rows();
  const int64_t n = tb ? B.rows() : B.cols();
  check(k == kb, "matmul: inner dims disagree");
  Tensor C(m, n);
  core::gemm(A.data(), B.data(), C.data(), m, k, n, ta, tb, false);
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = new_node(std::move(C), ng);
  if (ng)
    tape_push([a, b, id, ta, tb, m, k, n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      const Tensor& A = g.val(a);
      const Tensor& B = g.val(b);
      if (g.nodes_[a].needs_grad) {
        Tensor& ga = g.grad_buf(a);
        if (!ta && !tb)  // dA += dC B^T
          core::gemm(gy.data(), B.data(), ga.data(), m, n, k, false, true, true);
        else if (!ta && tb)  // C = A B^T : dA += dC B
          core::gemm(gy.data(), B.data(), ga.data(), m, n, k, false, false, true);
        else if (ta && !tb)  // C = A^T B : dA += B dC^T   (A is k x m)
          core::gemm(B.data(), gy.data(), ga.data(), k, n, m, false, true, true);
        else  // C = A^T B^T : dA += B^T dC^T
          core::gemm(B.data(), gy.data(), ga.data(), k, n, m, true, true, true);
      }
      if (g.nodes_[b].needs_grad) {
        Tensor& gb = g.grad_buf(b);
        if (!ta && !tb)  // dB += A^T dC
          core::gemm(A.data(), gy.data(), gb.data(), k, m, n, true, false, true);
        else if (!ta && tb)  // C = A B^T : dB += dC^T A   (B is n x k)
          core::gemm(gy.data(), A.data(), gb.data(), n, m, k, true, false, true);
        else if (ta && !tb)  // C = A^T B : dB += A dC
          core::gemm(A.data(), gy.data(), gb.data(), k, m, n, false, false, true);
        else  // C = A^T B^T : dB += dC^T A^T
          core::gemm(gy.data(), A.data(), gb.data(), n, m, k, true, true, true);
      }
    });
  return id;
}

int Graph::gelu(int a) {
  const Tensor& ta = val(a);
  Tensor y(ta.shape);
  core::gelu(ta.data(), y.data(), ta.numel());
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      const Tensor& x = g.val(a);
      Tensor& ga = g.grad_buf(a);
      const Scalar c = 0.7978845608028654;
      for (size_t i = 0; i < ga.v.size(); ++i) {
        const Scalar xi = x.v[i];
        const Scalar u = c * (xi + 0.044715 * xi * xi * xi);
        const Scalar th = std::tanh(u);
        const Scalar du = c * (1.0 + 3.0 * 0.044715 * xi * xi);
        const Scalar d = 0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * du;
        ga.v[i] += gy.v[i] * d;
      }
    });
  return id;
}

int Graph::tanh_op(int a) {
  Tensor y = val(a);
  for (auto& x : y.v) x = std::tanh(x);
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      const Tensor& y = g.val(id);
      Tensor& ga = g.grad_buf(a);
      for (size_t i = 0; i < ga.v.size(); ++i)
        ga.v[i] += gy.v[i] * (1.0 - y.v[i] * y.v[i]);
    });
  return id;
}

int Graph::layernorm(int x, int gamma, int beta, Scalar eps) {
  const Tensor& tx = val(x);
  const Tensor& tg = val(gamma);
  const Tensor& tb = val(beta);
  const int64_t m = tx.rows(), n = tx.cols();
  check(tg.numel() == n && tb.numel() == n, "layernorm: bad gamma/beta");
  Tensor y(tx.shape);
  Tensor mean(m, 1), rstd(m, 1);
  core::layernorm_rows(tx.data(), tg.data(), tb.data(), y.data(), mean.data(),
                       rstd.data(), m, n, eps);
  bool ng = nodes_[x].needs_grad || nodes_[gamma].needs_grad || nodes_[beta].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([x, gamma, beta, id, m, n, mean = std::move(mean),
               rstd = std::move(rstd)](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      const Tensor& tx = g.val(x);
      const Tensor& tg = g.val(gamma);
      for (int64_t i = 0; i < m; ++i) {
        const Scalar mu = mean.v[size_t(i)];
        const Scalar rs = rstd.v[size_t(i)];
        const Scalar* xr = tx.data() + i * n;
        const Scalar* gr = gy.data() + i * n;
        Scalar sum_gg = 0.0, sum_ggx = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          const Scalar xh = (xr[j] - mu) * rs;
          const Scalar gg = gr[j] * tg.v[size_t(j)];
          sum_gg += gg;
          sum_ggx += gg * xh;
        }
        if (g.nodes_[x].needs_grad) {
          Tensor& gx = g.grad_buf(x);
          Scalar* gxr = gx.data() + i * n;
          for (int64_t j = 0; j < n; ++j) {
            const Scalar xh = (xr[j] - mu) * rs;
            const Scalar gg = gr[j] * tg.v[size_t(j)];
            gxr[j] += rs * (gg - sum_gg / Scalar(n) - xh * sum_ggx / Scalar(n));
          }
        }
        if (g.nodes_[gamma].needs_grad) {
          Tensor& gga = g.grad_buf(gamma);
          for (int64_t j = 0; j < n; ++j) {
            const Scalar xh = (xr[j] - mu) * rs;
            gga.v[size_t(j)] += gr[j] * xh;
          }
        }
        if (g.nodes_[beta].needs_grad) {
          Tensor& gb = g.grad_buf(beta);
          for (int64_t j = 0; j < n; ++j) gb.v[size_t(j)] += gr[j];
        }
      }
    });
  return id;
}

int Graph::softmax_rows(int x) {
  const Tensor& tx = val(x);
  Tensor y(tx.shape);
  core::softmax_rows(tx.data(), y.data(), tx.rows(), tx.cols());
  bool ng = nodes_[x].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([x, id](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      const Tensor& y = g.val(id);
      Tensor& gx = g.grad_buf(x);
      const int64_t m = y.rows(), n = y.cols();
      for (int64_t i = 0; i < m; ++i) {
        const Scalar* yr = y.data() + i * n;
        const Scalar* gr = gy.data() + i * n;
        Scalar dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
        Scalar* gxr = gx.data() + i * n;
        for (int64_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  return id;
}

int Graph::concat_rows(const std::vector<int>& ids) {
  check(!ids.empty(), "concat_rows: empty");
  const int64_t n = val(ids[0]).cols();
  int64_t m = 0;
  bool ng = false;
  for (int a : ids) {
    check(val(a).cols() == n, "concat_rows: col mismatch");
    m += val(a).rows();
    ng = ng || nodes_[a].needs_grad;
  }
  Tensor y(m, n);
  int64_t r = 0;
  for (int a : ids) {
    const Tensor& t = val(a);
    std::copy(t.v.begin(), t.v.end(), y.v.begin() + r * n);
    r += t.rows();
  }
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([ids, id, n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      int64_t r = 0;
      for (int a : ids) {
        const int64_t ra = g.val(a).rows();
        if (g.nodes_[a].needs_grad) {
          Tensor& ga = g.grad_buf(a);
          for (int64_t i = 0; i < ra * n; ++i) ga.v[size_t(i)] += gy.v[size_t(r * n + i)];
        }
        r += ra;
      }
    });
  return id;
}

int Graph::slice_rows(int a, int64_t lo, int64_t len) {
  const Tensor& ta = val(a);
  const int64_t n = ta.cols();
  check(lo >= 0 && lo + len <= ta.rows(), "slice_rows: out of range");
  Tensor y(len, n);
  std::copy(ta.v.begin() + lo * n, ta.v.begin() + (lo + len) * n, y.v.begin());
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id, lo, len, n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (int64_t i = 0; i < len * n; ++i) ga.v[size_t(lo * n + i)] += gy.v[size_t(i)];
    });
  return id;
}

int Graph::concat_cols(const std::vector<int>& ids) {
  check(!ids.empty(), "concat_cols: empty");
  const int64_t m = val(ids[0]).rows();
  int64_t n = 0;
  bool ng = false;
  for (int a : ids) {
    check(val(a).rows() == m, "concat_cols: row mismatch");
    n += val(a).cols();
    ng = ng || nodes_[a].needs_grad;
  }
  Tensor y(m, n);
  int64_t c = 0;
  for (int a : ids) {
    const Tensor& t = val(a);
    const int64_t nc = t.cols();
    for (int64_t i = 0; i < m; ++i)
      std::copy(t.v.begin() + i * nc, t.v.begin() + (i + 1) * nc,
                y.v.begin() + i * n + c);
    c += nc;
  }
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([ids, id, m, n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      int64_t c = 0;
      for (int a : ids) {
        const int64_t nc = g.val(a).cols();
        if (g.nodes_[a].needs_grad) {
          Tensor& ga = g.grad_buf(a);
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < nc; ++j)
              ga.v[size_t(i * nc + j)] += gy.v[size_t(i * n + c + j)];
        }
        c += nc;
      }
    });
  return id;
}

int Graph::slice_cols(int a, int64_t lo, int64_t len) {
  const Tensor& ta = val(a);
  const int64_t m = ta.rows(), n = ta.cols();
  check(lo >= 0 && lo + len <= n, "slice_cols: out of range");
  Tensor y(m, len);
  for (int64_t i = 0; i < m; ++i)
    std::copy(ta.v.begin() + i * n + lo, ta.v.begin() + i * n + lo + len,
              y.v.begin() + i * len);
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id, lo, len, m, n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < len; ++j)
          ga.v[size_t(i * n + lo + j)] += gy.v[size_t(i * len + j)];
    });
  return id;
}

int Graph::gather_rows(int a, std::vector<int64_t> idx) {
  const Tensor& ta = val(a);
  const int64_t n = ta.cols();
  Tensor y(int64_t(idx.size()), n);
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < ta.rows(), "gather_rows: index out of range");
    std::copy(ta.v.begin() + idx[i] * n, ta.v.begin() + (idx[i] + 1) * n,
              y.v.begin() + int64_t(i) * n);
  }
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id, idx = std::move(idx), n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t j = 0; j < n; ++j)
          ga.v[size_t(idx[i] * n + j)] += gy.v[i * size_t(n) + size_t(j)];
    });
  return id;
}

int Graph::scatter_add_rows(int a, std::vector<int64_t> idx, int64_t out_rows) {
  const Tensor& ta = val(a);
  const int64_t n = ta.cols();
  check(int64_t(idx.size()) == ta.rows(), "scatter_add_rows: index count != rows");
  Tensor y(out_rows, n);
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < out_rows, "scatter_add_rows: index out of range");
    for (int64_t j = 0; j < n; ++j)
      y.v[size_t(idx[i] * n + j)] += ta.v[i * size_t(n) + size_t(j)];
  }
  bool ng = nodes_[a].needs_grad;
  int id = new_node(std::move(y), ng);
  if (ng)
    tape_push([a, id, idx = std::move(idx), n](Graph& g) {
      const Tensor& gy = g.grad_buf(id);
      Tensor& ga = g.grad_buf(a);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t j = 0; j < n; ++j)
          ga.v[i * size_t(n) + size_t(j)] += gy.v[size_t(idx[i] * n + j)];
    });
  return id;
}

int Graph::sum_all(int a) {
  const Tensor& ta = val(a);
  Scalar s = 0.0;
  for (Scalar x : ta.v) s += x;
  bool ng = nodes_[a].needs_grad;
  int id = new_node(Tensor::scalar(s), ng);
  if (ng)
    tape_push([a, id](Graph& g) {
      const Scalar gy = g.grad_buf(id).v[0];
      Tensor& ga = g.grad_buf(a);
      for (auto& x : ga.v) x += gy;
    });
  return id;
}

int Graph::mean_all(int a) {
  const Tensor& ta = val(a);
  const Scalar inv = 1.0 / Scalar(ta.numel());
  return scale(sum_all(a), inv);
}

int Graph::smooth_l1(int pred, Tensor target, Scalar beta, Tensor weights) {
  const Tensor& tp = val(pred);
  check(tp.same_shape(target), "smooth_l1: shape mismatch");
  const bool weighted = !weights.v.empty();
  if (weighted) check(tp.same_shape(weights), "smooth_l1: weight shape mismatch");
  Scalar wsum = 0.0;
  if (weighted)
    for (Scalar w : weights.v) wsum += w;
  else
    wsum = Scalar(tp.numel());
  check(wsum > 0.0, "smooth_l1: zero total weight");
  Scalar loss = 0.0;
  for (size_t i = 0; i < tp.v.size(); ++i) {
    const Scalar d = tp.v[i] - target.v[i];
    const Scalar ad = std::abs(d);
    const Scalar l = ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
    loss += (weighted ? weights.v[i] : 1.0) * l;
  }
  loss /= wsum;
  bool ng = nodes_[pred].needs_grad;
  int id = new_node(Tensor::scalar(loss), ng);
  if (ng)
    tape_push([pred, id, target = std::move(target), beta,
               weights = std::move(weights), weighted, wsum](Graph& g) {
      const Scalar gy = g.grad_buf(id).v[0];
      const Tensor& tp = g.val(pred);
      Tensor& gp = g.grad_buf(pred);
      for (size_t i = 0; i < gp.v.size(); ++i) {
        const Scalar d = tp.v[i] - target.v[i];
        Scalar dd = d / beta;
        if (dd > 1.0) dd = 1.0;
        if (dd < -1.0) dd = -1.0;
        gp.v[i] += gy * (weighted ? weights.v[i] : 1.0) * dd / wsum;
      }
    });
  return id;
}

int Graph::mse(int pred, Tensor target) {
  const Tensor& tp = val(pred);
  check(tp.same_shape(target), "mse: shape mismatch");
  Scalar loss = 0.0;
  for (size_t i = 0; i < tp.v.size(); ++i) {
    const Scalar d = tp.v[i] - target.v[i];
    loss += d * d;
  }
  const Scalar inv = 1.0 / Scalar(tp.numel());
  loss *= inv;
  bool ng = nodes_[pred].needs_grad;
  int id = new_node(Tensor::scalar(loss), ng);
  if (ng)
    tape_push([pred, id, target = std::move(target), inv](Graph& g) {
      const Scalar gy = g.grad_buf(id).v[0];
      const Tensor& tp = g.val(pred);
      Tensor& gp = g.grad_buf(pred);
      for (size_t i = 0; i < gp.v.size(); ++i)
        gp.v[i] += gy * 2.0 * (tp.v[i] - target.v[i]) * inv;
    });
  return id;
}

}  // namespace densebody::core
