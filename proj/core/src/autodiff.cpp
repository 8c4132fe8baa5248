#include "automoe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "automoe/errors.hpp"

namespace automoe {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, {}, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, recording_, {}, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::external(Tensor value, GradSink sink) {
  if (!recording_) return constant(std::move(value));
  BackwardFn fn = [sink = std::move(sink)](Tape& t, int self) { sink(t.grad(self)); };
  nodes_.push_back(Node{std::move(value), Tensor{}, true, {}, std::move(fn)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  bool needs = false;
  if (recording_) {
    for (int i : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(i)).needs_grad;
  }
  if (!needs) {
    inputs.clear();
    backward = nullptr;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, std::move(inputs), std::move(backward)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.shape().empty()) n.grad = Tensor(n.value.shape(), Real(0));
  return n.grad;
}

void Tape::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(n), nodes_.end());
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw DimensionError("backward: loss belongs to a different tape");
  if (value(loss).size() != 1) throw DimensionError("backward: loss must be a scalar, got " + shape_str(value(loss).shape()));
  grad(loss)[0] += Real(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || !n.backward || n.grad.shape().empty()) continue;
    n.backward(*this, id);
  }
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) throw DimensionError(std::string(op) + ": operands on different tapes");
  return *a.tape;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

void add_into(Tensor& dst, const Tensor& src) {
  Real* d = dst.data();
  const Real* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  kernels::gemm(A.data(), false, B.data(), false, C.data(), m, k, n, false);
  detail::add_matmul_flops(2ULL * m * k * n);
  return t.record(std::move(C), {a.id, b.id}, [a = a.id, b = b.id, m, k, n](Tape& t, int self) {
    const Tensor& dC = t.grad(self);
    if (t.needs_grad(a)) kernels::gemm(dC.data(), false, t.value(b).data(), true, t.grad(a).data(), m, n, k, true);
    if (t.needs_grad(b)) kernels::gemm(t.value(a).data(), true, dC.data(), false, t.grad(b).data(), k, m, n, true);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul_nt");
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_rank2(A, "matmul_nt");
  require_rank2(B, "matmul_nt");
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ: " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()) + "^T");
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C = Tensor::matrix(m, n);
  kernels::gemm(A.data(), false, B.data(), true, C.data(), m, k, n, false);
  detail::add_matmul_flops(2ULL * m * k * n);
  return t.record(std::move(C), {a.id, b.id}, [a = a.id, b = b.id, m, k, n](Tape& t, int self) {
    const Tensor& dC = t.grad(self);
    if (t.needs_grad(a)) kernels::gemm(dC.data(), false, t.value(b).data(), false, t.grad(a).data(), m, n, k, true);
    if (t.needs_grad(b)) kernels::gemm(dC.data(), true, t.value(a).data(), false, t.grad(b).data(), n, m, k, true);
  });
}

Var linear(Var x, Var w, const Var* bias) {
  Var y = matmul_nt(x, w);
  return bias ? add_row_vector(y, *bias) : y;
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (A.shape() != B.shape()) {
    throw DimensionError("add: shapes differ: " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  Tensor C = A;
  add_into(C, B);
  return t.record(std::move(C), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Tensor& dC = t.grad(self);
    if (t.needs_grad(a)) add_into(t.grad(a), dC);
    if (t.needs_grad(b)) add_into(t.grad(b), dC);
  });
}

Var add_row_vector(Var a, Var v) {
  Tape& t = same_tape(a, v, "add_row_vector");
  const Tensor& A = t.value(a);
  const Tensor& V = t.value(v);
  require_rank2(A, "add_row_vector");
  if (V.size() != A.cols()) {
    throw DimensionError("add_row_vector: " + shape_str(V.shape()) + " does not match columns of " + shape_str(A.shape()));
  }
  Tensor C = A;
  const std::size_t m = A.rows(), n = A.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) C.data()[i * n + j] += V[j];
  }
  return t.record(std::move(C), {a.id, v.id}, [a = a.id, v = v.id, m, n](Tape& t, int self) {
    const Tensor& dC = t.grad(self);
    if (t.needs_grad(a)) add_into(t.grad(a), dC);
    if (t.needs_grad(v)) {
      Tensor& dv = t.grad(v);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) dv[j] += dC.data()[i * n + j];
      }
    }
  });
}

Var scale(Var a, Real s) {
  Tape& t = *a.tape;
  Tensor C = t.value(a);
  for (auto& x : C.values()) x *= s;
  return t.record(std::move(C), {a.id}, [a = a.id, s](Tape& t, int self) {
    const Tensor& dC = t.grad(self);
    Tensor& da = t.grad(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * dC[i];
  });
}

Var relu(Var x) {
  Tape& t = *x.tape;
  Tensor C = t.value(x);
  for (auto& v : C.values()) v = v > Real(0) ? v : Real(0);
  return t.record(std::move(C), {x.id}, [x = x.id](Tape& t, int self) {
    const Tensor& dC = t.grad(self);
    const Tensor& X = t.value(x);
    Tensor& dx = t.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (X[i] > Real(0)) dx[i] += dC[i];
    }
  });
}

Var softmax(Var x, int axis) {
  Tape& t = *x.tape;
  const Tensor& X = t.value(x);
  if (axis < 0 || axis >= static_cast<int>(X.rank())) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(X.shape()));
  }
  // Rank-1 tensors and axis 1 of a matrix normalize contiguous rows.
  const bool along_rows = X.rank() == 1 || axis == 1;
  const std::size_t rows = X.rows(), cols = X.cols();
  const std::size_t groups = along_rows ? rows : cols;
  const std::size_t len = along_rows ? cols : rows;
  const std::size_t stride = along_rows ? 1 : cols;
  auto base = [=](std::size_t g) { return along_rows ? g * cols : g; };

  Tensor Y = X;
  for (std::size_t g = 0; g < groups; ++g) {
    Real* y = Y.data() + base(g);
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, y[i * stride]);
    Real z = 0;
    for (std::size_t i = 0; i < len; ++i) {
      y[i * stride] = std::exp(y[i * stride] - mx);
      z += y[i * stride];
    }
    for (std::size_t i = 0; i < len; ++i) y[i * stride] /= z;
  }
  return t.record(std::move(Y), {x.id}, [x = x.id, groups, len, stride, base](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    const Tensor& Y = t.value(self);
    Tensor& dx = t.grad(x);
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t b = base(g);
      Real dot = 0;
      for (std::size_t i = 0; i < len; ++i) dot += dY[b + i * stride] * Y[b + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        dx[b + i * stride] += Y[b + i * stride] * (dY[b + i * stride] - dot);
      }
    }
  });
}

Var layernorm(Var x, Var gain, Var bias, Real eps) {
  Tape& t = same_tape(x, gain, "layernorm");
  same_tape(x, bias, "layernorm");
  const Tensor& X = t.value(x);
  const Tensor& G = t.value(gain);
  const Tensor& B = t.value(bias);
  require_rank2(X, "layernorm");
  const std::size_t m = X.rows(), n = X.cols();
  if (G.size() != n || B.size() != n) {
    throw DimensionError("layernorm: gain/bias " + shape_str(G.shape()) + "/" + shape_str(B.shape()) +
                         " do not match " + shape_str(X.shape()));
  }
  Tensor Y = Tensor::matrix(m, n);
  Tensor xhat = Tensor::matrix(m, n);
  std::vector<Real> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* xi = X.data() + i * n;
    Real mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<Real>(n);
    rstd[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const Real h = (xi[j] - mean) * rstd[i];
      xhat.data()[i * n + j] = h;
      Y.data()[i * n + j] = h * G[j] + B[j];
    }
  }
  return t.record(std::move(Y), {x.id, gain.id, bias.id},
                  [x = x.id, g = gain.id, b = bias.id, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Tape& t, int self) {
                    const Tensor& dY = t.grad(self);
                    const Tensor& G = t.value(g);
                    if (t.needs_grad(g)) {
                      Tensor& dg = t.grad(g);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) dg[j] += dY.data()[i * n + j] * xhat.data()[i * n + j];
                      }
                    }
                    if (t.needs_grad(b)) {
                      Tensor& db = t.grad(b);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) db[j] += dY.data()[i * n + j];
                      }
                    }
                    if (t.needs_grad(x)) {
                      Tensor& dx = t.grad(x);
                      std::vector<Real> dh(n);
                      for (std::size_t i = 0; i < m; ++i) {
                        Real mean_dh = 0, mean_dh_h = 0;
                        for (std::size_t j = 0; j < n; ++j) {
                          dh[j] = dY.data()[i * n + j] * G[j];
                          mean_dh += dh[j];
                          mean_dh_h += dh[j] * xhat.data()[i * n + j];
                        }
                        mean_dh /= static_cast<Real>(n);
                        mean_dh_h /= static_cast<Real>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          dx.data()[i * n + j] += rstd[i] * (dh[j] - mean_dh - xhat.data()[i * n + j] * mean_dh_h);
                        }
                      }
                    }
                  });
}

Var embed(Var table, std::span<const int> ids) {
  Tape& t = *table.tape;
  const Tensor& W = t.value(table);
  require_rank2(W, "embed");
  const std::size_t V = W.rows(), d = W.cols();
  Tensor Y = Tensor::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw DimensionError("embed: id " + std::to_string(ids[i]) + " out of range for table " + shape_str(W.shape()));
    }
    std::copy_n(W.data() + static_cast<std::size_t>(ids[i]) * d, d, Y.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return t.record(std::move(Y), {table.id}, [w = table.id, idv = std::move(idv), d](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    Tensor& dW = t.grad(w);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      Real* row = dW.data() + static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += dY.data()[i * d + j];
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, Real label_smoothing, int ignore_index) {
  Tape& t = *logits.tape;
  const Tensor& L = t.value(logits);
  require_rank2(L, "cross_entropy");
  const std::size_t m = L.rows(), V = L.cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + shape_str(L.shape()));
  }
  if (!(label_smoothing >= Real(0) && label_smoothing < Real(1))) {
    throw DimensionError("cross_entropy: label smoothing must lie in [0, 1)");
  }
  Tensor P = Tensor::matrix(m, V);
  std::size_t count = 0;
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == ignore_index) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V) {
      throw DimensionError("cross_entropy: target id " + std::to_string(targets[i]) + " >= vocab size " +
                           std::to_string(V));
    }
    const Real* li = L.data() + i * V;
    Real* pi = P.data() + i * V;
    Real mx = *std::max_element(li, li + V);
    Real z = 0;
    for (std::size_t j = 0; j < V; ++j) {
      pi[j] = std::exp(li[j] - mx);
      z += pi[j];
    }
    const Real logz = std::log(z) + mx;
    Real mean_nll = 0;
    for (std::size_t j = 0; j < V; ++j) {
      pi[j] /= z;
      mean_nll += logz - li[j];
    }
    mean_nll /= static_cast<Real>(V);
    const Real nll = logz - li[targets[i]];
    total += static_cast<double>((Real(1) - label_smoothing) * nll + label_smoothing * mean_nll);
    ++count;
  }
  const Real loss = count ? static_cast<Real>(total / static_cast<double>(count)) : Real(0);
  std::vector<int> tv(targets.begin(), targets.end());
  return t.record(Tensor::scalar(loss), {logits.id},
                  [l = logits.id, tv = std::move(tv), P = std::move(P), count, V, label_smoothing, ignore_index](
                      Tape& t, int self) {
                    if (count == 0) return;
                    const Real g = t.grad(self)[0] / static_cast<Real>(count);
                    Tensor& dL = t.grad(l);
                    const Real uniform = label_smoothing / static_cast<Real>(V);
                    for (std::size_t i = 0; i < tv.size(); ++i) {
                      if (tv[i] == ignore_index) continue;
                      for (std::size_t j = 0; j < V; ++j) {
                        Real q = uniform + (static_cast<int>(j) == tv[i] ? Real(1) - label_smoothing : Real(0));
                        dL.data()[i * V + j] += g * (P.data()[i * V + j] - q);
                      }
                    }
                  });
}

Var sum(Var x) {
  Tape& t = *x.tape;
  Real s = 0;
  for (Real v : t.value(x).values()) s += v;
  return t.record(Tensor::scalar(s), {x.id}, [x = x.id](Tape& t, int self) {
    const Real g = t.grad(self)[0];
    for (auto& v : t.grad(x).values()) v += g;
  });
}

Var mean_of(std::span<const Var> xs) {
  if (xs.empty()) throw DimensionError("mean_of: empty input");
  Tape& t = *xs[0].tape;
  Tensor Y = t.value(xs[0]);
  std::vector<int> ids{xs[0].id};
  for (std::size_t i = 1; i < xs.size(); ++i) {
    same_tape(xs[0], xs[i], "mean_of");
    const Tensor& X = t.value(xs[i]);
    if (X.shape() != Y.shape()) throw DimensionError("mean_of: shapes differ");
    add_into(Y, X);
    ids.push_back(xs[i].id);
  }
  const Real inv = Real(1) / static_cast<Real>(xs.size());
  if (xs.size() > 1) {
    for (auto& v : Y.values()) v *= inv;
  }
  return t.record(std::move(Y), ids, [ids, inv](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    for (int id : ids) {
      if (!t.needs_grad(id)) continue;
      Tensor& dx = t.grad(id);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += inv * dY[i];
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  Tape& t = *x.tape;
  const Tensor& X = t.value(x);
  require_rank2(X, "gather_rows");
  const std::size_t n = X.cols();
  Tensor Y = Tensor::matrix(rows.size(), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows()) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(X.data() + rows[i] * n, n, Y.data() + i * n);
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return t.record(std::move(Y), {x.id}, [x = x.id, rv = std::move(rv), n](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    Tensor& dx = t.grad(x);
    for (std::size_t i = 0; i < rv.size(); ++i) {
      for (std::size_t j = 0; j < n; ++j) dx.data()[rv[i] * n + j] += dY.data()[i * n + j];
    }
  });
}

Var scatter_rows(Var x, std::span<const std::size_t> rows, std::size_t out_rows) {
  Tape& t = *x.tape;
  const Tensor& X = t.value(x);
  require_rank2(X, "scatter_rows");
  if (rows.size() != X.rows()) throw DimensionError("scatter_rows: index count does not match rows");
  const std::size_t n = X.cols();
  Tensor Y = Tensor::matrix(out_rows, n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= out_rows) throw DimensionError("scatter_rows: row index out of range");
    std::copy_n(X.data() + i * n, n, Y.data() + rows[i] * n);
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return t.record(std::move(Y), {x.id}, [x = x.id, rv = std::move(rv), n](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    Tensor& dx = t.grad(x);
    for (std::size_t i = 0; i < rv.size(); ++i) {
      for (std::size_t j = 0; j < n; ++j) dx.data()[i * n + j] += dY.data()[rv[i] * n + j];
    }
  });
}

Var scale_rows(Var x, Var s) {
  Tape& t = same_tape(x, s, "scale_rows");
  const Tensor& X = t.value(x);
  const Tensor& S = t.value(s);
  require_rank2(X, "scale_rows");
  const std::size_t m = X.rows(), n = X.cols();
  if (S.size() != m) throw DimensionError("scale_rows: " + shape_str(S.shape()) + " vs " + shape_str(X.shape()));
  Tensor Y = X;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) Y.data()[i * n + j] *= S[i];
  }
  return t.record(std::move(Y), {x.id, s.id}, [x = x.id, s = s.id, m, n](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    const Tensor& X = t.value(x);
    const Tensor& S = t.value(s);
    if (t.needs_grad(x)) {
      Tensor& dx = t.grad(x);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) dx.data()[i * n + j] += S[i] * dY.data()[i * n + j];
      }
    }
    if (t.needs_grad(s)) {
      Tensor& ds = t.grad(s);
      for (std::size_t i = 0; i < m; ++i) {
        Real acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += X.data()[i * n + j] * dY.data()[i * n + j];
        ds[i] += acc;
      }
    }
  });
}

Var pick(Var x, std::span<const std::size_t> cols) {
  Tape& t = *x.tape;
  const Tensor& X = t.value(x);
  require_rank2(X, "pick");
  const std::size_t m = X.rows(), n = X.cols();
  if (cols.size() != m) throw DimensionError("pick: one column index per row required");
  Tensor Y = Tensor::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= n) throw DimensionError("pick: column index out of range");
    Y[i] = X.data()[i * n + cols[i]];
  }
  std::vector<std::size_t> cv(cols.begin(), cols.end());
  return t.record(std::move(Y), {x.id}, [x = x.id, cv = std::move(cv), n](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    Tensor& dx = t.grad(x);
    for (std::size_t i = 0; i < cv.size(); ++i) dx.data()[i * n + cv[i]] += dY[i];
  });
}

Var concat_rows(Var a, Var b) {
  Tape& t = same_tape(a, b, "concat_rows");
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_rank2(A, "concat_rows");
  require_rank2(B, "concat_rows");
  if (A.cols() != B.cols()) throw DimensionError("concat_rows: column counts differ");
  Tensor Y = Tensor::matrix(A.rows() + B.rows(), A.cols());
  std::copy_n(A.data(), A.size(), Y.data());
  std::copy_n(B.data(), B.size(), Y.data() + A.size());
  const std::size_t na = A.size();
  return t.record(std::move(Y), {a.id, b.id}, [a = a.id, b = b.id, na](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dY[i];
    }
    if (t.needs_grad(b)) {
      Tensor& db = t.grad(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dY[na + i];
    }
  });
}

Var dropout(Var x, Real p, Rng& rng) {
  if (p <= Real(0)) return x;
  if (p >= Real(1)) throw DimensionError("dropout: probability must be < 1");
  Tape& t = *x.tape;
  Tensor Y = t.value(x);
  std::vector<Real> mask(Y.size());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const Real inv = Real(1) / (Real(1) - p);
  for (std::size_t i = 0; i < Y.size(); ++i) {
    mask[i] = keep(rng) ? inv : Real(0);
    Y[i] *= mask[i];
  }
  return t.record(std::move(Y), {x.id}, [x = x.id, mask = std::move(mask)](Tape& t, int self) {
    const Tensor& dY = t.grad(self);
    Tensor& dx = t.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += mask[i] * dY[i];
  });
}

Var attention(Var q, Var k, Var v, std::size_t heads, std::span<const AttentionSegment> segments, bool causal) {
  Tape& t = same_tape(q, k, "attention");
  same_tape(q, v, "attention");
  const Tensor& Q = t.value(q);
  const Tensor& K = t.value(k);
  const Tensor& V = t.value(v);
  require_rank2(Q, "attention");
  require_rank2(K, "attention");
  require_rank2(V, "attention");
  const std::size_t D = Q.cols();
  if (K.cols() != D || V.cols() != D || K.rows() != V.rows()) {
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_str(Q.shape()) + ", " + shape_str(K.shape()) +
                         ", " + shape_str(V.shape()));
  }
  if (heads == 0 || D % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(D));
  }
  const std::size_t hd = D / heads;
  const Real scale_factor = Real(1) / std::sqrt(static_cast<Real>(hd));

  std::vector<AttentionSegment> segs(segments.begin(), segments.end());
  for (const auto& s : segs) {
    if (s.q_offset + s.q_len > Q.rows() || s.k_offset + s.k_len > K.rows()) {
      throw DimensionError("attention: segment exceeds q/k rows");
    }
    if (causal && s.k_len < s.q_len) throw DimensionError("attention: causal segment needs k_len >= q_len");
  }

  Tensor O = Tensor::matrix(Q.rows(), D);
  std::vector<Real> probs;  // per (segment, head, query): allowed-key probabilities
  std::uint64_t pairs = 0;
  std::vector<Real> scores;
  for (const auto& s : segs) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const std::size_t nk = causal ? i + (s.k_len - s.q_len) + 1 : s.k_len;
        const Real* qi = Q.data() + (s.q_offset + i) * D + c0;
        scores.assign(nk, Real(0));
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
          const Real* kj = K.data() + (s.k_offset + j) * D + c0;
          Real dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * scale_factor;
          mx = std::max(mx, scores[j]);
        }
        Real z = 0;
        for (std::size_t j = 0; j < nk; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        Real* oi = O.data() + (s.q_offset + i) * D + c0;
        for (std::size_t j = 0; j < nk; ++j) {
          const Real p = scores[j] / z;
          probs.push_back(p);
          const Real* vj = V.data() + (s.k_offset + j) * D + c0;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += p * vj[c];
        }
        pairs += nk;
      }
    }
  }
  // Scores and context products: 2·hd FLOPs each per (head, query, key).
  detail::add_matmul_flops(4ULL * hd * pairs);

  return t.record(std::move(O), {q.id, k.id, v.id},
                  [q = q.id, k = k.id, v = v.id, segs = std::move(segs), probs = std::move(probs), heads, hd, D,
                   causal, scale_factor](Tape& t, int self) {
                    const Tensor& dO = t.grad(self);
                    const Tensor& Q = t.value(q);
                    const Tensor& K = t.value(k);
                    const Tensor& V = t.value(v);
                    Tensor* dQ = t.needs_grad(q) ? &t.grad(q) : nullptr;
                    Tensor* dK = t.needs_grad(k) ? &t.grad(k) : nullptr;
                    Tensor* dV = t.needs_grad(v) ? &t.grad(v) : nullptr;
                    std::vector<Real> dp;
                    std::size_t pos = 0;
                    for (const auto& s : segs) {
                      for (std::size_t h = 0; h < heads; ++h) {
                        const std::size_t c0 = h * hd;
                        for (std::size_t i = 0; i < s.q_len; ++i) {
                          const std::size_t nk = causal ? i + (s.k_len - s.q_len) + 1 : s.k_len;
                          const Real* p = probs.data() + pos;
                          pos += nk;
                          const std::size_t qi_row = s.q_offset + i;
                          const Real* doi = dO.data() + qi_row * D + c0;
                          dp.assign(nk, Real(0));
                          Real weighted = 0;
                          for (std::size_t j = 0; j < nk; ++j) {
                            const std::size_t kj_row = s.k_offset + j;
                            const Real* vj = V.data() + kj_row * D + c0;
                            Real acc = 0;
                            for (std::size_t c = 0; c < hd; ++c) acc += doi[c] * vj[c];
                            dp[j] = acc;
                            weighted += p[j] * acc;
                            if (dV) {
                              Real* dvj = dV->data() + kj_row * D + c0;
                              for (std::size_t c = 0; c < hd; ++c) dvj[c] += p[j] * doi[c];
                            }
                          }
                          const Real* qi = Q.data() + qi_row * D + c0;
                          Real* dqi = dQ ? dQ->data() + qi_row * D + c0 : nullptr;
                          for (std::size_t j = 0; j < nk; ++j) {
                            const Real ds = p[j] * (dp[j] - weighted) * scale_factor;
                            const std::size_t kj_row = s.k_offset + j;
                            const Real* kj = K.data() + kj_row * D + c0;
                            if (dqi) {
                              for (std::size_t c = 0; c < hd; ++c) dqi[c] += ds * kj[c];
                            }
                            if (dK) {
                              Real* dkj = dK->data() + kj_row * D + c0;
                              for (std::size_t c = 0; c < hd; ++c) dkj[c] += ds * qi[c];
                            }
                          }
                        }
                      }
                    }
                  });
}

Var load_balance(Var probs, std::span<const std::size_t> assignment) {
  Tape& t = *probs.tape;
  const Tensor& P = t.value(probs);
  require_rank2(P, "load_balance");
  const std::size_t m = P.rows(), e = P.cols();
  if (assignment.size() != m) throw DimensionError("load_balance: one assignment per token required");
  std::vector<Real> frac(e, Real(0));
  for (auto j : assignment) {
    if (j >= e) throw DimensionError("load_balance: expert index out of range");
    frac[j] += Real(1);
  }
  for (auto& f : frac) f /= static_cast<Real>(m);
  Real loss = 0;
  for (std::size_t j = 0; j < e; ++j) {
    Real mean_p = 0;
    for (std::size_t i = 0; i < m; ++i) mean_p += P.data()[i * e + j];
    mean_p /= static_cast<Real>(m);
    loss += frac[j] * mean_p;
  }
  loss *= static_cast<Real>(e);
  return t.record(Tensor::scalar(loss), {probs.id}, [p = probs.id, frac = std::move(frac), m, e](Tape& t, int self) {
    const Real g = t.grad(self)[0] * static_cast<Real>(e) / static_cast<Real>(m);
    Tensor& dP = t.grad(p);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < e; ++j) dP.data()[i * e + j] += g * frac[j];
    }
  });
}

}  // namespace automoe
