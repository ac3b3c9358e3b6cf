#include "zimm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace zimm::ad {

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different tapes");
  }
  return *a.tape();
}

// Iteration over the 1-d lines of a tensor along an axis.
struct Lines {
  std::size_t count, length, stride;
  std::size_t offset(std::size_t line) const { return stride == 1 ? line * length : line; }
};

Lines lines_of(const Shape& s, std::size_t axis, const char* op) {
  if (s.size() == 1 && axis == 0) return {1, s[0], 1};
  if (s.size() == 2 && axis == 1) return {s[0], s[1], 1};
  if (s.size() == 2 && axis == 0) return {s[1], s[0], s[1]};
  throw ShapeError(std::string(op) + ": invalid axis " + std::to_string(axis) + " for shape " +
                   shape_string(s));
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Tape::value(std::size_t id) const { return node_value(nodes_[id]); }

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const ParamStore& store, const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var(this, it->second);
  auto entry = store.entries().find(name);
  if (entry == store.entries().end()) throw std::out_of_range("unknown parameter: " + name);
  Node n;
  n.external = &entry->second.value;
  n.param = &entry->first;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op) {
  Node n;
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::invalid_argument(std::string(op) + ": foreign Var");
    n.inputs.push_back(v.id());
  }
  if (recording_) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) {
  if (!recording_) throw std::logic_error("backward on a tape that does not record gradients");
  if (consumed_) throw std::logic_error("backward called twice on one tape");
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_string(loss.value().shape()));
  }
  consumed_ = true;
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id()] = Tensor(loss.value().shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (grads_[i].empty() || !nodes_[i].backward) continue;
    BackwardContext ctx(*this, i);
    nodes_[i].backward(ctx);
  }
  Gradients out;
  for (const auto& [name, id] : param_nodes_) {
    if (grads_[id].empty()) continue;
    out.emplace(name, std::move(grads_[id]));
  }
  grads_.clear();
  return out;
}

Gradients Tape::backward(Var loss, const ParamStore& store) {
  Gradients reached = backward(loss);
  Gradients out = zero_gradients(store);
  for (auto& [name, g] : reached) out[name] = std::move(g);
  return out;
}

const Tensor& BackwardContext::out() const { return tape_.value(node_); }
const Tensor& BackwardContext::gout() const { return tape_.grads_[node_]; }
const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_.value(tape_.nodes_[node_].inputs[i]);
}
Tensor& BackwardContext::grad(std::size_t i) {
  const std::size_t id = tape_.nodes_[node_].inputs[i];
  Tensor& g = tape_.grads_[id];
  if (g.empty()) g = Tensor(tape_.value(id).shape());
  return g;
}

// ---- matmul ---------------------------------------------------------------

namespace {

// Four partial sums so the compiler can keep several multiply-adds in flight.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

std::vector<double> transposed(const double* p, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = p[r * cols + c];
  return t;
}

// Below this many output columns the right operand is walked through its
// transpose, so every inner loop runs over k contiguous entries.
constexpr std::size_t kNarrow = 8;

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() == 0 || B.rank() == 0) shape_fail("matmul", A.shape(), B.shape());
  const std::size_t m = A.rank() == 2 ? A.shape()[0] : 1;
  const std::size_t k = A.rank() == 2 ? A.shape()[1] : A.shape()[0];
  const std::size_t kb = B.shape()[0];
  const std::size_t n = B.rank() == 2 ? B.shape()[1] : 1;
  if (k != kb) shape_fail("matmul", A.shape(), B.shape());
  Shape out_shape;
  if (A.rank() == 2) out_shape.push_back(m);
  if (B.rank() == 2) out_shape.push_back(n);
  Tensor C(out_shape);
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = C.data().data();
  if (n < kNarrow) {
    const std::vector<double> bt = n == 1 ? std::vector<double>(pb, pb + k) : transposed(pb, k, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pc[i * n + j] = dot(pa + i * k, bt.data() + j * k, k);
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = pc + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = pa[i * k + p];
        if (aip != 0.0) axpy(aip, pb + p * n, crow, n);
      }
    }
  }
  return tape.record(std::move(C), {a, b},
                     [m, k, n](BackwardContext& ctx) {
                       const double* g = ctx.gout().data().data();
                       const double* pa = ctx.input(0).data().data();
                       const double* pb = ctx.input(1).data().data();
                       double* ga = ctx.grad(0).data().data();
                       double* gb = ctx.grad(1).data().data();
                       if (n < kNarrow) {
                         const std::vector<double> bt =
                             n == 1 ? std::vector<double>(pb, pb + k) : transposed(pb, k, n);
                         std::vector<double> gbt(n * k, 0.0);
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) {
                             const double gij = g[i * n + j];
                             if (gij == 0.0) continue;
                             axpy(gij, bt.data() + j * k, ga + i * k, k);
                             axpy(gij, pa + i * k, gbt.data() + j * k, k);
                           }
                         }
                         for (std::size_t p = 0; p < k; ++p)
                           for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += gbt[j * k + p];
                         return;
                       }
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g + i * n;
                         for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += dot(grow, pb + p * n, n);
                       }
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = pa[i * k + p];
                           if (aip != 0.0) axpy(aip, g + i * n, gb + p * n, n);
                         }
                       }
                     },
                     "matmul");
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  Tensor out = a.value();
  out += b.value();
  return tape.record(std::move(out), {a, b},
                     [](BackwardContext& ctx) {
                       ctx.grad(0) += ctx.gout();
                       ctx.grad(1) += ctx.gout();
                     },
                     "add");
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b, "sub");
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return tape.record(std::move(out), {a, b},
                     [](BackwardContext& ctx) {
                       ctx.grad(0) += ctx.gout();
                       Tensor& gb = ctx.grad(1);
                       const Tensor& g = ctx.gout();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     },
                     "sub");
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return tape.record(std::move(out), {a, b},
                     [](BackwardContext& ctx) {
                       const Tensor& g = ctx.gout();
                       const Tensor& A = ctx.input(0);
                       const Tensor& B = ctx.input(1);
                       Tensor& ga = ctx.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
                       Tensor& gb = ctx.grad(1);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
                     },
                     "mul");
}

Var add_rows(Var m, Var v) {
  Tape& tape = same_tape(m, v, "add_rows");
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.shape()[1] != V.shape()[0]) {
    shape_fail("add_rows", M.shape(), V.shape());
  }
  Tensor out = M;
  const std::size_t rows = M.shape()[0], cols = M.shape()[1];
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += V[c];
  return tape.record(std::move(out), {m, v},
                     [rows, cols](BackwardContext& ctx) {
                       const Tensor& g = ctx.gout();
                       ctx.grad(0) += g;
                       Tensor& gv = ctx.grad(1);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) gv[c] += g.at(r, c);
                     },
                     "add_rows");
}

Var affine(Var x, double scale, double shift) {
  Tensor out = x.value();
  for (double& v : out.data()) v = scale * v + shift;
  return x.tape()->record(std::move(out), {x},
                          [scale](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
                          },
                          "affine");
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  return x.tape()->record(std::move(out), {x},
                          [](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            const Tensor& y = ctx.out();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gx[i] += g[i] * (1.0 - y[i] * y[i]);
                          },
                          "tanh");
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) {
    // branch keeps exp from overflowing for large |v|
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return x.tape()->record(std::move(out), {x},
                          [](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            const Tensor& y = ctx.out();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gx[i] += g[i] * y[i] * (1.0 - y[i]);
                          },
                          "sigmoid");
}

// ---- softmax family -------------------------------------------------------

Var softmax(Var x, std::size_t axis) {
  const Tensor& X = x.value();
  const Lines L = lines_of(X.shape(), axis, "softmax");
  Tensor out(X.shape());
  for (std::size_t l = 0; l < L.count; ++l) {
    const std::size_t off = L.offset(l);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < L.length; ++j) mx = std::max(mx, X[off + j * L.stride]);
    double total = 0.0;
    for (std::size_t j = 0; j < L.length; ++j) {
      const double e = std::exp(X[off + j * L.stride] - mx);
      out[off + j * L.stride] = e;
      total += e;
    }
    for (std::size_t j = 0; j < L.length; ++j) out[off + j * L.stride] /= total;
  }
  return x.tape()->record(std::move(out), {x},
                          [L](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            const Tensor& s = ctx.out();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t l = 0; l < L.count; ++l) {
                              const std::size_t off = L.offset(l);
                              double dot = 0.0;
                              for (std::size_t j = 0; j < L.length; ++j) {
                                const std::size_t i = off + j * L.stride;
                                dot += g[i] * s[i];
                              }
                              for (std::size_t j = 0; j < L.length; ++j) {
                                const std::size_t i = off + j * L.stride;
                                gx[i] += s[i] * (g[i] - dot);
                              }
                            }
                          },
                          "softmax");
}

Var log_softmax(Var x, std::size_t axis) {
  const Tensor& X = x.value();
  const Lines L = lines_of(X.shape(), axis, "log_softmax");
  Tensor out(X.shape());
  for (std::size_t l = 0; l < L.count; ++l) {
    const std::size_t off = L.offset(l);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < L.length; ++j) mx = std::max(mx, X[off + j * L.stride]);
    double total = 0.0;
    for (std::size_t j = 0; j < L.length; ++j) total += std::exp(X[off + j * L.stride] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < L.length; ++j)
      out[off + j * L.stride] = X[off + j * L.stride] - lse;
  }
  return x.tape()->record(std::move(out), {x},
                          [L](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            const Tensor& y = ctx.out();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t l = 0; l < L.count; ++l) {
                              const std::size_t off = L.offset(l);
                              double gsum = 0.0;
                              for (std::size_t j = 0; j < L.length; ++j)
                                gsum += g[off + j * L.stride];
                              for (std::size_t j = 0; j < L.length; ++j) {
                                const std::size_t i = off + j * L.stride;
                                gx[i] += g[i] - std::exp(y[i]) * gsum;
                              }
                            }
                          },
                          "log_softmax");
}

// ---- structural -----------------------------------------------------------

Var embedding_lookup(Var table, const std::vector<std::size_t>& ids) {
  const Tensor& T = table.value();
  if (T.rank() != 2) throw ShapeError("embedding_lookup: table must be a matrix, got " +
                                      shape_string(T.shape()));
  const std::size_t vocab = T.shape()[0], dim = T.shape()[1];
  Tensor out(Shape{ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[r]) +
                              " out of range for vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(T.data().data() + ids[r] * dim, dim, out.data().data() + r * dim);
  }
  return table.tape()->record(std::move(out), {table},
                              [ids, dim](BackwardContext& ctx) {
                                const Tensor& g = ctx.gout();
                                Tensor& gt = ctx.grad(0);
                                for (std::size_t r = 0; r < ids.size(); ++r)
                                  for (std::size_t c = 0; c < dim; ++c)
                                    gt[ids[r] * dim + c] += g[r * dim + c];
                              },
                              "embedding_lookup");
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape* tape = parts.front().tape();
  const Tensor& first = parts.front().value();
  const bool vectors = first.rank() <= 1;
  if (vectors) {
    if (axis != 0) throw ShapeError("concat: vectors only concatenate along axis 0");
    std::vector<std::size_t> offsets;
    std::vector<double> data;
    for (const Var& p : parts) {
      if (p.tape() != tape) throw std::invalid_argument("concat: operands on different tapes");
      if (p.value().rank() > 1) shape_fail("concat", first.shape(), p.value().shape());
      offsets.push_back(data.size());
      data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    return tape->record(Tensor::vector(std::move(data)), parts,
                        [offsets](BackwardContext& ctx) {
                          const Tensor& g = ctx.gout();
                          for (std::size_t i = 0; i < offsets.size(); ++i) {
                            Tensor& gi = ctx.grad(i);
                            for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[offsets[i] + j];
                          }
                        },
                        "concat");
  }
  if (axis > 1) throw ShapeError("concat: invalid axis " + std::to_string(axis));
  const std::size_t fixed = first.shape()[1 - axis];
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    if (p.tape() != tape) throw std::invalid_argument("concat: operands on different tapes");
    if (t.rank() != 2 || t.shape()[1 - axis] != fixed) shape_fail("concat", first.shape(), t.shape());
    extents.push_back(t.shape()[axis]);
    total += t.shape()[axis];
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  Tensor out(Shape{rows, cols});
  std::size_t start = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    for (std::size_t r = 0; r < t.shape()[0]; ++r)
      for (std::size_t c = 0; c < t.shape()[1]; ++c) {
        if (axis == 0) out.at(start + r, c) = t.at(r, c);
        else out.at(r, start + c) = t.at(r, c);
      }
    start += extents[i];
  }
  return tape->record(std::move(out), parts,
                      [extents, axis](BackwardContext& ctx) {
                        const Tensor& g = ctx.gout();
                        std::size_t start = 0;
                        for (std::size_t i = 0; i < extents.size(); ++i) {
                          Tensor& gi = ctx.grad(i);
                          const std::size_t r_n = gi.shape()[0], c_n = gi.shape()[1];
                          for (std::size_t r = 0; r < r_n; ++r)
                            for (std::size_t c = 0; c < c_n; ++c)
                              gi.at(r, c) += axis == 0 ? g.at(start + r, c) : g.at(r, start + c);
                          start += extents[i];
                        }
                      },
                      "concat");
}

Var slice(Var x, std::size_t begin, std::size_t len) {
  const Tensor& X = x.value();
  if (X.rank() == 0 || begin + len > X.shape()[0]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                     ") out of bounds for shape " + shape_string(X.shape()));
  }
  const std::size_t width = X.rank() == 2 ? X.shape()[1] : 1;
  Shape shape = X.shape();
  shape[0] = len;
  std::vector<double> data(X.data().begin() + begin * width,
                           X.data().begin() + (begin + len) * width);
  return x.tape()->record(Tensor(std::move(shape), std::move(data)), {x},
                          [begin, width](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[begin * width + i] += g[i];
                          },
                          "slice");
}

Var transpose(Var x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ShapeError("transpose: expected matrix, got " + shape_string(X.shape()));
  const std::size_t r_n = X.shape()[0], c_n = X.shape()[1];
  Tensor out(Shape{c_n, r_n});
  for (std::size_t r = 0; r < r_n; ++r)
    for (std::size_t c = 0; c < c_n; ++c) out.at(c, r) = X.at(r, c);
  return x.tape()->record(std::move(out), {x},
                          [](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            Tensor& gx = ctx.grad(0);
                            const std::size_t r_n = gx.shape()[0], c_n = gx.shape()[1];
                            for (std::size_t r = 0; r < r_n; ++r)
                              for (std::size_t c = 0; c < c_n; ++c) gx.at(r, c) += g.at(c, r);
                          },
                          "transpose");
}

Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.value().shape()) + " as " +
                     shape_string(shape));
  }
  Tensor out(std::move(shape), x.value().storage());
  return x.tape()->record(std::move(out), {x},
                          [](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                          },
                          "reshape");
}

Var layer_norm(Var x, double eps) {
  const Tensor& X = x.value();
  if (X.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const Lines L = lines_of(X.shape(), X.rank() - 1, "layer_norm");
  Tensor out(X.shape());
  std::vector<double> inv_std(L.count);
  for (std::size_t l = 0; l < L.count; ++l) {
    const std::size_t off = L.offset(l);
    double mean = 0.0;
    for (std::size_t j = 0; j < L.length; ++j) mean += X[off + j];
    mean /= static_cast<double>(L.length);
    double var = 0.0;
    for (std::size_t j = 0; j < L.length; ++j) var += (X[off + j] - mean) * (X[off + j] - mean);
    var /= static_cast<double>(L.length);
    inv_std[l] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < L.length; ++j) out[off + j] = (X[off + j] - mean) * inv_std[l];
  }
  return x.tape()->record(std::move(out), {x},
                          [L, inv_std](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            const Tensor& y = ctx.out();
                            Tensor& gx = ctx.grad(0);
                            const double n = static_cast<double>(L.length);
                            for (std::size_t l = 0; l < L.count; ++l) {
                              const std::size_t off = L.offset(l);
                              double gmean = 0.0, gy = 0.0;
                              for (std::size_t j = 0; j < L.length; ++j) {
                                gmean += g[off + j];
                                gy += g[off + j] * y[off + j];
                              }
                              gmean /= n;
                              gy /= n;
                              for (std::size_t j = 0; j < L.length; ++j)
                                gx[off + j] += inv_std[l] * (g[off + j] - gmean - y[off + j] * gy);
                            }
                          },
                          "layer_norm");
}

Var mask_apply(Var x, const Tensor& mask) {
  const Tensor& X = x.value();
  if (X.size() != mask.size()) shape_fail("mask_apply", X.shape(), mask.shape());
  Tensor out = X;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape()->record(std::move(out), {x},
                          [mask](BackwardContext& ctx) {
                            const Tensor& g = ctx.gout();
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                          },
                          "mask_apply");
}

Var dropout(Var x, double rate, RngStream& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  Tensor mask(x.value().shape());
  const double keep = 1.0 - rate;
  for (double& m : mask.data()) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return mask_apply(x, mask);
}

Var gaussian_dropout(Var x, double rate, RngStream& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("gaussian_dropout: rate must be in [0,1)");
  }
  if (!training || rate == 0.0) return x;
  Tensor mask(x.value().shape());
  const double stddev = std::sqrt(rate / (1.0 - rate));
  for (double& m : mask.data()) m = 1.0 + stddev * rng.normal();
  return mask_apply(x, mask);
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape()->record(Tensor::scalar(total), {x},
                          [](BackwardContext& ctx) {
                            const double g = ctx.gout()[0];
                            for (double& v : ctx.grad(0).data()) v += g;
                          },
                          "sum");
}

Var weighted_sum(Var x, const Tensor& weights) {
  const Tensor& X = x.value();
  if (X.size() != weights.size()) shape_fail("weighted_sum", X.shape(), weights.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) total += weights[i] * X[i];
  return x.tape()->record(Tensor::scalar(total), {x},
                          [weights](BackwardContext& ctx) {
                            const double g = ctx.gout()[0];
                            Tensor& gx = ctx.grad(0);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
                          },
                          "weighted_sum");
}

Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("add_n: no inputs");
  Tensor out = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].value().shape() != out.shape()) shape_fail("add_n", out.shape(), xs[i].value().shape());
    out += xs[i].value();
  }
  return xs.front().tape()->record(std::move(out), xs,
                                   [n = xs.size()](BackwardContext& ctx) {
                                     for (std::size_t i = 0; i < n; ++i) ctx.grad(i) += ctx.gout();
                                   },
                                   "add_n");
}

}  // namespace zimm::ad
