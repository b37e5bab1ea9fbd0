// Copyright 2026 The dsprop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dsprop/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dsprop/errors.hpp"

namespace dsprop {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C[i * n + j] += s;
    }
  }
}

// out[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = B.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      double* crow = C.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

// ---- Tape ------------------------------------------------------------------

Var Tape::push(Node node) {
  if (!node.value.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + node.op);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op = "leaf";
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{this, it->second};
  p.note_access();
  Node n;
  n.value = p.value();
  n.requires_grad = true;
  n.param = &p;
  n.op = "param";
  Var v = push(std::move(n));
  bound_.emplace(&p, v.id);
  return v;
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (Var p : parents) {
    if (p.tape != this) throw Error("tape", std::string(op) + ": operand recorded on another tape");
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor::zeros_like(n.value);
  return n.grad;
}

Tensor* Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return &n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw Error("tape", "backward: root recorded on another tape");
  if (nodes_[root.id].value.size() != 1)
    throw DimensionError("backward: root must be scalar, got " +
                         shape_string(nodes_[root.id].value.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape(), 1.0);

  for (std::uint32_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(n.grad, n.value, *this);
    if (n.param) accumulate(n.param->grad(), n.grad);
  }
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(av.shape()) +
                         " x " + shape_string(bv.shape()));
  Tensor out({av.rows(), bv.cols()});
  gemm_nn(av, bv, out);
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a)) gemm_nt(g, t.value(b), *ga);
    if (Tensor* gb = t.grad_slot(b)) gemm_tn(t.value(a), g, *gb);
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = av(i, j);
  return a.tape->record("transpose", std::move(out), {a}, [a, m, n](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)(i, j) += g(j, i);
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", std::move(out), {a}, [a](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a)) {
      auto gd = ga->data();
      auto ud = g.data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += ud[i];
    }
  });
}

Var row_softmax(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "row_softmax");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto in = av.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return a.tape->record("row_softmax", std::move(out), {a},
                        [a, m, n](const Tensor& g, const Tensor& y, Tape& t) {
                          Tensor* ga = t.grad_slot(a);
                          if (!ga) return;
                          for (std::size_t i = 0; i < m; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
                            for (std::size_t j = 0; j < n; ++j) (*ga)(i, j) += y(i, j) * (g(i, j) - dot);
                          }
                        });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  return a.tape->record("add", std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a)) accumulate(*ga, g);
    if (Tensor* gb = t.grad_slot(b)) accumulate(*gb, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a)) accumulate(*ga, g);
    if (Tensor* gb = t.grad_slot(b)) {
      auto gd = gb->data();
      auto ud = g.data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] -= ud[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape->record("scale", std::move(out), {a}, [a, factor](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a)) {
      auto gd = ga->data();
      auto ud = g.data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += factor * ud[i];
    }
  });
}

Var add_row_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_rank2(av, "add_row_bias");
  if (bv.size() != av.cols())
    throw DimensionError("add_row_bias: bias " + shape_string(bv.shape()) + " vs input " +
                         shape_string(av.shape()));
  Tensor out = av;
  const std::size_t m = av.rows(), n = av.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  return a.tape->record("add_row_bias", std::move(out), {a, bias},
                        [a, bias, m, n](const Tensor& g, const Tensor&, Tape& t) {
                          if (Tensor* ga = t.grad_slot(a)) accumulate(*ga, g);
                          if (Tensor* gb = t.grad_slot(bias))
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g(i, j);
                        });
}

Var leaky_relu(Var a, double negative_slope) {
  Tensor out = a.value();
  for (double& v : out.data())
    if (v <= 0.0) v *= negative_slope;
  return a.tape->record("leaky_relu", std::move(out), {a},
                        [a, negative_slope](const Tensor& g, const Tensor&, Tape& t) {
                          Tensor* ga = t.grad_slot(a);
                          if (!ga) return;
                          auto x = t.value(a).data();
                          auto gd = ga->data();
                          auto ud = g.data();
                          for (std::size_t i = 0; i < gd.size(); ++i)
                            gd[i] += (x[i] > 0.0 ? 1.0 : negative_slope) * ud[i];
                        });
}

Var gather_rows(Var a, std::span<const std::uint32_t> idx) {
  const Tensor& av = a.value();
  require_rank2(av, "gather_rows");
  const std::size_t n = av.rows(), k = av.cols();
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  Tensor out({idx.size(), k});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n)
      throw IndexError("gather_rows: index " + std::to_string(idx[r]) + " out of range [0, " +
                       std::to_string(n) + ")");
    auto src = av.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::uint32_t> copy(idx.begin(), idx.end());
  return a.tape->record("gather_rows", std::move(out), {a},
                        [a, copy = std::move(copy), k](const Tensor& g, const Tensor&, Tape& t) {
                          Tensor* ga = t.grad_slot(a);
                          if (!ga) return;
                          for (std::size_t r = 0; r < copy.size(); ++r) {
                            auto dst = ga->row(copy[r]);
                            auto src = g.row(r);
                            for (std::size_t j = 0; j < k; ++j) dst[j] += src[j];
                          }
                        });
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "concat_cols");
  require_rank2(bv, "concat_cols");
  if (av.rows() != bv.rows())
    throw DimensionError("concat_cols: row count mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  const std::size_t m = av.rows(), ka = av.cols(), kb = bv.cols();
  Tensor out({m, ka + kb});
  for (std::size_t i = 0; i < m; ++i) {
    auto o = out.row(i);
    auto ra = av.row(i);
    auto rb = bv.row(i);
    std::copy(ra.begin(), ra.end(), o.begin());
    std::copy(rb.begin(), rb.end(), o.begin() + static_cast<std::ptrdiff_t>(ka));
  }
  return a.tape->record("concat_cols", std::move(out), {a, b},
                        [a, b, m, ka, kb](const Tensor& g, const Tensor&, Tape& t) {
                          Tensor* ga = t.grad_slot(a);
                          Tensor* gb = t.grad_slot(b);
                          for (std::size_t i = 0; i < m; ++i) {
                            auto gr = g.row(i);
                            if (ga)
                              for (std::size_t j = 0; j < ka; ++j) (*ga)(i, j) += gr[j];
                            if (gb)
                              for (std::size_t j = 0; j < kb; ++j) (*gb)(i, j) += gr[ka + j];
                          }
                        });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->record("sum", Tensor::scalar(s), {a}, [a](const Tensor& g, const Tensor&, Tape& t) {
    if (Tensor* ga = t.grad_slot(a)) {
      const double u = g[0];
      for (double& v : ga->data()) v += u;
    }
  });
}

Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

Var masked_softmax_cross_entropy(Var logits, const Tensor& one_hot, const Tensor& mask) {
  const Tensor& z = logits.value();
  require_rank2(z, "masked_softmax_cross_entropy");
  require_same_shape(z, one_hot, "masked_softmax_cross_entropy");
  if (mask.size() != z.rows())
    throw DimensionError("masked_softmax_cross_entropy: mask " + shape_string(mask.shape()) +
                         " vs logits " + shape_string(z.shape()));
  const std::size_t n = z.rows(), c = z.cols();
  double b = 0.0;
  for (double m : mask.data()) b += m;
  if (b == 0.0) return logits.tape->constant(Tensor::scalar(0.0));

  Tensor prob({n, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto zr = z.row(i);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(zr[j] - mx);
    const double log_s = std::log(s);
    for (std::size_t j = 0; j < c; ++j) prob(i, j) = std::exp(zr[j] - mx - log_s);
    if (mask[i] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (one_hot(i, j) != 0.0) row += one_hot(i, j) * (zr[j] - mx - log_s);
    loss -= mask[i] * row;
  }
  loss /= b;
  return logits.tape->record(
      "masked_softmax_cross_entropy", Tensor::scalar(loss), {logits},
      [logits, prob = std::move(prob), one_hot, mask, b, n, c](const Tensor& g, const Tensor&, Tape& t) {
        Tensor* gz = t.grad_slot(logits);
        if (!gz) return;
        const double u = g[0];
        for (std::size_t i = 0; i < n; ++i) {
          if (mask[i] == 0.0) continue;
          double ysum = 0.0;
          for (std::size_t j = 0; j < c; ++j) ysum += one_hot(i, j);
          const double w = u * mask[i] / b;
          for (std::size_t j = 0; j < c; ++j)
            (*gz)(i, j) += w * (prob(i, j) * ysum - one_hot(i, j));
        }
      });
}

namespace {

Var frobenius_sq(Var a, Var b, bool normalize, const char* op) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, op);
  const double denom = normalize ? static_cast<double>(av.size()) : 1.0;
  double s = 0.0;
  auto ad = av.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double d = ad[i] - bd[i];
    s += d * d;
  }
  return a.tape->record(op, Tensor::scalar(s / denom), {a, b},
                        [a, b, denom](const Tensor& g, const Tensor&, Tape& t) {
                          const double u = 2.0 * g[0] / denom;
                          auto ad = t.value(a).data();
                          auto bd = t.value(b).data();
                          Tensor* ga = t.grad_slot(a);
                          Tensor* gb = t.grad_slot(b);
                          for (std::size_t i = 0; i < ad.size(); ++i) {
                            const double d = u * (ad[i] - bd[i]);
                            if (ga) (*ga)[i] += d;
                            if (gb) (*gb)[i] -= d;
                          }
                        });
}

}  // namespace

Var frobenius_sq_mean(Var a, Var b) { return frobenius_sq(a, b, true, "frobenius_sq_mean"); }
Var frobenius_sq_sum(Var a, Var b) { return frobenius_sq(a, b, false, "frobenius_sq_sum"); }

// ---- optimizer -------------------------------------------------------------

SgdMomentum::SgdMomentum(double learning_rate, double momentum)
    : lr_(learning_rate), momentum_(momentum) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

void SgdMomentum::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (p->grad().shape() != p->value().shape())
      throw DimensionError("sgd: gradient shape " + shape_string(p->grad().shape()) +
                           " does not match parameter " + p->name() + " " +
                           shape_string(p->value().shape()));
    auto [it, inserted] = velocity_.try_emplace(p->name(), Tensor::zeros_like(p->value()));
    Tensor& v = it->second;
    if (v.shape() != p->value().shape())
      throw DimensionError("sgd: velocity shape mismatch for " + p->name());
    auto vd = v.data();
    auto gd = p->grad().data();
    auto pd = p->value().data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      vd[i] = momentum_ * vd[i] + gd[i];
      pd[i] -= lr_ * vd[i];
    }
  }
}

}  // namespace dsprop
