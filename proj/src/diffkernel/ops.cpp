// Copyright 2026 The FLMD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "flmd/diffkernel/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include <Eigen/Core>

#include "flmd/error.hpp"

namespace flmd::dk {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat>;
using MutView = Eigen::Map<RowMat>;

ConstView view(const Tensor& t) {
  return ConstView(t.storage().data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

MutView view(Tensor& t) {
  return MutView(t.storage().data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw GraphError("detached variable");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw GraphError("operands live on different tapes");
  return *a.tape;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 input, got " + t.shape_string());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

// Calls fn(grad buffer of id) only when that node takes a gradient.
template <typename Fn>
void accumulate(Tape& t, std::size_t id, Fn&& fn) {
  if (t.requires_grad(id)) fn(t.grad_buffer(id));
}

template <typename Fwd, typename Bwd>
Var unary(Var a, const char* name, Fwd fwd, Bwd dfdx) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, dfdx](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& xv = tp.value(ia);
                    const Tensor& yv = tp.value(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
                    });
                  },
                  name);
}

double sigmoid_scalar(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + A.shape_string() + " x " + B.shape_string());
  }
  Tensor out = Tensor::zeros(A.rows(), B.cols());
  view(out).noalias() = view(A) * view(B);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const auto G = view(tp.grad(self));
                    accumulate(tp, ia, [&](Tensor& ga) {
                      view(ga).noalias() += G * view(tp.value(ib)).transpose();
                    });
                    accumulate(tp, ib, [&](Tensor& gb) {
                      view(gb).noalias() += view(tp.value(ia)).transpose() * G;
                    });
                  },
                  "matmul");
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (auto id : {ia, ib}) {
                      accumulate(tp, id, [&](Tensor& gx) {
                        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                      });
                    }
                  },
                  "add");
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                    });
                    accumulate(tp, ib, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= g[i];
                    });
                  },
                  "sub");
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * bv[i];
                    });
                    accumulate(tp, ib, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * av[i];
                    });
                  },
                  "mul");
}

Var scale(Var a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_row(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "add_row");
  require_rank2(B, "add_row");
  if (B.rows() != 1 || B.cols() != A.cols()) {
    throw ShapeError("add_row: cannot broadcast " + B.shape_string() + " over " + A.shape_string());
  }
  Tensor out = A;
  view(out).rowwise() += view(B).row(0);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    accumulate(tp, ia, [&](Tensor& ga) {
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                    });
                    accumulate(tp, ib, [&](Tensor& gb) {
                      view(gb).row(0) += view(g).colwise().sum();
                    });
                  },
                  "add_row");
}

Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var softmax(Var a, int axis) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "softmax");
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  const std::size_t R = x.rows(), C = x.cols();
  // Walk "lines" (rows for axis 1, columns for axis 0).
  const std::size_t lines = axis == 1 ? R : C;
  const std::size_t len = axis == 1 ? C : R;
  const auto at = [=](std::size_t line, std::size_t k) {
    return axis == 1 ? line * C + k : k * C + line;
  };
  Tensor out(x.shape());
  for (std::size_t l = 0; l < lines; ++l) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[at(l, k)]);
    double z = 0.0;
    for (std::size_t k = 0; k < len; ++k) z += out[at(l, k)] = std::exp(x[at(l, k)] - mx);
    for (std::size_t k = 0; k < len; ++k) out[at(l, k)] /= z;
  }
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, lines, len, at](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& s = tp.value(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t l = 0; l < lines; ++l) {
                        double dot = 0.0;
                        for (std::size_t k = 0; k < len; ++k) dot += g[at(l, k)] * s[at(l, k)];
                        for (std::size_t k = 0; k < len; ++k) {
                          gx[at(l, k)] += s[at(l, k)] * (g[at(l, k)] - dot);
                        }
                      }
                    });
                  },
                  "softmax");
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id;
  return t.record(Tensor::scalar(s), {ia},
                  [ia](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0];
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (auto& v : gx.storage()) v += g;
                    });
                  },
                  "sum");
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "row_sum");
  Tensor out = Tensor::zeros(x.rows(), 1);
  view(out).col(0) = view(x).rowwise().sum();
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      view(gx).colwise() += view(g).col(0);
                    });
                  },
                  "row_sum");
}

Var squared_norm(Var a) { return sum(square(a)); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t R = parts.front().value().rows();
  std::size_t C = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    tape_of(p, parts.front());
    const Tensor& v = p.value();
    require_rank2(v, "concat_cols");
    if (v.rows() != R) throw ShapeError("concat_cols: row counts differ");
    ids.push_back(p.id);
    offsets.push_back(C);
    C += v.cols();
  }
  Tensor out = Tensor::zeros(R, C);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    view(out).middleCols(static_cast<Eigen::Index>(offsets[k]), static_cast<Eigen::Index>(v.cols())) =
        view(v);
  }
  return t.record(std::move(out), ids,
                  [ids, offsets](Tape& tp, std::size_t self) {
                    const auto G = view(tp.grad(self));
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      accumulate(tp, ids[k], [&](Tensor& gx) {
                        view(gx) += G.middleCols(static_cast<Eigen::Index>(offsets[k]),
                                                 static_cast<Eigen::Index>(gx.cols()));
                      });
                    }
                  },
                  "concat_cols");
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "slice_cols");
  if (begin > end || end > x.cols()) throw ShapeError("slice_cols: range out of bounds");
  Tensor out = Tensor::zeros(x.rows(), end - begin);
  view(out) = view(x).middleCols(static_cast<Eigen::Index>(begin),
                                 static_cast<Eigen::Index>(end - begin));
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, begin, end](Tape& tp, std::size_t self) {
                    const auto G = view(tp.grad(self));
                    accumulate(tp, ia, [&](Tensor& gx) {
                      view(gx).middleCols(static_cast<Eigen::Index>(begin),
                                          static_cast<Eigen::Index>(end - begin)) += G;
                    });
                  },
                  "slice_cols");
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "slice_rows");
  if (begin > end || end > x.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t C = x.cols();
  Tensor out({end - begin, C},
             std::vector<double>(x.storage().begin() + static_cast<std::ptrdiff_t>(begin * C),
                                 x.storage().begin() + static_cast<std::ptrdiff_t>(end * C)));
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, begin, C](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * C + i] += g[i];
                    });
                  },
                  "slice_rows");
}

Var interleave_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("interleave_rows: no inputs");
  Tape& t = tape_of(parts.front());
  const Tensor& first = parts.front().value();
  require_rank2(first, "interleave_rows");
  const std::size_t R = first.rows(), C = first.cols(), n = parts.size();
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    tape_of(p, parts.front());
    require_same_shape(p.value(), first, "interleave_rows");
    ids.push_back(p.id);
  }
  Tensor out = Tensor::zeros(R * n, C);
  for (std::size_t s = 0; s < n; ++s) {
    const Tensor& v = parts[s].value();
    for (std::size_t r = 0; r < R; ++r) {
      std::copy_n(v.storage().begin() + static_cast<std::ptrdiff_t>(r * C), C,
                  out.storage().begin() + static_cast<std::ptrdiff_t>((r * n + s) * C));
    }
  }
  return t.record(std::move(out), ids,
                  [ids, R, C, n](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (std::size_t s = 0; s < n; ++s) {
                      accumulate(tp, ids[s], [&](Tensor& gx) {
                        for (std::size_t r = 0; r < R; ++r) {
                          for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += g[(r * n + s) * C + c];
                        }
                      });
                    }
                  },
                  "interleave_rows");
}

Var tile_rows(Var a, std::size_t times) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "tile_rows");
  const std::size_t R = x.rows(), C = x.cols();
  Tensor out = Tensor::zeros(R * times, C);
  for (std::size_t k = 0; k < times; ++k) {
    std::copy(x.storage().begin(), x.storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(k * R * C));
  }
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, times, R, C](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t k = 0; k < times; ++k) {
                        for (std::size_t i = 0; i < R * C; ++i) gx[i] += g[k * R * C + i];
                      }
                    });
                  },
                  "tile_rows");
}

Var group_mean_rows(Var a, std::size_t group) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "group_mean_rows");
  if (group == 0 || x.rows() % group != 0) {
    throw ShapeError("group_mean_rows: rows not divisible by group size");
  }
  const std::size_t B = x.rows() / group, C = x.cols();
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out = Tensor::zeros(B, C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < group; ++s) {
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += inv * x[(b * group + s) * C + c];
    }
  }
  const std::size_t ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, B, C, group, inv](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t b = 0; b < B; ++b) {
                        for (std::size_t s = 0; s < group; ++s) {
                          for (std::size_t c = 0; c < C; ++c) gx[(b * group + s) * C + c] += inv * g[b * C + c];
                        }
                      }
                    });
                  },
                  "group_mean_rows");
}

Var block_rowdot(Var h, Var w, std::size_t k) {
  Tape& t = tape_of(h, w);
  const Tensor& H = h.value();
  const Tensor& W = w.value();
  require_rank2(H, "block_rowdot");
  require_rank2(W, "block_rowdot");
  if (k == 0 || H.cols() % k != 0 || W.rows() != 1 || W.cols() != H.cols()) {
    throw ShapeError("block_rowdot: incompatible shapes " + H.shape_string() + ", " +
                     W.shape_string());
  }
  const std::size_t R = H.rows(), F = H.cols() / k, C = H.cols();
  Tensor out = Tensor::zeros(R, F);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < F; ++j) {
      double s = 0.0;
      for (std::size_t u = 0; u < k; ++u) s += H[r * C + j * k + u] * W[j * k + u];
      out[r * F + j] = s;
    }
  }
  const std::size_t ih = h.id, iw = w.id;
  return t.record(std::move(out), {ih, iw},
                  [ih, iw, R, F, C, k](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& Hv = tp.value(ih);
                    const Tensor& Wv = tp.value(iw);
                    accumulate(tp, ih, [&](Tensor& gh) {
                      for (std::size_t r = 0; r < R; ++r) {
                        for (std::size_t c = 0; c < C; ++c) gh[r * C + c] += g[r * F + c / k] * Wv[c];
                      }
                    });
                    accumulate(tp, iw, [&](Tensor& gw) {
                      for (std::size_t r = 0; r < R; ++r) {
                        for (std::size_t c = 0; c < C; ++c) gw[c] += g[r * F + c / k] * Hv[r * C + c];
                      }
                    });
                  },
                  "block_rowdot");
}

Var gaussian_kl_rows(Var mu, Var sigma) {
  Tape& t = tape_of(mu, sigma);
  const Tensor& M = mu.value();
  const Tensor& S = sigma.value();
  require_rank2(M, "gaussian_kl");
  require_same_shape(M, S, "gaussian_kl");
  for (double s : S.data()) {
    if (!(s > 0.0)) throw DomainError("gaussian_kl: sigma must be positive");
  }
  const std::size_t R = M.rows(), C = M.cols();
  Tensor out = Tensor::zeros(R, 1);
  for (std::size_t r = 0; r < R; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double m = M[r * C + c], s = S[r * C + c];
      acc += m * m + s * s - 2.0 * std::log(s) - 1.0;
    }
    out[r] = 0.5 * acc;
  }
  const std::size_t im = mu.id, is = sigma.id;
  return t.record(std::move(out), {im, is},
                  [im, is, R, C](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& Mv = tp.value(im);
                    const Tensor& Sv = tp.value(is);
                    accumulate(tp, im, [&](Tensor& gm) {
                      for (std::size_t i = 0; i < R * C; ++i) gm[i] += g[i / C] * Mv[i];
                    });
                    accumulate(tp, is, [&](Tensor& gs) {
                      for (std::size_t i = 0; i < R * C; ++i) gs[i] += g[i / C] * (Sv[i] - 1.0 / Sv[i]);
                    });
                  },
                  "gaussian_kl");
}

Var gaussian_kl(Var mu, Var sigma) { return sum(gaussian_kl_rows(mu, sigma)); }

Var reparameterize(Var mu, Var sigma, const Tensor& eps) {
  Tape& t = tape_of(mu, sigma);
  require_same_shape(mu.value(), sigma.value(), "reparameterize");
  require_same_shape(mu.value(), eps, "reparameterize");
  return add(mu, mul(sigma, t.constant(eps)));
}

Var bce_elementwise(Var prob, const Tensor& y) {
  Tape& t = tape_of(prob);
  const Tensor& P = prob.value();
  require_same_shape(P, y, "bce");
  Tensor out(P.shape());
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double p = std::clamp(P[i], kProbClamp, 1.0 - kProbClamp);
    out[i] = -(y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p));
  }
  const std::size_t ip = prob.id;
  return t.record(std::move(out), {ip},
                  [ip, y](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& Pv = tp.value(ip);
                    accumulate(tp, ip, [&](Tensor& gp) {
                      for (std::size_t i = 0; i < gp.size(); ++i) {
                        const double p = Pv[i];
                        if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
                        gp[i] += g[i] * (-y[i] / p + (1.0 - y[i]) / (1.0 - p));
                      }
                    });
                  },
                  "bce");
}

Var bce(Var prob, const Tensor& y) { return mean(bce_elementwise(prob, y)); }

Var cross_entropy_elementwise(Var logits, const Tensor& y) {
  Tape& t = tape_of(logits);
  const Tensor& A = logits.value();
  require_same_shape(A, y, "cross_entropy");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = softplus(A[i]) - y[i] * A[i];
  const std::size_t ia = logits.id;
  return t.record(std::move(out), {ia},
                  [ia, y](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& Av = tp.value(ia);
                    accumulate(tp, ia, [&](Tensor& ga) {
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (sigmoid_scalar(Av[i]) - y[i]);
                    });
                  },
                  "cross_entropy");
}

Var cross_entropy(Var logits, const Tensor& y) { return mean(cross_entropy_elementwise(logits, y)); }

Var reconstruction_nll_rows(Var pred, const Tensor& x, const std::vector<bool>& bernoulli) {
  Tape& t = tape_of(pred);
  const Tensor& P = pred.value();
  require_same_shape(P, x, "reconstruction_nll");
  const std::size_t R = P.rows(), C = P.cols();
  if (bernoulli.size() != C) throw ShapeError("reconstruction_nll: likelihood list length != F");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out = Tensor::zeros(R, 1);
  for (std::size_t r = 0; r < R; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double p = P[r * C + c], v = x[r * C + c];
      acc += bernoulli[c] ? softplus(p) - v * p : 0.5 * (v - p) * (v - p) + half_log_2pi;
    }
    out[r] = acc;
  }
  const std::size_t ip = pred.id;
  return t.record(std::move(out), {ip},
                  [ip, x, bernoulli, R, C](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& Pv = tp.value(ip);
                    accumulate(tp, ip, [&](Tensor& gp) {
                      for (std::size_t r = 0; r < R; ++r) {
                        for (std::size_t c = 0; c < C; ++c) {
                          const std::size_t i = r * C + c;
                          const double d = bernoulli[c] ? sigmoid_scalar(Pv[i]) - x[i] : Pv[i] - x[i];
                          gp[i] += g[r] * d;
                        }
                      }
                    });
                  },
                  "reconstruction_nll");
}

namespace {

struct AttentionShape {
  std::size_t N, d, heads, dh, group, groups;
};

AttentionShape attention_shape(const Tensor& q, const Tensor& k, const Tensor& v,
                               std::size_t heads, std::size_t group) {
  require_rank2(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (heads == 0 || q.cols() % heads != 0) {
    throw ConfigError("attention: model width " + std::to_string(q.cols()) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (group == 0 || q.rows() % group != 0) {
    throw ShapeError("attention: token count not divisible by group size");
  }
  return {q.rows(), q.cols(), heads, q.cols() / heads, group, q.rows() / group};
}

// Row-stochastic weights for every (group, head), each group x group.
std::vector<double> attention_probs(const Tensor& q, const Tensor& k, const AttentionShape& s) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.dh));
  std::vector<double> A(s.groups * s.heads * s.group * s.group);
  for (std::size_t g = 0; g < s.groups; ++g) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      double* blk = &A[(g * s.heads + h) * s.group * s.group];
      for (std::size_t i = 0; i < s.group; ++i) {
        const double* qi = &q[(g * s.group + i) * s.d + h * s.dh];
        double mx = -INFINITY;
        for (std::size_t j = 0; j < s.group; ++j) {
          const double* kj = &k[(g * s.group + j) * s.d + h * s.dh];
          double dot = 0.0;
          for (std::size_t u = 0; u < s.dh; ++u) dot += qi[u] * kj[u];
          blk[i * s.group + j] = dot * inv_sqrt;
          mx = std::max(mx, blk[i * s.group + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < s.group; ++j) z += blk[i * s.group + j] = std::exp(blk[i * s.group + j] - mx);
        for (std::size_t j = 0; j < s.group; ++j) blk[i * s.group + j] /= z;
      }
    }
  }
  return A;
}

}  // namespace

std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, std::size_t heads,
                                      std::size_t group) {
  const AttentionShape s = attention_shape(q, k, k, heads, group);
  const std::vector<double> A = attention_probs(q, k, s);
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < s.groups * s.heads; ++b) {
    out.emplace_back(std::vector<std::size_t>{s.group, s.group},
                     std::vector<double>(A.begin() + static_cast<std::ptrdiff_t>(b * s.group * s.group),
                                         A.begin() + static_cast<std::ptrdiff_t>((b + 1) * s.group * s.group)));
  }
  return out;
}

Var grouped_attention(Var q, Var k, Var v, std::size_t heads, std::size_t group) {
  Tape& t = tape_of(q, k);
  tape_of(q, v);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const AttentionShape s = attention_shape(Q, K, V, heads, group);
  auto A = std::make_shared<const std::vector<double>>(attention_probs(Q, K, s));

  Tensor out = Tensor::zeros(s.N, s.d);
  for (std::size_t g = 0; g < s.groups; ++g) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      const double* blk = &(*A)[(g * s.heads + h) * s.group * s.group];
      for (std::size_t i = 0; i < s.group; ++i) {
        double* oi = &out[(g * s.group + i) * s.d + h * s.dh];
        for (std::size_t j = 0; j < s.group; ++j) {
          const double a = blk[i * s.group + j];
          const double* vj = &V[(g * s.group + j) * s.d + h * s.dh];
          for (std::size_t u = 0; u < s.dh; ++u) oi[u] += a * vj[u];
        }
      }
    }
  }

  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return t.record(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, s, A](Tape& tp, std::size_t self) {
        const Tensor& G = tp.grad(self);
        const Tensor& Qv = tp.value(iq);
        const Tensor& Kv = tp.value(ik);
        const Tensor& Vv = tp.value(iv);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.dh));
        const bool need_q = tp.requires_grad(iq), need_k = tp.requires_grad(ik),
                   need_v = tp.requires_grad(iv);
        Tensor* gq = need_q ? &tp.grad_buffer(iq) : nullptr;
        Tensor* gk = need_k ? &tp.grad_buffer(ik) : nullptr;
        Tensor* gv = need_v ? &tp.grad_buffer(iv) : nullptr;
        std::vector<double> dA(s.group * s.group), dS(s.group * s.group);
        for (std::size_t g = 0; g < s.groups; ++g) {
          for (std::size_t h = 0; h < s.heads; ++h) {
            const double* blk = &(*A)[(g * s.heads + h) * s.group * s.group];
            const auto row = [&](std::size_t i) { return (g * s.group + i) * s.d + h * s.dh; };
            for (std::size_t i = 0; i < s.group; ++i) {
              for (std::size_t j = 0; j < s.group; ++j) {
                double acc = 0.0;
                for (std::size_t u = 0; u < s.dh; ++u) acc += G[row(i) + u] * Vv[row(j) + u];
                dA[i * s.group + j] = acc;
                if (gv) {
                  for (std::size_t u = 0; u < s.dh; ++u) (*gv)[row(j) + u] += blk[i * s.group + j] * G[row(i) + u];
                }
              }
              double dot = 0.0;
              for (std::size_t j = 0; j < s.group; ++j) dot += dA[i * s.group + j] * blk[i * s.group + j];
              for (std::size_t j = 0; j < s.group; ++j) {
                dS[i * s.group + j] = blk[i * s.group + j] * (dA[i * s.group + j] - dot) * inv_sqrt;
              }
            }
            for (std::size_t i = 0; i < s.group; ++i) {
              for (std::size_t j = 0; j < s.group; ++j) {
                const double ds = dS[i * s.group + j];
                if (gq) {
                  for (std::size_t u = 0; u < s.dh; ++u) (*gq)[row(i) + u] += ds * Kv[row(j) + u];
                }
                if (gk) {
                  for (std::size_t u = 0; u < s.dh; ++u) (*gk)[row(j) + u] += ds * Qv[row(i) + u];
                }
              }
            }
          }
        }
      },
      "grouped_attention");
}

double gaussian_kl_value(const Tensor& mu, const Tensor& sigma) {
  if (!mu.same_shape(sigma)) throw ShapeError("gaussian_kl: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw DomainError("gaussian_kl: sigma must be positive");
    acc += mu[i] * mu[i] + sigma[i] * sigma[i] - 2.0 * std::log(sigma[i]) - 1.0;
  }
  return 0.5 * acc;
}

double bce_value(double prob, int y) {
  const double p = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
  return -(y * std::log(p) + (1 - y) * std::log1p(-p));
}

}  // namespace flmd::dk
