#include "hg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hg {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  std::ostringstream msg;
  msg << op << ": incompatible shapes " << shape_str(a.shape()) << " and " << shape_str(b.shape());
  throw std::invalid_argument(msg.str());
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.ndim() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                shape_str(a.shape()));
  }
}

// True when b can be broadcast onto a (trailing suffix or single element).
bool broadcastable(const Tensor& a, const Tensor& b) {
  if (b.numel() == 1) return true;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() > sa.size()) return false;
  return std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  if (!broadcastable(a, b)) shape_error(op, a, b);
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i % nb]);
  return make_result(a.shape(), std::move(out), {a, b},
                     [n, nb, dfa, dfb](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       for (std::size_t i = 0; i < n; ++i) {
                         const double g = self.grad[i];
                         const double x = pa.data[i];
                         const double y = pb.data[i % nb];
                         if (pa.requires_grad) pa.grad[i] += g * dfa(x, y, self.data[i]);
                         if (pb.requires_grad) pb.grad[i % nb] += g * dfb(x, y, self.data[i]);
                       }
                     },
                     op);
}

template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [n, df](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < n; ++i) {
                         pa.grad[i] += self.grad[i] * df(pa.data[i], self.data[i]);
                       }
                     },
                     op);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.numel() < b.numel()) return add(b, a);
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.numel() < b.numel()) return add(neg(b), a);
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.numel() < b.numel()) return mul(b, a);
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  return unary(
      "pow", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a, [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary(
      "log_sigmoid", a, [](double x) { return -stable_softplus(-x); },
      [](double x, double) { return stable_sigmoid(-x); });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](double x) { return x * stable_sigmoid(x); },
      [](double x, double) {
        const double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_error("matmul", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const double* g = self.grad.data();
                       if (pa.requires_grad) {
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t p = 0; p < k; ++p) {
                             const double* brow = pb.data.data() + p * n;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * brow[j];
                             pa.grad[i * k + p] += acc;
                           }
                         }
                       }
                       if (pb.requires_grad) {
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = pa.data[i * k + p];
                             if (av == 0.0) continue;
                             double* gb = pb.grad.data() + p * n;
                             for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[i * n + j];
                           }
                         }
                       }
                     },
                     "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) shape_error("matmul_nt", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ad[i * k + p] * bd[j * k + p];
      out[i * n + j] = acc;
    }
  }
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) {
                           const double g = self.grad[i * n + j];
                           if (g == 0.0) continue;
                           if (pa.requires_grad) {
                             for (std::size_t p = 0; p < k; ++p) pa.grad[i * k + p] += g * pb.data[j * k + p];
                           }
                           if (pb.requires_grad) {
                             for (std::size_t p = 0; p < k; ++p) pb.grad[j * k + p] += g * pa.data[i * k + p];
                           }
                         }
                       }
                     },
                     "matmul_nt");
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return make_result({c, r}, std::move(out), {a},
                     [r, c](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[j * r + i];
                     },
                     "transpose");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  auto y = matmul(x, w);
  if (bias) y = add(y, *bias);
  return y;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       for (auto& g : pa.grad) g += self.grad[0];
                     },
                     "sum");
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_rows(const Tensor& a) {
  require_matrix("sum_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(c, 0.0);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += ad[i * c + j];
  return make_result({c}, std::move(out), {a},
                     [r, c](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[j];
                     },
                     "sum_rows");
}

Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows of empty matrix");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Tensor sum_cols(const Tensor& a) {
  require_matrix("sum_cols", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += ad[i * c + j];
  return make_result({r}, std::move(out), {a},
                     [r, c](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[i];
                     },
                     "sum_cols");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  }
  return make_result(std::move(shape), a.to_vector(), {a},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += self.grad[i];
                     },
                     "reshape");
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a);
  if (begin > end || end > a.rows()) {
    std::ostringstream msg;
    msg << "slice_rows: range [" << begin << ',' << end << ") out of bounds for "
        << shape_str(a.shape());
    throw std::out_of_range(msg.str());
  }
  const std::size_t c = a.cols();
  std::vector<double> out(a.data().begin() + begin * c, a.data().begin() + end * c);
  return make_result({end - begin, c}, std::move(out), {a},
                     [begin, c](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[begin * c + i] += self.grad[i];
                     },
                     "slice_rows");
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", a);
  if (begin > end || end > a.cols()) {
    std::ostringstream msg;
    msg << "slice_cols: range [" << begin << ',' << end << ") out of bounds for "
        << shape_str(a.shape());
    throw std::out_of_range(msg.str());
  }
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  std::vector<double> out(r * w);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = ad[i * c + begin + j];
  return make_result({r, w}, std::move(out), {a},
                     [r, c, w, begin](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < w; ++j) pa.grad[i * c + begin + j] += self.grad[i * w + j];
                     },
                     "slice_cols");
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  require_matrix("gather_rows", a);
  const std::size_t c = a.cols();
  std::vector<double> out(rows.size() * c);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(ad.begin() + rows[i] * c, c, out.begin() + i * c);
  }
  return make_result({rows.size(), c}, std::move(out), {a},
                     [rows, c](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < rows.size(); ++i)
                         for (std::size_t j = 0; j < c; ++j) pa.grad[rows[i] * c + j] += self.grad[i * c + j];
                     },
                     "gather_rows");
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = a.data()[idx.at(i)];
  return make_result({idx.size()}, std::move(out), {a},
                     [idx](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < idx.size(); ++i) pa.grad[idx[i]] += self.grad[i];
                     },
                     "gather");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (auto& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts[0], p);
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({total, c}, std::move(out), parts,
                     [](Node& self) {
                       std::size_t off = 0;
                       for (auto& p : self.parents) {
                         if (p->requires_grad) {
                           for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self.grad[off + i];
                         }
                         off += p->data.size();
                       }
                     },
                     "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (auto& p : parts) {
    if (p.rows() != r) shape_error("concat_cols", parts[0], p);
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + off + j] = p.data()[i * c + j];
    off += c;
  }
  return make_result({r, total}, std::move(out), parts,
                     [r, total](Node& self) {
                       std::size_t off = 0;
                       for (auto& p : self.parents) {
                         const std::size_t c = p->shape[1];
                         if (p->requires_grad) {
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[i * total + off + j];
                         }
                         off += c;
                       }
                     },
                     "concat_cols");
}

Tensor reverse_rows(const Tensor& a) {
  require_matrix("reverse_rows", a);
  const std::size_t r = a.rows();
  std::vector<std::size_t> idx(r);
  for (std::size_t i = 0; i < r; ++i) idx[i] = r - 1 - i;
  return gather_rows(a, idx);
}

Tensor stack_scalars(const std::vector<Tensor>& parts) {
  std::vector<double> out;
  out.reserve(parts.size());
  for (auto& p : parts) out.push_back(p.item());
  return make_result({parts.size()}, std::move(out), parts,
                     [](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         if (self.parents[i]->requires_grad) self.parents[i]->grad[0] += self.grad[i];
                       }
                     },
                     "stack_scalars");
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_matrix("rms_norm", x);
  if (gain.ndim() != 1 || gain.dim(0) != x.cols()) {
    std::ostringstream msg;
    msg << "rms_norm: gain shape " << shape_str(gain.shape()) << " does not match input shape "
        << shape_str(x.shape());
    throw std::invalid_argument(msg.str());
  }
  if (!(eps > 0)) throw std::invalid_argument("rms_norm: eps must be positive");
  const std::size_t t = x.rows(), d = x.cols();
  std::vector<double> out(t * d), inv(t);
  const auto& xd = x.data();
  const auto& gd = gain.data();
  for (std::size_t i = 0; i < t; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xd[i * d + j] * xd[i * d + j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xd[i * d + j] * inv[i] * gd[j];
  }
  return make_result(x.shape(), std::move(out), {x, gain},
                     [t, d, inv = std::move(inv)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       for (std::size_t i = 0; i < t; ++i) {
                         const double* xr = px.data.data() + i * d;
                         const double* gy = self.grad.data() + i * d;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double xh = xr[j] * inv[i];
                           if (pg.requires_grad) pg.grad[j] += gy[j] * xh;
                           dot += gy[j] * pg.data[j] * xh;
                         }
                         if (px.requires_grad) {
                           const double m = dot / static_cast<double>(d);
                           for (std::size_t j = 0; j < d; ++j) {
                             const double xh = xr[j] * inv[i];
                             px.grad[i * d + j] += (gy[j] * pg.data[j] - xh * m) * inv[i];
                           }
                         }
                       }
                     },
                     "rms_norm");
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_matrix("l2_normalize_rows", x);
  const std::size_t t = x.rows(), d = x.cols();
  std::vector<double> out(t * d), norm(t);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < t; ++i) {
    double ss = eps * eps;
    for (std::size_t j = 0; j < d; ++j) ss += xd[i * d + j] * xd[i * d + j];
    norm[i] = std::sqrt(ss);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xd[i * d + j] / norm[i];
  }
  return make_result(x.shape(), std::move(out), {x},
                     [t, d, norm = std::move(norm)](Node& self) {
                       Node& px = *self.parents[0];
                       for (std::size_t i = 0; i < t; ++i) {
                         const double* y = self.data.data() + i * d;
                         const double* g = self.grad.data() + i * d;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                         for (std::size_t j = 0; j < d; ++j) px.grad[i * d + j] += (g[j] - y[j] * dot) / norm[i];
                       }
                     },
                     "l2_normalize_rows");
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix("softmax_rows", x);
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, xd[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += out[i * c + j] = std::exp(xd[i * c + j] - m);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x},
                     [r, c](Node& self) {
                       Node& px = *self.parents[0];
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.data.data() + i * c;
                         const double* g = self.grad.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
                         for (std::size_t j = 0; j < c; ++j) px.grad[i * c + j] += y[j] * (g[j] - dot);
                       }
                     },
                     "softmax_rows");
}

Tensor masked_logsumexp_rows(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  require_matrix("masked_logsumexp_rows", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (mask.size() != r * c) throw std::invalid_argument("masked_logsumexp_rows: mask size mismatch");
  std::vector<double> out(r);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask[i * c + j]) m = std::max(m, xd[i * c + j]);
    if (!std::isfinite(m)) throw std::invalid_argument("masked_logsumexp_rows: empty or non-finite row");
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (mask[i * c + j]) z += std::exp(xd[i * c + j] - m);
    out[i] = m + std::log(z);
  }
  return make_result({r}, std::move(out), {x},
                     [r, c, mask](Node& self) {
                       Node& px = *self.parents[0];
                       for (std::size_t i = 0; i < r; ++i) {
                         const double g = self.grad[i];
                         if (g == 0.0) continue;
                         for (std::size_t j = 0; j < c; ++j) {
                           if (mask[i * c + j]) px.grad[i * c + j] += g * std::exp(px.data[i * c + j] - self.data[i]);
                         }
                       }
                     },
                     "masked_logsumexp_rows");
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor* bias) {
  require_matrix("conv1d", x);
  if (kernel.ndim() != 3 || kernel.dim(1) != x.cols()) shape_error("conv1d", x, kernel);
  const std::size_t k = kernel.dim(0), din = kernel.dim(1), dout = kernel.dim(2), t = x.rows();
  if (k % 2 == 0) {
    throw std::invalid_argument("conv1d: same padding needs an odd kernel width, got " + std::to_string(k));
  }
  if (bias && (bias->ndim() != 1 || bias->dim(0) != dout)) shape_error("conv1d", kernel, *bias);
  const std::size_t pad = (k - 1) / 2;
  std::vector<double> out(t * dout, 0.0);
  const auto& xd = x.data();
  const auto& wd = kernel.data();
  for (std::size_t ti = 0; ti < t; ++ti) {
    double* orow = out.data() + ti * dout;
    if (bias) {
      for (std::size_t o = 0; o < dout; ++o) orow[o] = bias->data()[o];
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(ti + kk) - static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      for (std::size_t i = 0; i < din; ++i) {
        const double xv = xd[static_cast<std::size_t>(src) * din + i];
        const double* wrow = wd.data() + (kk * din + i) * dout;
        for (std::size_t o = 0; o < dout; ++o) orow[o] += xv * wrow[o];
      }
    }
  }
  std::vector<Tensor> parents{x, kernel};
  if (bias) parents.push_back(*bias);
  return make_result({t, dout}, std::move(out), std::move(parents),
                     [t, k, din, dout, pad](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       for (std::size_t ti = 0; ti < t; ++ti) {
                         const double* g = self.grad.data() + ti * dout;
                         if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                           for (std::size_t o = 0; o < dout; ++o) self.parents[2]->grad[o] += g[o];
                         }
                         for (std::size_t kk = 0; kk < k; ++kk) {
                           const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(ti + kk) - static_cast<std::ptrdiff_t>(pad);
                           if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
                           const std::size_t s = static_cast<std::size_t>(src);
                           for (std::size_t i = 0; i < din; ++i) {
                             const std::size_t woff = (kk * din + i) * dout;
                             double acc = 0.0;
                             for (std::size_t o = 0; o < dout; ++o) {
                               acc += g[o] * pw.data[woff + o];
                               if (pw.requires_grad) pw.grad[woff + o] += g[o] * px.data[s * din + i];
                             }
                             if (px.requires_grad) px.grad[s * din + i] += acc;
                           }
                         }
                       }
                     },
                     "conv1d");
}

Tensor causal_depthwise_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_matrix("causal_depthwise_conv1d", x);
  require_matrix("causal_depthwise_conv1d", kernel);
  const std::size_t t = x.rows(), e = x.cols(), k = kernel.rows();
  if (kernel.cols() != e || bias.numel() != e) shape_error("causal_depthwise_conv1d", x, kernel);
  std::vector<double> out(t * e);
  const auto& xd = x.data();
  const auto& wd = kernel.data();
  for (std::size_t ti = 0; ti < t; ++ti) {
    for (std::size_t c = 0; c < e; ++c) {
      double acc = bias.data()[c];
      for (std::size_t kk = 0; kk < k; ++kk) {
        if (ti + kk + 1 < k) continue;
        acc += xd[(ti + kk + 1 - k) * e + c] * wd[kk * e + c];
      }
      out[ti * e + c] = acc;
    }
  }
  return make_result({t, e}, std::move(out), {x, kernel, bias},
                     [t, e, k](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       Node& pb = *self.parents[2];
                       for (std::size_t ti = 0; ti < t; ++ti) {
                         for (std::size_t c = 0; c < e; ++c) {
                           const double g = self.grad[ti * e + c];
                           if (pb.requires_grad) pb.grad[c] += g;
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             if (ti + kk + 1 < k) continue;
                             const std::size_t s = (ti + kk + 1 - k) * e + c;
                             if (px.requires_grad) px.grad[s] += g * pw.data[kk * e + c];
                             if (pw.requires_grad) pw.grad[kk * e + c] += g * px.data[s];
                           }
                         }
                       }
                     },
                     "causal_depthwise_conv1d");
}

Tensor window_pool(const Tensor& x, std::size_t stride, PoolMode mode) {
  require_matrix("window_pool", x);
  if (stride == 0) throw std::invalid_argument("window_pool: stride must be positive");
  const std::size_t l = x.rows(), d = x.cols();
  if (l == 0) throw std::invalid_argument("window_pool: empty input");
  const std::size_t m = (l + stride - 1) / stride;
  std::vector<double> out(m * d);
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? m * d : 0);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t b = i * stride, e = std::min(l, b + stride);
    for (std::size_t c = 0; c < d; ++c) {
      if (mode == PoolMode::Mean) {
        double acc = 0.0;
        for (std::size_t t = b; t < e; ++t) acc += xd[t * d + c];
        out[i * d + c] = acc / static_cast<double>(e - b);
      } else {
        std::size_t best = b;
        for (std::size_t t = b + 1; t < e; ++t)
          if (xd[t * d + c] > xd[best * d + c]) best = t;
        out[i * d + c] = xd[best * d + c];
        argmax[i * d + c] = best;
      }
    }
  }
  return make_result({m, d}, std::move(out), {x},
                     [l, d, m, stride, mode, argmax = std::move(argmax)](Node& self) {
                       Node& px = *self.parents[0];
                       for (std::size_t i = 0; i < m; ++i) {
                         const std::size_t b = i * stride, e = std::min(l, b + stride);
                         for (std::size_t c = 0; c < d; ++c) {
                           const double g = self.grad[i * d + c];
                           if (mode == PoolMode::Mean) {
                             for (std::size_t t = b; t < e; ++t) px.grad[t * d + c] += g / static_cast<double>(e - b);
                           } else {
                             px.grad[argmax[i * d + c] * d + c] += g;
                           }
                         }
                       }
                     },
                     "window_pool");
}

std::vector<std::pair<std::size_t, std::size_t>> full_ranges(std::size_t tq, std::size_t tk) {
  return std::vector<std::pair<std::size_t, std::size_t>>(tq, {0, tk});
}

std::vector<std::pair<std::size_t, std::size_t>> window_ranges(std::size_t t, std::size_t half) {
  std::vector<std::pair<std::size_t, std::size_t>> r(t);
  for (std::size_t i = 0; i < t; ++i) r[i] = {i >= half ? i - half : 0, std::min(t, i + half + 1)};
  return r;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec) {
  require_matrix("attention", q);
  require_matrix("attention", k);
  require_matrix("attention", v);
  const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols(), h = spec.n_heads;
  if (k.cols() != d || v.cols() != d || v.rows() != tk) shape_error("attention", q, k);
  if (h == 0 || d % h != 0) {
    throw std::invalid_argument("attention: " + std::to_string(h) + " heads do not divide width " +
                                std::to_string(d));
  }
  if (spec.ranges.size() != tq) throw std::invalid_argument("attention: one key range per query required");
  const std::size_t w = 2 * spec.half_window + 1;
  const bool has_bias = spec.rel_bias.has_value();
  if (has_bias) {
    const auto& rb = *spec.rel_bias;
    if (rb.ndim() != 2 || rb.dim(0) != h || rb.dim(1) != w) {
      throw std::invalid_argument("attention: relative bias must be [heads, window], got " + shape_str(rb.shape()));
    }
  }
  const std::size_t dh = d / h;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // Probabilities laid out per (query, head) with the query's range width.
  std::vector<std::size_t> offset(tq + 1, 0);
  for (std::size_t i = 0; i < tq; ++i) {
    auto [lo, hi] = spec.ranges[i];
    if (lo >= hi || hi > tk) throw std::invalid_argument("attention: empty or out-of-range key window");
    if (has_bias && (lo + spec.half_window < i || hi > i + spec.half_window + 1)) {
      throw std::invalid_argument("attention: key range exceeds relative-bias window");
    }
    offset[i + 1] = offset[i] + (hi - lo) * h;
  }
  std::vector<double> probs(offset[tq]);
  std::vector<double> out(tq * d, 0.0);
  const auto& qd = q.data();
  const auto& kd = k.data();
  const auto& vd = v.data();
  const double* bd = has_bias ? spec.rel_bias->data().data() : nullptr;
  for (std::size_t i = 0; i < tq; ++i) {
    auto [lo, hi] = spec.ranges[i];
    const std::size_t n = hi - lo;
    for (std::size_t hd = 0; hd < h; ++hd) {
      double* p = probs.data() + offset[i] + hd * n;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = lo; j < hi; ++j) {
        double s = 0.0;
        for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) s += qd[i * d + c] * kd[j * d + c];
        s *= sc;
        if (bd) s += bd[hd * w + (j + spec.half_window - i)];
        p[j - lo] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += p[j] = std::exp(p[j] - mx);
      for (std::size_t j = 0; j < n; ++j) p[j] /= z;
      for (std::size_t j = lo; j < hi; ++j) {
        const double pj = p[j - lo];
        for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) out[i * d + c] += pj * vd[j * d + c];
      }
    }
  }

  std::vector<Tensor> parents{q, k, v};
  if (has_bias) parents.push_back(*spec.rel_bias);
  return make_result(
      {tq, d}, std::move(out), std::move(parents),
      [tq, d, h, dh, sc, w, half = spec.half_window, ranges = spec.ranges, offset = std::move(offset),
       probs = std::move(probs)](Node& self) {
        Node& pq = *self.parents[0];
        Node& pk = *self.parents[1];
        Node& pv = *self.parents[2];
        Node* pb = self.parents.size() > 3 ? self.parents[3].get() : nullptr;
        std::vector<double> gs;
        for (std::size_t i = 0; i < tq; ++i) {
          auto [lo, hi] = ranges[i];
          const std::size_t n = hi - lo;
          gs.assign(n, 0.0);
          const double* go = self.grad.data() + i * d;
          for (std::size_t hd = 0; hd < h; ++hd) {
            const double* p = probs.data() + offset[i] + hd * n;
            double dot = 0.0;
            for (std::size_t j = lo; j < hi; ++j) {
              double gp = 0.0;
              for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) {
                gp += go[c] * pv.data[j * d + c];
                if (pv.requires_grad) pv.grad[j * d + c] += p[j - lo] * go[c];
              }
              gs[j - lo] = gp;
              dot += gp * p[j - lo];
            }
            for (std::size_t j = lo; j < hi; ++j) {
              const double g = p[j - lo] * (gs[j - lo] - dot);
              if (pb && pb->requires_grad) pb->grad[hd * w + (j + half - i)] += g;
              for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) {
                if (pq.requires_grad) pq.grad[i * d + c] += sc * g * pk.data[j * d + c];
                if (pk.requires_grad) pk.grad[j * d + c] += sc * g * pq.data[i * d + c];
              }
            }
          }
        }
      },
      "attention");
}

}  // namespace hg
