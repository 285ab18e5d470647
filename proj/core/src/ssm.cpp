#include "hg/ssm.hpp"

#include "hg/config.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hg/ops.hpp"

namespace hg {

double spectral_radius(const Tensor& m) {
  if (m.ndim() != 2 || m.rows() != m.cols()) {
    throw std::invalid_argument("spectral_radius: expected a square matrix, got " + shape_str(m.shape()));
  }
  const auto n = static_cast<Eigen::Index>(m.rows());
  Eigen::MatrixXd mat(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) mat(i, j) = m.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  Eigen::EigenSolver<Eigen::MatrixXd> solver(mat, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

FixedSsmParams init_fixed_ssm(std::size_t n, std::size_t d_in, std::size_t d_out, double radius,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  auto random = [&](Shape shape, double s) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = s * dist(rng);
    return Tensor::from(std::move(shape), std::move(v));
  };
  FixedSsmParams p;
  p.a_bar = random({n, n}, 1.0);
  const double r = spectral_radius(p.a_bar);
  if (r > 0) {
    for (auto& x : p.a_bar.mutable_data()) x *= radius / r;
  }
  p.b_bar = random({n, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)));
  p.c_bar = random({d_out, n}, 1.0 / std::sqrt(static_cast<double>(n)));
  p.d_bar = random({d_out, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)));
  return p;
}

Tensor ssm_scan_fixed(const Tensor& x, const FixedSsmParams& p, const Tensor* h0) {
  const std::size_t t = x.rows(), d_in = x.cols(), n = p.a_bar.rows();
  if (p.a_bar.cols() != n || p.b_bar.rows() != n || p.b_bar.cols() != d_in || p.c_bar.cols() != n ||
      p.d_bar.cols() != d_in || p.d_bar.rows() != p.c_bar.rows()) {
    std::ostringstream msg;
    msg << "ssm_scan_fixed: inconsistent shapes x" << shape_str(x.shape()) << " A" << shape_str(p.a_bar.shape())
        << " B" << shape_str(p.b_bar.shape()) << " C" << shape_str(p.c_bar.shape()) << " D"
        << shape_str(p.d_bar.shape());
    throw std::invalid_argument(msg.str());
  }
  // Row-vector convention: h [1,N], h <- h A^T + x B^T.
  Tensor h = h0 ? reshape(*h0, {1, n}) : Tensor::zeros({1, n});
  if (t == 0) return Tensor::zeros({0, p.c_bar.rows()});
  std::vector<Tensor> ys;
  ys.reserve(t);
  for (std::size_t k = 0; k < t; ++k) {
    Tensor xk = slice_rows(x, k, k + 1);
    h = add(matmul_nt(h, p.a_bar), matmul_nt(xk, p.b_bar));
    for (double v : h.data()) {
      if (!std::isfinite(v)) throw NumericError("ssm_scan_fixed: non-finite state at step " + std::to_string(k));
    }
    ys.push_back(add(matmul_nt(h, p.c_bar), matmul_nt(xk, p.d_bar)));
  }
  return concat_rows(ys);
}

SelectiveParams init_selective(ParamStore& store, const std::string& prefix, const SelectiveConfig& cfg,
                               std::mt19937_64& rng) {
  if (cfg.d_conv < 1) throw std::invalid_argument("selective scan: d_conv must be >= 1");
  if (cfg.d_state < 1 || cfg.expand < 1 || cfg.d_in < 1 || cfg.d_out < 1) {
    throw std::invalid_argument("selective scan: dimensions must be positive");
  }
  const std::size_t e = cfg.inner(), n = cfg.d_state;
  SelectiveParams p;
  p.cfg = cfg;
  p.in_proj = store.add_fan_in(prefix + ".in_proj", {cfg.d_in, e}, cfg.d_in, rng);
  p.conv_w = store.add_fan_in(prefix + ".conv_w", {cfg.d_conv, e}, cfg.d_conv, rng);
  p.conv_b = store.add_zeros(prefix + ".conv_b", {e});
  p.proj_b = store.add_fan_in(prefix + ".proj_b", {e, n}, e, rng);
  p.proj_c = store.add_fan_in(prefix + ".proj_c", {e, n}, e, rng);
  p.proj_dt = store.add_fan_in(prefix + ".proj_dt", {e, 1}, e, rng);
  // softplus(b) = 0.5 at init.
  p.dt_bias = store.add_constant(prefix + ".dt_bias", {1}, std::log(std::expm1(0.5)));
  // A log-uniform in [-1, -0.01].
  std::uniform_real_distribution<double> u(std::log(0.01), 0.0);
  std::vector<double> a_log(n);
  for (auto& v : a_log) v = u(rng);
  p.a_log = store.add(prefix + ".a_log", Tensor::from({n}, std::move(a_log)));
  p.out_proj = store.add_fan_in(prefix + ".out_proj", {e, cfg.d_out}, e, rng);
  return p;
}

Tensor selective_scan_core(const Tensor& xt, const Tensor& b, const Tensor& c, const Tensor& dt,
                           const Tensor& a, Discretization disc) {
  const std::size_t t = xt.rows(), e = xt.cols(), n = a.numel();
  if (b.rows() != t || c.rows() != t || b.cols() != n || c.cols() != n || dt.numel() != t) {
    throw std::invalid_argument("selective_scan_core: inconsistent shapes xt" + shape_str(xt.shape()) + " B" +
                                shape_str(b.shape()) + " C" + shape_str(c.shape()) + " dt" +
                                shape_str(dt.shape()) + " A" + shape_str(a.shape()));
  }
  const bool zoh = disc == Discretization::ZeroOrderHold;
  const auto& xd = xt.data();
  const auto& bd = b.data();
  const auto& cd = c.data();
  const auto& dd = dt.data();
  const auto& ad = a.data();
  const bool keep = grad_enabled();

  std::vector<double> out(t * e, 0.0);
  // States h_k for all k, needed by the reverse pass.
  std::vector<double> states(keep ? t * e * n : 0);
  std::vector<double> h(e * n, 0.0);
  std::vector<double> ak(n), bk(n);
  for (std::size_t k = 0; k < t; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      ak[j] = zoh ? std::exp(dd[k] * ad[j]) : dd[k] * ad[j];
      bk[j] = dd[k] * bd[k * n + j];
    }
    const double* ck = cd.data() + k * n;
    for (std::size_t ch = 0; ch < e; ++ch) {
      const double xv = xd[k * e + ch];
      double* hr = h.data() + ch * n;
      double y = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        hr[j] = ak[j] * hr[j] + bk[j] * xv;
        y += ck[j] * hr[j];
      }
      out[k * e + ch] = y;
    }
    if (keep) std::copy(h.begin(), h.end(), states.begin() + k * e * n);
  }

  return make_result(
      {t, e}, std::move(out), {xt, b, c, dt, a},
      [t, e, n, zoh, states = std::move(states)](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        Node& pc = *self.parents[2];
        Node& pdt = *self.parents[3];
        Node& pa = *self.parents[4];
        std::vector<double> g(e * n, 0.0);  // dL/dh_k, carried backwards
        std::vector<double> ak(n), bk(n), ga(n), gb(n);
        std::vector<double> a_next(n, 0.0);
        for (std::size_t kk = t; kk-- > 0;) {
          const double dtk = pdt.data[kk];
          for (std::size_t j = 0; j < n; ++j) {
            ak[j] = zoh ? std::exp(dtk * pa.data[j]) : dtk * pa.data[j];
            bk[j] = dtk * pb.data[kk * n + j];
          }
          std::fill(ga.begin(), ga.end(), 0.0);
          std::fill(gb.begin(), gb.end(), 0.0);
          const double* hk = states.data() + kk * e * n;
          const double* hprev = kk > 0 ? states.data() + (kk - 1) * e * n : nullptr;
          const double* ck = pc.data.data() + kk * n;
          for (std::size_t ch = 0; ch < e; ++ch) {
            const double gy = self.grad[kk * e + ch];
            const double xv = px.data[kk * e + ch];
            double* gr = g.data() + ch * n;
            double gx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              // Contribution from the readout at step k, plus the carry from step k+1.
              gr[j] = gr[j] * a_next[j] + ck[j] * gy;
              if (pc.requires_grad) pc.grad[kk * n + j] += gy * hk[ch * n + j];
              if (hprev) ga[j] += gr[j] * hprev[ch * n + j];
              gb[j] += gr[j] * xv;
              gx += gr[j] * bk[j];
            }
            if (px.requires_grad) px.grad[kk * e + ch] += gx;
          }
          double gdt = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double av = pa.data[j];
            if (zoh) {
              gdt += ga[j] * ak[j] * av;
              if (pa.requires_grad) pa.grad[j] += ga[j] * ak[j] * dtk;
            } else {
              gdt += ga[j] * av;
              if (pa.requires_grad) pa.grad[j] += ga[j] * dtk;
            }
            gdt += gb[j] * pb.data[kk * n + j];
            if (pb.requires_grad) pb.grad[kk * n + j] += gb[j] * dtk;
          }
          if (pdt.requires_grad) pdt.grad[kk] += gdt;
          a_next = ak;
        }
      },
      "selective_scan");
}

Tensor selective_scan(const Tensor& x, const SelectiveParams& p) {
  if (x.ndim() != 2 || x.cols() != p.cfg.d_in) {
    throw std::invalid_argument("selective_scan: input shape " + shape_str(x.shape()) + " does not match d_in " +
                                std::to_string(p.cfg.d_in));
  }
  const std::size_t t = x.rows();
  if (t == 0) return Tensor::zeros({0, p.cfg.d_out});
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (std::isnan(x.data()[i])) {
      throw NumericError("selective_scan: NaN in input at token " + std::to_string(i / x.cols()));
    }
  }
  Tensor xt = silu(causal_depthwise_conv1d(matmul(x, p.in_proj), p.conv_w, p.conv_b));
  Tensor bk = matmul(xt, p.proj_b);
  Tensor ck = matmul(xt, p.proj_c);
  Tensor dt = softplus(add(matmul(xt, p.proj_dt), p.dt_bias));
  Tensor a = neg(exp(p.a_log));
  Tensor y = selective_scan_core(xt, bk, ck, dt, a, p.cfg.discretization);
  return matmul(y, p.out_proj);
}

BidiScanParams init_bidi(ParamStore& store, const std::string& prefix, const SelectiveConfig& cfg,
                         bool bidirectional, std::mt19937_64& rng) {
  if (cfg.d_in != cfg.d_out) throw std::invalid_argument("bidi scan requires d_in == d_out");
  BidiScanParams p;
  p.fwd = init_selective(store, prefix + ".fwd", cfg, rng);
  if (bidirectional) p.bwd = init_selective(store, prefix + ".bwd", cfg, rng);
  p.diag = store.add_constant(prefix + ".diag", {cfg.d_in}, 1.0);
  return p;
}

Tensor bidi_scan(const Tensor& x, const BidiScanParams& p) {
  const auto& f = p.fwd.cfg;
  if (p.diag.numel() != f.d_in || f.d_in != f.d_out) {
    throw std::invalid_argument("bidi_scan: diagonal width " + std::to_string(p.diag.numel()) +
                                " does not match scan width " + std::to_string(f.d_in));
  }
  if (p.bwd) {
    const auto& b = p.bwd->cfg;
    if (b.d_in != f.d_in || b.d_out != f.d_out || b.d_state != f.d_state) {
      throw std::invalid_argument("bidi_scan: forward and backward scans have different dimensions");
    }
  }
  Tensor out = add(selective_scan(x, p.fwd), mul(x, p.diag));
  if (p.bwd) out = add(out, reverse_rows(selective_scan(reverse_rows(x), *p.bwd)));
  return out;
}

std::uint64_t scan_flops(std::size_t t, const SelectiveConfig& cfg) {
  const std::uint64_t e = cfg.inner(), n = cfg.d_state;
  const std::uint64_t per_token =
      cfg.d_in * e + e * cfg.d_conv + 2 * e * n + e + 2 * n + 2 * e * n + e * n + e * cfg.d_out;
  return per_token * t;
}

std::uint64_t bidi_flops(std::size_t t, const SelectiveConfig& cfg, bool bidirectional) {
  return (bidirectional ? 2 : 1) * scan_flops(t, cfg) + static_cast<std::uint64_t>(t) * cfg.d_in;
}

}  // namespace hg
