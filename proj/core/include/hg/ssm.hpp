#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "hg/params.hpp"
#include "hg/tensor.hpp"

namespace hg {

// Classical discrete SSM with fixed matrices:
//   h_k = A h_{k-1} + B x_k,  y_k = C h_k + D x_k
struct FixedSsmParams {
  Tensor a_bar;  // [N,N]
  Tensor b_bar;  // [N,Din]
  Tensor c_bar;  // [Dout,N]
  Tensor d_bar;  // [Dout,Din]
};

// Random fixed SSM rescaled so the transition's spectral radius is `radius`.
FixedSsmParams init_fixed_ssm(std::size_t n, std::size_t d_in, std::size_t d_out, double radius,
                              std::mt19937_64& rng);
double spectral_radius(const Tensor& square_matrix);

// x [T,Din] -> [T,Dout]; h0 [N] defaults to zeros.
Tensor ssm_scan_fixed(const Tensor& x, const FixedSsmParams& p, const Tensor* h0 = nullptr);

enum class Discretization {
  // h_k = dt_k * (A h_{k-1} + B_k x_k)
  Direct,
  // h_k = exp(dt_k A) h_{k-1} + dt_k B_k x_k
  ZeroOrderHold,
};

struct SelectiveConfig {
  std::size_t d_in = 16;
  std::size_t d_out = 16;
  std::size_t d_state = 8;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  Discretization discretization = Discretization::Direct;

  std::size_t inner() const { return expand * d_in; }
};

// Token-conditioned scan parameters. With E = expand * d_in:
//   xt = silu(causal_conv(x W_in)),  B_k = xt_k W_B,  C_k = xt_k W_C,
//   dt_k = softplus(xt_k w_dt + b_dt),  A = -exp(a_log)
struct SelectiveParams {
  SelectiveConfig cfg;
  Tensor in_proj;   // [Din,E]
  Tensor conv_w;    // [d_conv,E]
  Tensor conv_b;    // [E]
  Tensor proj_b;    // [E,N]
  Tensor proj_c;    // [E,N]
  Tensor proj_dt;   // [E,1]
  Tensor dt_bias;   // [1]
  Tensor a_log;     // [N]
  Tensor out_proj;  // [E,Dout]
};

SelectiveParams init_selective(ParamStore& store, const std::string& prefix, const SelectiveConfig& cfg,
                               std::mt19937_64& rng);

// Diagonal-A selective recurrence over precomputed token terms, with a
// hand-written reverse pass. xt [T,E], b/c [T,N], dt [T,1], a [N] -> [T,E]:
//   h_k[e,n] = a_k[n] h_{k-1}[e,n] + b_k[n] xt_k[e],  y_k[e] = sum_n C_k[n] h_k[e,n]
// where (a_k, b_k) = (dt_k A, dt_k B_k) for Direct and (exp(dt_k A), dt_k B_k) for ZOH.
Tensor selective_scan_core(const Tensor& xt, const Tensor& b, const Tensor& c, const Tensor& dt,
                           const Tensor& a, Discretization disc);

// x [T,Din] -> [T,Dout]. T == 0 yields an empty [0,Dout] tensor.
Tensor selective_scan(const Tensor& x, const SelectiveParams& p);

struct BidiScanParams {
  SelectiveParams fwd;
  // Absent for the forward-only ablation.
  std::optional<SelectiveParams> bwd;
  Tensor diag;  // [D]
};

BidiScanParams init_bidi(ParamStore& store, const std::string& prefix, const SelectiveConfig& cfg,
                         bool bidirectional, std::mt19937_64& rng);

// fwd(x) + reverse(bwd(reverse(x))) + diag * x
Tensor bidi_scan(const Tensor& x, const BidiScanParams& p);

// Multiply-add count of one selective_scan forward pass over T tokens.
// Pointwise nonlinearities (silu, softplus, exp) are not counted.
//   per token: Din*E (in proj) + E*K (conv) + 2*E*N (B,C proj) + E (dt proj)
//              + 2*N (dt*A, dt*B) + 2*E*N (state update) + E*N (readout)
//              + E*Dout (out proj)
std::uint64_t scan_flops(std::size_t t, const SelectiveConfig& cfg);
// Two scans plus the diagonal term (one multiply-add per channel).
std::uint64_t bidi_flops(std::size_t t, const SelectiveConfig& cfg, bool bidirectional);

}  // namespace hg
