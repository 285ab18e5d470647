#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "hg/tensor.hpp"

// Differentiable primitives. Every function records one tape node.
//
// Broadcasting is limited to the right operand matching a trailing suffix of
// the left operand's shape, or being a single element. Anything else needs an
// explicit reshape.
namespace hg {

// Elementwise arithmetic with trailing/scalar broadcast of the smaller side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
// log(sigmoid(x)) computed without overflow.
Tensor log_sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// [M,K] x [N,K]^T -> [M,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x [T,I] * w [I,O] (+ bias [O])
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [T,D] -> [D]
Tensor sum_rows(const Tensor& a);
Tensor mean_rows(const Tensor& a);
// [T,D] -> [T]
Tensor sum_cols(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);
// Flat element gather, output shape [idx.size()].
Tensor gather(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reverse_rows(const Tensor& a);
// Stacks scalars (or single-element tensors) into a vector [n].
Tensor stack_scalars(const std::vector<Tensor>& parts);

// out[t,d] = x[t,d] / sqrt(mean_d(x[t,.]^2) + eps) * gain[d]
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
// Each row divided by sqrt(|row|^2 + eps^2).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-8);
Tensor softmax_rows(const Tensor& x);
// out[r] = log sum_{c : mask[r*C+c]} exp(x[r,c]); every row needs one set bit.
Tensor masked_logsumexp_rows(const Tensor& x, const std::vector<std::uint8_t>& mask);

// Cross-correlation along time with zero "same" padding.
// x [T,Din], kernel [K,Din,Dout] with K odd, bias [Dout] optional.
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor* bias = nullptr);
// Per-channel causal convolution: out[t,e] = sum_k x[t-K+1+k, e] * kernel[k,e] + bias[e].
Tensor causal_depthwise_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

enum class PoolMode { Mean, Max };
// Pools consecutive windows of `stride` rows; the last window may be shorter.
// [L,D] -> [ceil(L/stride), D]
Tensor window_pool(const Tensor& x, std::size_t stride, PoolMode mode);

struct AttentionSpec {
  std::size_t n_heads = 1;
  // Visible key range [first, second) per query row.
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  // Optional per-head relative position bias [n_heads, 2*half_window+1],
  // indexed by (key - query + half_window).
  std::optional<Tensor> rel_bias;
  std::size_t half_window = 0;
};

// Multi-head scaled dot-product attention with per-query key ranges.
// q [Tq,D], k/v [Tk,D]; head h owns columns [h*D/H, (h+1)*D/H).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec);

std::vector<std::pair<std::size_t, std::size_t>> full_ranges(std::size_t tq, std::size_t tk);
std::vector<std::pair<std::size_t, std::size_t>> window_ranges(std::size_t t, std::size_t half);

}  // namespace hg
