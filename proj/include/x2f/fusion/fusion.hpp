#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "x2f/autodiff/params.hpp"
#include "x2f/autodiff/random.hpp"
#include "x2f/autodiff/tensor.hpp"

// Reliability-aware fusion and cross-attention. Grid inputs are (C, H, W);
// token inputs are (L, C) rows. Modality order is always (I, L, E).
namespace x2f::fusion {

struct FramePair {
  ad::Tensor t0;
  ad::Tensor t1;
};

// Global branch parameters under `prefix`: "tconv" (3x3, 2C -> C), "tlin"
// (1x1, C -> C), "sconv" (3x3 dilation 2, 4C -> C). Shared by I and L.
void init_global(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels);

// Scalar logit mean(T * S) for one modality m against the event frames.
ad::Tensor global_logit(const ad::ParamStore& ps, const std::string& prefix, const FramePair& zm,
                        const FramePair& ze);

// softmax over the (I, L) logits -> (2).
ad::Tensor reliability_global(const ad::ParamStore& ps, const std::string& prefix, const FramePair& zi,
                              const FramePair& zl, const FramePair& ze);

// (omega_I, omega_L) -> (omega_I, omega_L, 1).
ad::Tensor with_event_anchor(const ad::Tensor& omega);

// Depthwise 3x3 Laplacian with replicated borders; zero on constant fields.
ad::Tensor laplacian(const ad::Tensor& x);

// Local branch parameters: "grp" (grouped 1x1, 3C -> 3, 3 groups) and "out"
// (1x1, 6C + 3 -> 3).
void init_local(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels);

// Concatenated [Zi, Zl, Ze] grid -> (3, H, W) logits before the softmax.
ad::Tensor local_logits(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& zcat);

// softmax over modalities -> (3, H, W).
ad::Tensor reliability_local(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& zi,
                             const ad::Tensor& zl, const ad::Tensor& ze);

// Per-location normalized weights omega_m A_m / sum_n omega_n A_n, (L, 3).
// omega (3), a (L, 3). Throws NumericError if a denominator drops below 1e-12.
ad::Tensor fusion_weights(const ad::Tensor& omega, const ad::Tensor& a);

// sum_m w_m(x) Z_m(x) over rows (L, C).
ad::Tensor adaptive_fuse(const std::array<ad::Tensor, 3>& z, const ad::Tensor& omega, const ad::Tensor& a);

// Attention parameters: "q", "k", "v" (C -> C), "mlp1" (C -> 2C), "mlp2" (2C -> C).
void init_attention(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels);

// softmax(Q K^T / sqrt(d)) over keys, (L, T).
ad::Tensor attention_weights(const ad::Tensor& q, const ad::Tensor& k);

// F_out = MLP(softmax(Q K^T / sqrt d) V) + F_fused.
ad::Tensor cross_attention(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& fused,
                           const ad::Tensor& aux);

}  // namespace x2f::fusion
