#pragma once

#include "gtanet/gcn.hpp"
#include "gtanet/tensor.hpp"

namespace gtanet {

struct TcnBlockParams {
    Tensor conv_weight;  // [k, C, C]
    std::size_t dilation = 1;
    BatchNormLayer norm;
    double dropout_rate = 0.3;
};

// Shared hidden projection (W_h, b_h) and per-head query/key maps. Head h
// owns output channels [h*d_k, (h+1)*d_k) of w_q and w_k, and reads the same
// slice of the hidden representation as its values.
struct AttentionParams {
    Tensor w_h;  // [C, C]
    Tensor b_h;  // [C]
    Tensor w_q;  // [C, C]
    Tensor w_k;  // [C, C]
    std::size_t heads = 8;

    std::size_t channels() const { return w_h.size(0); }
    std::size_t head_dim() const { return channels() / heads; }
};

struct ReadoutParams {
    Tensor w_z;  // [C, C_out]
    Tensor b_z;  // [C_out]
};

// x + dropout(relu(bn(causal_dilated_conv1d(x)))) for x [T, C].
Tensor tcn_block(const Tensor& x, TcnBlockParams& params, Mode mode, Rng& rng);

// Attention-augmented block: conv output attends over its causal window
// before normalization, x + dropout(relu(bn(attn(conv(x))))).
Tensor attention_tcn_block(const Tensor& x, TcnBlockParams& params, const AttentionParams& attention,
                           std::size_t window, Mode mode, Rng& rng, Tensor* weights = nullptr);

// relu(x W_h + b_h), row-wise over the last axis.
Tensor hidden_projection(const Tensor& x, const AttentionParams& params);

// Scaled dot-product scores of one head for h [N, C]; returns a detached [N, N].
Tensor attention_scores(const Tensor& h, const AttentionParams& params, std::size_t head);

// Softmax-normalized attention weights [B, H, N, N] for h [B, N, C].
Tensor attention_weights(const Tensor& h, const AttentionParams& params, const AttentionMask& mask);

// Weighted sum of neighbour hidden states per head, heads concatenated.
// h is [N, C] or [B, N, C]; the result has the same shape. When `weights`
// is non-null it receives the [B, H, N, N] attention weights.
Tensor attention_aggregate(const Tensor& h, const AttentionParams& params, const AttentionMask& mask,
                           Tensor* weights = nullptr);

// relu(sum_i h'_i W_z) + b_z, with the bias outside the ReLU.
Tensor hierarchical_readout(const Tensor& h_prime, const ReadoutParams& params);

// seq [T, C]: residual causal self-attention over the last `window` frames
// (0 = the whole past).
Tensor temporal_attention(const Tensor& seq, const AttentionParams& params, std::size_t window,
                          Tensor* weights = nullptr);

// frames [J, C] or [T, J, C]: residual attention across all joints of each frame.
Tensor spatial_attention(const Tensor& frames, const AttentionParams& params, Tensor* weights = nullptr);

}  // namespace gtanet
