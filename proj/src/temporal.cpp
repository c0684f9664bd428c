#include "gtanet/temporal.hpp"

namespace gtanet {

Tensor tcn_block(const Tensor& x, TcnBlockParams& params, Mode mode, Rng& rng) {
    if (x.dim() != 2 || params.conv_weight.dim() != 3 || params.conv_weight.size(1) != x.size(1) ||
        params.conv_weight.size(2) != x.size(1)) {
        throw ShapeError("tcn_block: input " + shape_to_string(x.shape()) + " vs conv weight " +
                         shape_to_string(params.conv_weight.shape()));
    }
    Tensor y = causal_dilated_conv1d(x, params.conv_weight, params.dilation);
    y = relu(params.norm(y, mode));
    y = dropout(y, params.dropout_rate, mode, rng);
    return add(x, y);
}

Tensor attention_tcn_block(const Tensor& x, TcnBlockParams& params, const AttentionParams& attention,
                           std::size_t window, Mode mode, Rng& rng, Tensor* weights) {
    if (x.dim() != 2 || params.conv_weight.dim() != 3 || params.conv_weight.size(1) != x.size(1) ||
        params.conv_weight.size(2) != x.size(1)) {
        throw ShapeError("attention_tcn_block: input " + shape_to_string(x.shape()) + " vs conv weight " +
                         shape_to_string(params.conv_weight.shape()));
    }
    Tensor y = causal_dilated_conv1d(x, params.conv_weight, params.dilation);
    y = temporal_attention(y, attention, window, weights);
    y = relu(params.norm(y, mode));
    y = dropout(y, params.dropout_rate, mode, rng);
    return add(x, y);
}

Tensor hidden_projection(const Tensor& x, const AttentionParams& params) {
    if (x.dim() < 1 || x.shape().back() != params.channels()) {
        throw ShapeError("hidden_projection: input " + shape_to_string(x.shape()) + " vs " +
                         std::to_string(params.channels()) + " channels");
    }
    return relu(add_bias(linear(x, params.w_h), params.b_h));
}

namespace {

Tensor as_batched(const Tensor& h) {
    if (h.dim() == 2) return reshape(h, {1, h.size(0), h.size(1)});
    if (h.dim() == 3) return h;
    throw ShapeError("attention: expected [N, C] or [B, N, C], got " + shape_to_string(h.shape()));
}

void check_heads(const AttentionParams& params) {
    if (params.heads == 0 || params.channels() % params.heads != 0) {
        throw std::invalid_argument("attention: channels must be divisible by heads");
    }
}

}  // namespace

Tensor attention_scores(const Tensor& h, const AttentionParams& params, std::size_t head) {
    check_heads(params);
    if (head >= params.heads) throw std::invalid_argument("attention_scores: head index out of range");
    if (h.dim() != 2) throw ShapeError("attention_scores: expected [N, C]");
    const auto hb = as_batched(h);
    const auto scores = multihead_scores(linear(hb, params.w_q), linear(hb, params.w_k), params.heads, {});
    const std::size_t n = h.size(0);
    const auto all = scores.data();
    std::vector<double> out(all.begin() + static_cast<std::ptrdiff_t>(head * n * n),
                            all.begin() + static_cast<std::ptrdiff_t>((head + 1) * n * n));
    return Tensor::from({n, n}, std::move(out));
}

Tensor attention_weights(const Tensor& h, const AttentionParams& params, const AttentionMask& mask) {
    check_heads(params);
    const auto hb = as_batched(h);
    if (hb.size(1) == 0) throw std::invalid_argument("attention: empty neighbourhood");
    const auto scores = multihead_scores(linear(hb, params.w_q), linear(hb, params.w_k), params.heads, mask);
    return masked_softmax(scores, mask);
}

Tensor attention_aggregate(const Tensor& h, const AttentionParams& params, const AttentionMask& mask, Tensor* weights) {
    const auto hb = as_batched(h);
    const auto alpha = attention_weights(hb, params, mask);
    if (weights) *weights = alpha;
    const auto out = multihead_mix(alpha, hb, params.heads);
    return h.dim() == 2 ? reshape(out, h.shape()) : out;
}

Tensor hierarchical_readout(const Tensor& h_prime, const ReadoutParams& params) {
    if (h_prime.dim() != 2 || h_prime.size(0) == 0) throw ShapeError("hierarchical_readout: expected [N, C], N >= 1");
    const auto pooled = reshape(sum_rows(h_prime), {1, h_prime.size(1)});
    const auto z = relu(matmul(pooled, params.w_z));
    return add_bias(reshape(z, {params.w_z.size(1)}), params.b_z);
}

Tensor temporal_attention(const Tensor& seq, const AttentionParams& params, std::size_t window, Tensor* weights) {
    if (seq.dim() != 2 || seq.size(0) == 0) throw ShapeError("temporal_attention: expected [T, C], T >= 1");
    const auto h = hidden_projection(seq, params);
    const auto mixed = attention_aggregate(h, params, AttentionMask{true, window}, weights);
    return add(seq, mixed);
}

Tensor spatial_attention(const Tensor& frames, const AttentionParams& params, Tensor* weights) {
    if ((frames.dim() != 2 && frames.dim() != 3) || frames.size(frames.dim() - 2) == 0) {
        throw ShapeError("spatial_attention: expected [J, C] or [T, J, C], J >= 1");
    }
    const auto h = hidden_projection(frames, params);
    const auto mixed = attention_aggregate(h, params, AttentionMask{}, weights);
    return add(frames, mixed);
}

}  // namespace gtanet
