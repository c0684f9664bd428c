#pragma once

#include "gtanet/skeleton.hpp"
#include "gtanet/tensor.hpp"

#include <vector>

namespace gtanet {

enum class Activation { identity, relu };

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    BatchNormStats stats;

    Tensor operator()(const Tensor& x, Mode mode) { return batchnorm1d(x, gamma, beta, stats, mode); }
};

struct GcnLayerParams {
    Tensor weight;  // [C_in, C_out]
    Activation activation = Activation::relu;
};

// Each layer: A_hat X W, batch norm over the flattened T x N axis, ReLU on
// all but the last layer.
struct GcnStreamParams {
    std::vector<Tensor> weights;
    std::vector<BatchNormLayer> norms;
};

// Per-node affine map used in place of a disabled stream.
struct NodeProjection {
    Tensor weight;  // [C_in, C_out]
    Tensor bias;    // [C_out]
};

// sigma(A_hat H W) for a single frame H [N, C_in].
Tensor gcn_layer(const Tensor& h, const Matrix& a_hat, const GcnLayerParams& params);
// Same, applied independently to every frame of x [T, N, C_in].
Tensor gcn_layer_seq(const Tensor& x, const Matrix& a_hat, const GcnLayerParams& params);

Tensor run_gcn_stream(const Tensor& x, const Matrix& a_hat, GcnStreamParams& params, Mode mode);

// seq2d [T, J, D] -> [T, J-1, 2] bone vectors of the coordinate channels.
Tensor bone_sequence(const Tensor& seq2d, const SkeletonTopology& topo);

Tensor joint_stream(const Tensor& seq2d, const GraphOperator& joint_graph, GcnStreamParams& params, Mode mode);
Tensor bone_stream(const Tensor& seq2d, const SkeletonTopology& topo, const GraphOperator& bone_graph,
                   GcnStreamParams& params, Mode mode);

Tensor project_nodes(const Tensor& x, const NodeProjection& proj);

// Routes each bone feature to its child joint (root gets zeros), concatenates
// with the joint features and projects back to C channels.
// jout [T, J, C], bout [T, J-1, C], w_fuse [2C, C] -> [T, J, C].
Tensor fuse_streams(const Tensor& jout, const Tensor& bout, const SkeletonTopology& topo, const Tensor& w_fuse);

}  // namespace gtanet
