#include "gtanet/gcn.hpp"

namespace gtanet {

namespace {

Tensor activate(const Tensor& x, Activation a) { return a == Activation::relu ? relu(x) : x; }

}  // namespace

Tensor gcn_layer(const Tensor& h, const Matrix& a_hat, const GcnLayerParams& params) {
    if (h.dim() != 2 || h.size(0) != a_hat.cols || a_hat.rows != a_hat.cols) {
        throw ShapeError("gcn_layer: features " + shape_to_string(h.shape()) + " vs graph of " +
                         std::to_string(a_hat.rows) + " nodes");
    }
    const auto x = reshape(h, {1, h.size(0), h.size(1)});
    const auto y = gcn_layer_seq(x, a_hat, params);
    return reshape(y, {y.size(1), y.size(2)});
}

Tensor gcn_layer_seq(const Tensor& x, const Matrix& a_hat, const GcnLayerParams& params) {
    if (x.dim() != 3 || x.size(1) != a_hat.cols) {
        throw ShapeError("gcn_layer_seq: features " + shape_to_string(x.shape()) + " vs graph of " +
                         std::to_string(a_hat.cols) + " nodes");
    }
    return activate(mix_nodes(a_hat, linear(x, params.weight)), params.activation);
}

Tensor run_gcn_stream(const Tensor& x, const Matrix& a_hat, GcnStreamParams& params, Mode mode) {
    if (params.weights.size() != params.norms.size() || params.weights.empty()) {
        throw std::invalid_argument("run_gcn_stream: malformed stream parameters");
    }
    Tensor h = x;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        h = gcn_layer_seq(h, a_hat, {params.weights[l], Activation::identity});
        h = params.norms[l](h, mode);
        if (l + 1 < params.weights.size()) h = relu(h);
    }
    return h;
}

Tensor bone_sequence(const Tensor& seq2d, const SkeletonTopology& topo) {
    if (seq2d.dim() != 3 || seq2d.size(1) != topo.joint_count() || seq2d.size(2) < 2) {
        throw ShapeError("bone_sequence: input " + shape_to_string(seq2d.shape()) + " vs topology of " +
                         std::to_string(topo.joint_count()) + " joints");
    }
    Tensor coords = seq2d;
    if (seq2d.size(2) != 2) {
        const std::size_t d = seq2d.size(2);
        std::vector<double> select(d * 2, 0.0);
        select[0 * 2 + 0] = 1.0;
        select[1 * 2 + 1] = 1.0;
        coords = linear(seq2d, Tensor::from({d, 2}, std::move(select)));
    }
    return mix_nodes(bone_operator(topo), coords);
}

Tensor joint_stream(const Tensor& seq2d, const GraphOperator& joint_graph, GcnStreamParams& params, Mode mode) {
    return run_gcn_stream(seq2d, joint_graph.normalized, params, mode);
}

Tensor bone_stream(const Tensor& seq2d, const SkeletonTopology& topo, const GraphOperator& bone_graph,
                   GcnStreamParams& params, Mode mode) {
    return run_gcn_stream(bone_sequence(seq2d, topo), bone_graph.normalized, params, mode);
}

Tensor project_nodes(const Tensor& x, const NodeProjection& proj) {
    return add_bias(linear(x, proj.weight), proj.bias);
}

Tensor fuse_streams(const Tensor& jout, const Tensor& bout, const SkeletonTopology& topo, const Tensor& w_fuse) {
    if (jout.dim() != 3 || bout.dim() != 3 || jout.size(0) != bout.size(0) || jout.size(2) != bout.size(2)) {
        throw ShapeError("fuse_streams: joint " + shape_to_string(jout.shape()) + " vs bone " +
                         shape_to_string(bout.shape()));
    }
    if (jout.size(1) != topo.joint_count() || bout.size(1) != topo.bone_count()) {
        throw ShapeError("fuse_streams: stream node counts do not match the topology");
    }
    const Tensor routed = mix_nodes(bone_to_child_operator(topo), bout);
    return linear(concat_last(jout, routed), w_fuse);
}

}  // namespace gtanet
