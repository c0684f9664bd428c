#pragma once

#include "gtanet/gcn.hpp"
#include "gtanet/skeleton.hpp"
#include "gtanet/temporal.hpp"
#include "gtanet/tensor.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gtanet {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GtaNetConfig {
    std::size_t gcn_layers = 3;
    std::size_t gcn_channels = 128;
    std::size_t heads = 8;
    std::size_t kernel = 5;
    double dropout = 0.3;
    // Empty means default_dilations(target_receptive_field, kernel).
    std::vector<std::size_t> tcn_dilations;
    std::size_t target_receptive_field = 32;
    // Causal window of each temporal attention layer; 0 means target_receptive_field.
    std::size_t attention_window = 0;
    // Adds a per-joint confidence channel to the 2D input.
    bool use_confidence = false;
    bool use_joint_gcn = true;
    bool use_bone_gcn = true;
    bool use_attention = true;       // attention-augmented TCN stack
    bool use_hier_attention = true;  // spatial + temporal attention layers
    // Size of the optional sequence classification head (0 = none).
    std::size_t num_classes = 0;
    // The regression head predicts centimetres; outputs are reported in mm.
    double output_scale_mm = 10.0;
    std::uint64_t seed = 0;

    std::vector<std::size_t> dilations() const;
    std::size_t input_channels() const { return use_confidence ? 3 : 2; }
    std::size_t temporal_window() const { return attention_window == 0 ? target_receptive_field : attention_window; }

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static GtaNetConfig from_json(const nlohmann::json& j);

    bool operator==(const GtaNetConfig&) const = default;
};

/// 1 + sum over TCN blocks of (kernel - 1) * dilation. Attention layers are not counted.
std::size_t receptive_field(const GtaNetConfig& config);
/// Number of past frames (including the current one) that can influence an
/// output frame once the causal attention windows are included.
std::size_t temporal_span(const GtaNetConfig& config);
/// Shortest non-empty doubling sequence 1, 2, 4, ... whose receptive field reaches target_rf.
std::vector<std::size_t> default_dilations(std::size_t target_rf, std::size_t kernel = 5);

/// Applies ablation flags to a base config, rejecting the all-disabled variant.
GtaNetConfig apply_ablation(GtaNetConfig config, bool use_joint_gcn, bool use_bone_gcn, bool use_attention,
                            bool use_hier_attention);

struct AblationVariant {
    std::string name;
    GtaNetConfig config;
};
/// Full model plus the four single-component ablations.
std::vector<AblationVariant> ablation_variants(const GtaNetConfig& base);

/// All parameters are always allocated, including the stand-ins for disabled
/// components, so every ablation shares the full model's initialization.
class GtaNetModel {
public:
    GtaNetModel(GtaNetConfig config, SkeletonTopology topology);
    GtaNetModel(const GtaNetModel&) = delete;
    GtaNetModel& operator=(const GtaNetModel&) = delete;
    GtaNetModel(GtaNetModel&&) = default;
    GtaNetModel& operator=(GtaNetModel&&) = default;

    GtaNetModel clone() const;

    const GtaNetConfig& config() const { return config_; }
    const SkeletonTopology& topology() const { return topology_; }
    const GraphOperator& joint_graph() const { return joint_graph_; }
    const GraphOperator& bone_graph() const { return bone_graph_; }

    void for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each_norm(const std::function<void(const std::string&, BatchNormLayer&)>& fn);
    std::vector<std::pair<std::string, Tensor>> parameters();
    std::size_t parameter_count();
    Tensor parameter(const std::string& name);

    GcnStreamParams joint_gcn;
    GcnStreamParams bone_gcn;
    NodeProjection joint_proj;
    NodeProjection bone_proj;
    Tensor fuse_weight;
    AttentionParams spatial;
    NodeProjection temporal_in;
    std::vector<TcnBlockParams> tcn;
    std::vector<AttentionParams> temporal;
    ReadoutParams readout;
    NodeProjection classifier;
    NodeProjection head;

private:
    GtaNetConfig config_;
    SkeletonTopology topology_;
    GraphOperator joint_graph_;
    GraphOperator bone_graph_;
    Matrix root_relative_;

public:
    // I - 1 e_root^T: subtracts the root joint from every joint of a frame.
    const Matrix& root_relative_operator() const { return root_relative_; }
};

/// He (fan-in, normal) initialization; biases 0, batch-norm gamma 1 / beta 0.
GtaNetModel init_weights(const GtaNetConfig& config, const SkeletonTopology& topology, std::uint64_t seed);

struct ForwardTrace {
    std::vector<Tensor> spatial_weights;   // [T, H, J, J]
    std::vector<Tensor> temporal_weights;  // [1, H, T, T] per block
    Tensor features;                       // [T, C] before the regression head
};

/// seq2d [T, J, D] -> root-relative 3D pose [T, J, 3] in mm.
Tensor forward(GtaNetModel& model, const Tensor& seq2d, Mode mode, Rng& rng, ForwardTrace* trace = nullptr);

/// Readout of the final temporal features into a [C] summary vector.
Tensor sequence_summary(GtaNetModel& model, const Tensor& seq2d, Mode mode, Rng& rng);
/// Logits [1, num_classes] of the optional classification head.
Tensor classify(GtaNetModel& model, const Tensor& seq2d, Mode mode, Rng& rng);

// ---- Checkpoints -------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(GtaNetModel& model);
GtaNetModel deserialize_checkpoint(std::span<const std::uint8_t> bytes);
// Overwrites the parameters and running statistics of a model with the same config.
void load_checkpoint_into(GtaNetModel& model, std::span<const std::uint8_t> bytes);

void save_checkpoint(GtaNetModel& model, const std::filesystem::path& path);
GtaNetModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gtanet
