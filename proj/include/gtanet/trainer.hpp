#pragma once

#include "gtanet/model.hpp"
#include "gtanet/pose_io.hpp"
#include "gtanet/tensor.hpp"

#include "json.hpp"

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gtanet {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AugmentConfig {
    bool rotate = true;
    double max_rotation_deg = 30.0;
    bool flip = true;
    double flip_probability = 0.5;
    bool noise = true;
    double noise_sigma = 0.005;  // normalized image units
    // Keypoints carry no intensity, so brightness adjustment leaves them unchanged.
    bool brightness = false;

    bool any() const { return rotate || flip || noise; }
    bool operator==(const AugmentConfig&) const = default;
};

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t plateau_patience = 5;
    std::size_t early_stop_patience = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double improvement_threshold = 1e-6;  // mm
    AugmentConfig augment;
    // Training samples are clips of this many frames (0 = whole sequences).
    std::size_t clip_frames = 0;
    std::size_t clip_stride = 0;  // 0 = clip_frames
    // Before each validation, replace batch-norm running statistics with the
    // exact average over the (unaugmented) training samples.
    bool precise_bn = false;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// One training or validation unit: 2D input with matching camera-frame 3D target.
struct Sample {
    std::string action = "unknown";
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::size_t in_dims = 2;        // 2, or 3 with a trailing confidence channel
    std::vector<double> input;      // [T, J, in_dims], normalized image coordinates
    std::vector<double> target;     // [T, J, 3], mm
    std::optional<PinholeCamera> camera;

    Tensor input_tensor() const { return Tensor::from({frames, joints, in_dims}, input); }
    // Target with the root joint subtracted in every frame.
    std::vector<double> root_relative_target(std::size_t root) const;
};

Sample make_sample(const PoseSequence& obs2d, const PoseSequence& gt3d, bool use_confidence = false);
// Consecutive windows of `clip` frames every `stride` frames; a short sequence yields itself.
std::vector<Sample> make_clips(const Sample& sample, std::size_t clip, std::size_t stride);

// ---- Optimizer and schedule --------------------------------------------------

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamState {
    std::size_t step = 0;
    std::map<std::string, AdamMoments> moments;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Decoupled weight decay p <- p (1 - lr wd), then the bias-corrected Adam
// delta. Parameters without a gradient are skipped. Throws TrainingError on
// non-finite gradients before touching any parameter.
void adam_step(std::vector<NamedParam>& params, AdamState& state, double lr, double weight_decay, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct ScheduleState {
    double lr = 1e-3;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;     // 1-based; 0 = none yet
    std::size_t epochs_seen = 0;
    std::size_t plateau_count = 0;  // non-improving epochs since the last improvement or halving
    std::size_t stale_count = 0;    // non-improving epochs since the last improvement
    std::size_t halvings = 0;
    bool improved = false;          // whether the latest observation improved
};

// Records one validation score and returns the (possibly halved) learning rate.
double plateau_scheduler(ScheduleState& state, double val_score, const TrainConfig& config);
bool early_stop(const ScheduleState& state, const TrainConfig& config);

// ---- Augmentation ------------------------------------------------------------

struct AugmentParams {
    double rotation_deg = 0.0;
    bool flip = false;
    double noise_sigma = 0.0;
};

AugmentParams draw_augment_params(const AugmentConfig& config, Rng& rng);

// Horizontal flip (x -> 1 - x, left/right swapped), then rotation about the
// per-frame 2D root joint, then Gaussian noise on the 2D input. The 3D target
// receives the camera-frame linear map that reproduces the 2D transform under
// the sample's camera exactly; without a camera it is rotated about the
// optical axis and mirrored in x. Throws std::invalid_argument for inputs
// outside [-0.5, 1.5].
Sample augment_with(const Sample& sample, const SkeletonTopology& topo, const AugmentParams& params, Rng& rng);
Sample augment(const Sample& sample, const SkeletonTopology& topo, const AugmentConfig& config, Rng& rng);

// ---- Cross-validation ----------------------------------------------------------

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Sequence-level k-fold partition; validation folds differ in size by at most one.
std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

// ---- Training loop -------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean MSE, mm^2
    double val_mpjpe = 0.0;   // Protocol #1, mm
    double lr = 0.0;          // rate used during the epoch
};

nlohmann::json history_to_json(const std::vector<EpochRecord>& history);

struct TrainResult {
    std::vector<EpochRecord> history;
    std::vector<std::uint8_t> best_checkpoint;
    std::size_t best_epoch = 0;
    double best_val_mpjpe = 0.0;
    bool stopped_early = false;
};

// Everything the loop carries between epochs.
struct TrainState {
    std::size_t epoch = 0;
    AdamState adam;
    ScheduleState schedule;
    Rng rng;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Recomputes every batch-norm running statistic as the equal-weight average of
// the train-mode batch statistics over `samples`.
void recalibrate_batch_norm(GtaNetModel& model, const std::vector<Sample>& samples, Rng& rng);

// Mean Protocol #1 MPJPE (frame-weighted) of the model in eval mode.
double evaluate_mpjpe(GtaNetModel& model, const std::vector<Sample>& samples);
std::vector<double> predict(GtaNetModel& model, const Sample& sample);

// Trains in place and leaves the model holding the best-validation weights.
TrainResult train_loop(GtaNetModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace gtanet
