#include "gtanet/trainer.hpp"

#include "gtanet/metrics.hpp"

#include <cmath>
#include <numbers>

namespace gtanet {

namespace {

using Mat3x3 = std::array<std::array<double, 3>, 3>;

Mat3x3 mul(const Mat3x3& a, const Mat3x3& b) {
    Mat3x3 out{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) out[i][j] += a[i][k] * b[k][j];
        }
    }
    return out;
}

// Camera-frame map whose projection reproduces the normalized affine map u -> A u + b.
Mat3x3 lift_affine(const PinholeCamera& cam, const double a[2][2], const double b[2]) {
    const double w = cam.width, h = cam.height;
    const Mat3x3 m{{{a[0][0], a[0][1] * w / h, b[0] * w},
                    {a[1][0] * h / w, a[1][1], b[1] * h},
                    {0.0, 0.0, 1.0}}};
    const Mat3x3 k{{{cam.fx, 0.0, cam.cx}, {0.0, -cam.fy, cam.cy}, {0.0, 0.0, 1.0}}};
    const Mat3x3 k_inv{{{1.0 / cam.fx, 0.0, -cam.cx / cam.fx}, {0.0, -1.0 / cam.fy, cam.cy / cam.fy}, {0.0, 0.0, 1.0}}};
    return mul(k_inv, mul(m, k));
}

}  // namespace

// ---- Config ------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
    if (batch_size == 0 || max_epochs == 0) throw std::invalid_argument("batch_size and max_epochs must be positive");
    if (plateau_patience == 0 || early_stop_patience == 0) throw std::invalid_argument("patience values must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
        throw std::invalid_argument("invalid Adam hyperparameters");
    }
    if (improvement_threshold < 0.0) throw std::invalid_argument("improvement_threshold must be non-negative");
    if (augment.max_rotation_deg < 0.0 || augment.noise_sigma < 0.0 || augment.flip_probability < 0.0 ||
        augment.flip_probability > 1.0) {
        throw std::invalid_argument("invalid augmentation settings");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lr", lr},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"plateau_patience", plateau_patience},
            {"early_stop_patience", early_stop_patience},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"improvement_threshold", improvement_threshold},
            {"augment",
             {{"rotate", augment.rotate},
              {"max_rotation_deg", augment.max_rotation_deg},
              {"flip", augment.flip},
              {"flip_probability", augment.flip_probability},
              {"noise", augment.noise},
              {"noise_sigma", augment.noise_sigma},
              {"brightness", augment.brightness}}},
            {"clip_frames", clip_frames},
            {"clip_stride", clip_stride},
            {"precise_bn", precise_bn},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    const auto known = c.to_json();
    if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw std::invalid_argument("unknown train config key '" + it.key() + "'");
    }
    try {
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
        c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.improvement_threshold = j.value("improvement_threshold", c.improvement_threshold);
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            c.augment.rotate = a.value("rotate", c.augment.rotate);
            c.augment.max_rotation_deg = a.value("max_rotation_deg", c.augment.max_rotation_deg);
            c.augment.flip = a.value("flip", c.augment.flip);
            c.augment.flip_probability = a.value("flip_probability", c.augment.flip_probability);
            c.augment.noise = a.value("noise", c.augment.noise);
            c.augment.noise_sigma = a.value("noise_sigma", c.augment.noise_sigma);
            c.augment.brightness = a.value("brightness", c.augment.brightness);
        }
        c.clip_frames = j.value("clip_frames", c.clip_frames);
        c.clip_stride = j.value("clip_stride", c.clip_stride);
        c.precise_bn = j.value("precise_bn", c.precise_bn);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed train config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- Samples -------------------------------------------------------------------

std::vector<double> Sample::root_relative_target(std::size_t root) const {
    std::vector<double> out(target);
    for (std::size_t t = 0; t < frames; ++t) {
        double* f = out.data() + t * joints * 3;
        const double r[3] = {f[root * 3], f[root * 3 + 1], f[root * 3 + 2]};
        for (std::size_t j = 0; j < joints; ++j) {
            for (int c = 0; c < 3; ++c) f[j * 3 + c] -= r[c];
        }
    }
    return out;
}

Sample make_sample(const PoseSequence& obs2d, const PoseSequence& gt3d, bool use_confidence) {
    obs2d.validate();
    gt3d.validate();
    if (obs2d.dims != 2 || obs2d.units != Units::normalized) {
        throw std::invalid_argument("2D input must be normalized keypoints");
    }
    if (obs2d.frames != gt3d.frames || !(obs2d.topology == gt3d.topology)) {
        throw std::invalid_argument("2D and 3D sequences differ in frame count or topology");
    }
    Sample s;
    s.action = gt3d.action;
    s.frames = obs2d.frames;
    s.joints = obs2d.joints();
    s.target = gt3d.values_mm();
    s.camera = obs2d.camera ? obs2d.camera : gt3d.camera;
    if (use_confidence) {
        s.in_dims = 3;
        const auto t = obs2d.has_confidence() ? obs2d.to_tensor(true) : Tensor();
        if (t.defined()) {
            s.input.assign(t.data().begin(), t.data().end());
        } else {
            for (std::size_t i = 0; i < s.frames * s.joints; ++i) {
                s.input.push_back(obs2d.values[2 * i]);
                s.input.push_back(obs2d.values[2 * i + 1]);
                s.input.push_back(1.0);
            }
        }
    } else {
        s.input = obs2d.values;
    }
    return s;
}

std::vector<Sample> make_clips(const Sample& sample, std::size_t clip, std::size_t stride) {
    if (clip == 0 || sample.frames <= clip) return {sample};
    if (stride == 0) stride = clip;
    std::vector<Sample> out;
    const std::size_t in_row = sample.joints * sample.in_dims;
    const std::size_t out_row = sample.joints * 3;
    for (std::size_t begin = 0; begin + clip <= sample.frames; begin += stride) {
        Sample s = sample;
        s.frames = clip;
        s.input.assign(sample.input.begin() + static_cast<std::ptrdiff_t>(begin * in_row),
                       sample.input.begin() + static_cast<std::ptrdiff_t>((begin + clip) * in_row));
        s.target.assign(sample.target.begin() + static_cast<std::ptrdiff_t>(begin * out_row),
                        sample.target.begin() + static_cast<std::ptrdiff_t>((begin + clip) * out_row));
        out.push_back(std::move(s));
    }
    return out;
}

// ---- Optimizer and schedule ----------------------------------------------------

void adam_step(std::vector<NamedParam>& params, AdamState& state, double lr, double weight_decay, double beta1,
               double beta2, double eps) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        const auto g = p.tensor.grad();
        auto values = p.tensor.mutable_data();
        auto& mom = state.moments[p.name];
        if (mom.m.size() != values.size()) {
            mom.m.assign(values.size(), 0.0);
            mom.v.assign(values.size(), 0.0);
        }
        const double decay = 1.0 - lr * weight_decay;
        for (std::size_t i = 0; i < values.size(); ++i) {
            mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g[i];
            mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g[i] * g[i];
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            values[i] = values[i] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

double plateau_scheduler(ScheduleState& state, double val_score, const TrainConfig& config) {
    if (!std::isfinite(val_score)) throw TrainingError("validation score is not finite");
    ++state.epochs_seen;
    state.improved = val_score < state.best - config.improvement_threshold;
    if (state.improved) {
        state.best = val_score;
        state.best_epoch = state.epochs_seen;
        state.plateau_count = 0;
        state.stale_count = 0;
        return state.lr;
    }
    ++state.stale_count;
    if (++state.plateau_count >= config.plateau_patience) {
        state.lr *= 0.5;
        ++state.halvings;
        state.plateau_count = 0;
    }
    return state.lr;
}

bool early_stop(const ScheduleState& state, const TrainConfig& config) {
    return state.stale_count >= config.early_stop_patience;
}

// ---- Augmentation --------------------------------------------------------------

AugmentParams draw_augment_params(const AugmentConfig& config, Rng& rng) {
    AugmentParams p;
    if (config.rotate) p.rotation_deg = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
    if (config.flip) p.flip = rng.bernoulli(config.flip_probability);
    if (config.noise) p.noise_sigma = config.noise_sigma;
    return p;
}

Sample augment_with(const Sample& sample, const SkeletonTopology& topo, const AugmentParams& params, Rng& rng) {
    if (topo.joint_count() != sample.joints) throw std::invalid_argument("augment: topology does not match sample");
    const std::size_t jn = sample.joints;
    const std::size_t din = sample.in_dims;
    for (std::size_t i = 0; i < sample.frames * jn; ++i) {
        for (std::size_t c = 0; c < 2; ++c) {
            const double v = sample.input[i * din + c];
            if (!(v >= -0.5 && v <= 1.5)) {
                throw std::invalid_argument("augment: input is not in normalized image coordinates (value " +
                                            std::to_string(v) + ")");
            }
        }
    }
    const double theta = params.rotation_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const auto perm = params.flip ? topo.mirror_permutation() : std::vector<std::size_t>{};

    Sample out = sample;
    for (std::size_t t = 0; t < sample.frames; ++t) {
        const double* in = sample.input.data() + t * jn * din;
        const double* tg = sample.target.data() + t * jn * 3;
        double* oin = out.input.data() + t * jn * din;
        double* otg = out.target.data() + t * jn * 3;

        // u -> A u + b: flip (x -> 1 - x), then rotate about the flipped root.
        const double fx = params.flip ? -1.0 : 1.0;
        const double f0 = params.flip ? 1.0 : 0.0;
        const double mx = f0 + fx * in[topo.root_index * din];
        const double my = in[topo.root_index * din + 1];
        const double a[2][2] = {{cs * fx, -sn}, {sn * fx, cs}};
        const double b[2] = {cs * f0 + mx - (cs * mx - sn * my), sn * f0 + my - (sn * mx + cs * my)};

        Mat3x3 lift;
        if (sample.camera) {
            lift = lift_affine(*sample.camera, a, b);
        } else {
            lift = {{{cs * fx, sn, 0.0}, {-sn * fx, cs, 0.0}, {0.0, 0.0, 1.0}}};
        }
        for (std::size_t j = 0; j < jn; ++j) {
            const std::size_t src = params.flip ? perm[j] : j;
            const double u = in[src * din], v = in[src * din + 1];
            oin[j * din] = a[0][0] * u + a[0][1] * v + b[0];
            oin[j * din + 1] = a[1][0] * u + a[1][1] * v + b[1];
            for (std::size_t c = 2; c < din; ++c) oin[j * din + c] = in[src * din + c];
            const double* p = tg + src * 3;
            for (int r = 0; r < 3; ++r) otg[j * 3 + r] = lift[r][0] * p[0] + lift[r][1] * p[1] + lift[r][2] * p[2];
        }
    }
    if (params.noise_sigma > 0.0) {
        for (std::size_t i = 0; i < out.frames * jn; ++i) {
            out.input[i * din] += rng.normal(0.0, params.noise_sigma);
            out.input[i * din + 1] += rng.normal(0.0, params.noise_sigma);
        }
    }
    return out;
}

Sample augment(const Sample& sample, const SkeletonTopology& topo, const AugmentConfig& config, Rng& rng) {
    const auto params = draw_augment_params(config, rng);
    return augment_with(sample, topo, params, rng);
}

// ---- Cross-validation ----------------------------------------------------------

std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("kfold_split: k must be at least 2");
    if (n < k) {
        throw std::invalid_argument("kfold_split: " + std::to_string(n) + " sequences cannot form " + std::to_string(k) +
                                    " folds");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    std::vector<Fold> folds(k);
    std::size_t begin = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i) {
            const bool in_val = i >= begin && i < begin + size;
            (in_val ? folds[f].val : folds[f].train).push_back(order[i]);
        }
        begin += size;
    }
    return folds;
}

// ---- Training loop -------------------------------------------------------------

nlohmann::json history_to_json(const std::vector<EpochRecord>& history) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : history) {
        out.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_mpjpe", r.val_mpjpe}, {"lr", r.lr}});
    }
    return out;
}

std::vector<double> predict(GtaNetModel& model, const Sample& sample) {
    Rng rng(0);
    const auto out = forward(model, sample.input_tensor(), Mode::eval, rng);
    return {out.data().begin(), out.data().end()};
}

void recalibrate_batch_norm(GtaNetModel& model, const std::vector<Sample>& samples, Rng& rng) {
    model.for_each_norm([](const std::string&, BatchNormLayer& bn) {
        bn.stats.cumulative = true;
        bn.stats.averaged = 0;
    });
    for (const auto& s : samples) forward(model, s.input_tensor().detach(), Mode::train, rng);
    model.for_each_norm([](const std::string&, BatchNormLayer& bn) {
        bn.stats.cumulative = false;
        bn.stats.averaged = 0;
    });
}

double evaluate_mpjpe(GtaNetModel& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate_mpjpe: no samples");
    const auto& topo = model.topology();
    double total = 0.0;
    std::size_t frames = 0;
    for (const auto& s : samples) {
        const auto pred = predict(model, s);
        total += static_cast<double>(s.frames) * mpjpe_protocol1(pred, s.target, s.joints, topo.root_index);
        frames += s.frames;
    }
    return total / static_cast<double>(frames);
}

TrainResult train_loop(GtaNetModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (train.empty() || val.empty()) throw std::invalid_argument("train_loop: train and validation sets must be non-empty");
    const auto& topo = model.topology();
    const std::size_t root = topo.root_index;

    std::vector<Sample> clips;
    for (const auto& s : train) {
        if (s.joints != topo.joint_count() || s.in_dims != model.config().input_channels()) {
            throw std::invalid_argument("train_loop: sample shape does not match the model");
        }
        for (auto& c : make_clips(s, config.clip_frames, config.clip_stride)) clips.push_back(std::move(c));
    }

    std::vector<NamedParam> params;
    for (auto& [name, t] : model.parameters()) params.push_back({name, t});

    TrainState state{0, {}, {}, Rng(config.seed)};
    state.schedule.lr = config.lr;
    TrainResult result;
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    while (state.epoch < config.max_epochs) {
        ++state.epoch;
        const double lr = state.schedule.lr;
        state.rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - begin);
            for (auto& p : params) p.tensor.zero_grad();
            for (std::size_t b = begin; b < end; ++b) {
                const Sample& base = clips[order[b]];
                const Sample s = config.augment.any() ? augment(base, topo, config.augment, state.rng) : base;
                const auto target = s.root_relative_target(root);
                Tensor loss;
                try {
                    const auto pred = forward(model, s.input_tensor(), Mode::train, state.rng);
                    loss = mse_loss(pred, Tensor::from({s.frames, s.joints, 3}, target));
                } catch (const NumericError& e) {
                    throw TrainingError("training diverged at epoch " + std::to_string(state.epoch) + ": " + e.what());
                }
                if (!std::isfinite(loss.item())) {
                    throw TrainingError("training diverged at epoch " + std::to_string(state.epoch) + ": loss is not finite");
                }
                loss_sum += loss.item();
                backward(scale(loss, inv_batch));
            }
            adam_step(params, state.adam, lr, config.weight_decay, config.beta1, config.beta2, config.eps);
        }

        if (config.precise_bn) {
            Rng bn_rng(config.seed + state.epoch);
            recalibrate_batch_norm(model, train, bn_rng);
        }
        EpochRecord rec{state.epoch, loss_sum / static_cast<double>(clips.size()), evaluate_mpjpe(model, val), lr};
        result.history.push_back(rec);
        plateau_scheduler(state.schedule, rec.val_mpjpe, config);
        if (state.schedule.improved) {
            result.best_checkpoint = serialize_checkpoint(model);
            result.best_epoch = state.epoch;
            result.best_val_mpjpe = rec.val_mpjpe;
        }
        if (on_epoch) on_epoch(rec);
        if (early_stop(state.schedule, config)) {
            result.stopped_early = true;
            break;
        }
    }
    load_checkpoint_into(model, result.best_checkpoint);
    return result;
}

}  // namespace gtanet
