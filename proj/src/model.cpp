#include "gtanet/model.hpp"

#include "gtanet/byte_io.hpp"

#include <fstream>
#include <iterator>
#include <map>
#include <set>

namespace gtanet {

namespace {

constexpr char kCheckpointMagic[4] = {'G', 'T', 'A', 'C'};
constexpr std::uint16_t kCheckpointVersion = 1;

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

BatchNormLayer make_norm(std::size_t c) {
    BatchNormLayer bn{Tensor::full({c}, 1.0, true), param({c}), {}};
    bn.stats.mean.assign(c, 0.0);
    bn.stats.var.assign(c, 1.0);
    bn.stats.initialized = true;
    return bn;
}

GcnStreamParams make_stream(std::size_t in, std::size_t channels, std::size_t layers) {
    GcnStreamParams s;
    for (std::size_t l = 0; l < layers; ++l) {
        s.weights.push_back(param({l == 0 ? in : channels, channels}));
        s.norms.push_back(make_norm(channels));
    }
    return s;
}

AttentionParams make_attention(std::size_t c, std::size_t heads) {
    return {param({c, c}), param({c}), param({c, c}), param({c, c}), heads};
}

void copy_values(const Tensor& from, Tensor& to) {
    auto dst = to.mutable_data();
    const auto src = from.data();
    std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace

// ---- Config ------------------------------------------------------------------

std::vector<std::size_t> GtaNetConfig::dilations() const {
    return tcn_dilations.empty() ? default_dilations(target_receptive_field, kernel) : tcn_dilations;
}

void GtaNetConfig::validate() const {
    if (gcn_layers == 0) throw ConfigError("gcn_layers must be positive");
    if (gcn_channels == 0 || heads == 0) throw ConfigError("gcn_channels and heads must be positive");
    if (gcn_channels % heads != 0) throw ConfigError("gcn_channels must be divisible by heads");
    if (kernel == 0) throw ConfigError("kernel must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (target_receptive_field == 0) throw ConfigError("target_receptive_field must be positive");
    for (auto d : tcn_dilations) {
        if (d == 0) throw ConfigError("dilations must be positive");
    }
    if (!(output_scale_mm > 0.0)) throw ConfigError("output_scale_mm must be positive");
    if (!use_joint_gcn && !use_bone_gcn && !use_attention && !use_hier_attention) {
        throw ConfigError("at least one component must stay enabled");
    }
    if (use_attention && receptive_field(*this) < target_receptive_field) {
        throw ConfigError("receptive field " + std::to_string(receptive_field(*this)) + " is below the target " +
                          std::to_string(target_receptive_field));
    }
}

nlohmann::json GtaNetConfig::to_json() const {
    return {
        {"gcn_layers", gcn_layers},
        {"gcn_channels", gcn_channels},
        {"heads", heads},
        {"kernel", kernel},
        {"dropout", dropout},
        {"tcn_dilations", tcn_dilations},
        {"target_receptive_field", target_receptive_field},
        {"attention_window", attention_window},
        {"use_confidence", use_confidence},
        {"use_joint_gcn", use_joint_gcn},
        {"use_bone_gcn", use_bone_gcn},
        {"use_attention", use_attention},
        {"use_hier_attention", use_hier_attention},
        {"num_classes", num_classes},
        {"output_scale_mm", output_scale_mm},
        {"seed", seed},
    };
}

GtaNetConfig GtaNetConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    GtaNetConfig c;
    const auto known = c.to_json();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw ConfigError("unknown model config key '" + it.key() + "'");
    }
    try {
        auto get = [&j](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        get("gcn_layers", c.gcn_layers);
        get("gcn_channels", c.gcn_channels);
        get("heads", c.heads);
        get("kernel", c.kernel);
        get("dropout", c.dropout);
        get("tcn_dilations", c.tcn_dilations);
        get("target_receptive_field", c.target_receptive_field);
        get("attention_window", c.attention_window);
        get("use_confidence", c.use_confidence);
        get("use_joint_gcn", c.use_joint_gcn);
        get("use_bone_gcn", c.use_bone_gcn);
        get("use_attention", c.use_attention);
        get("use_hier_attention", c.use_hier_attention);
        get("num_classes", c.num_classes);
        get("output_scale_mm", c.output_scale_mm);
        get("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t receptive_field(const GtaNetConfig& config) {
    if (!config.use_attention) return 1;
    std::size_t rf = 1;
    for (auto d : config.dilations()) rf += (config.kernel - 1) * d;
    return rf;
}

std::size_t temporal_span(const GtaNetConfig& config) {
    std::size_t span = receptive_field(config);
    if (config.use_attention && config.use_hier_attention) {
        span += config.dilations().size() * (config.temporal_window() - 1);
    }
    return span;
}

std::vector<std::size_t> default_dilations(std::size_t target_rf, std::size_t kernel) {
    // At least one block; a kernel of 1 cannot grow the receptive field.
    std::vector<std::size_t> out{1};
    if (kernel <= 1) return out;
    std::size_t rf = kernel;
    for (std::size_t d = 2; rf < target_rf; d *= 2) {
        out.push_back(d);
        rf += (kernel - 1) * d;
    }
    return out;
}

GtaNetConfig apply_ablation(GtaNetConfig config, bool use_joint_gcn, bool use_bone_gcn, bool use_attention,
                            bool use_hier_attention) {
    config.use_joint_gcn = use_joint_gcn;
    config.use_bone_gcn = use_bone_gcn;
    config.use_attention = use_attention;
    config.use_hier_attention = use_hier_attention;
    config.validate();
    return config;
}

std::vector<AblationVariant> ablation_variants(const GtaNetConfig& base) {
    return {
        {"Full GTA-Net", apply_ablation(base, true, true, true, true)},
        {"Without Joint-GCN", apply_ablation(base, false, true, true, true)},
        {"Without Bone-GCN", apply_ablation(base, true, false, true, true)},
        {"Without Attention-Augmented TCN", apply_ablation(base, true, true, false, true)},
        {"Without Hierarchical Attention", apply_ablation(base, true, true, true, false)},
    };
}

// ---- Model -------------------------------------------------------------------

GtaNetModel::GtaNetModel(GtaNetConfig config, SkeletonTopology topology)
    : config_(std::move(config)), topology_(std::move(topology)) {
    config_.validate();
    topology_.validate();
    joint_graph_ = build_joint_adjacency(topology_);
    bone_graph_ = build_bone_graph(topology_);
    const std::size_t j = topology_.joint_count();
    root_relative_ = Matrix::identity(j);
    for (std::size_t i = 0; i < j; ++i) root_relative_(i, topology_.root_index) -= 1.0;

    const std::size_t c = config_.gcn_channels;
    const std::size_t din = config_.input_channels();
    joint_gcn = make_stream(din, c, config_.gcn_layers);
    bone_gcn = make_stream(2, c, config_.gcn_layers);
    joint_proj = {param({din, c}), param({c})};
    bone_proj = {param({2, c}), param({c})};
    fuse_weight = param({2 * c, c});
    spatial = make_attention(c, config_.heads);
    temporal_in = {param({j * c, c}), param({c})};
    for (auto d : config_.dilations()) {
        tcn.push_back({param({config_.kernel, c, c}), d, make_norm(c), config_.dropout});
        temporal.push_back(make_attention(c, config_.heads));
    }
    readout = {param({c, c}), param({c})};
    if (config_.num_classes > 0) classifier = {param({c, config_.num_classes}), param({config_.num_classes})};
    head = {param({c, 3 * j}), param({3 * j})};
}

void GtaNetModel::for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn) {
    auto stream = [&fn](const std::string& prefix, GcnStreamParams& s) {
        for (std::size_t l = 0; l < s.weights.size(); ++l) {
            const auto p = prefix + ".layer" + std::to_string(l);
            fn(p + ".weight", s.weights[l]);
            fn(p + ".bn.gamma", s.norms[l].gamma);
            fn(p + ".bn.beta", s.norms[l].beta);
        }
    };
    auto projection = [&fn](const std::string& prefix, NodeProjection& p) {
        fn(prefix + ".weight", p.weight);
        fn(prefix + ".bias", p.bias);
    };
    auto attention = [&fn](const std::string& prefix, AttentionParams& a) {
        fn(prefix + ".w_h", a.w_h);
        fn(prefix + ".b_h", a.b_h);
        fn(prefix + ".w_q", a.w_q);
        fn(prefix + ".w_k", a.w_k);
    };
    stream("joint_gcn", joint_gcn);
    stream("bone_gcn", bone_gcn);
    projection("joint_proj", joint_proj);
    projection("bone_proj", bone_proj);
    fn("fusion.weight", fuse_weight);
    attention("spatial_attention", spatial);
    projection("temporal_in", temporal_in);
    for (std::size_t i = 0; i < tcn.size(); ++i) {
        const auto p = "tcn.block" + std::to_string(i);
        fn(p + ".conv.weight", tcn[i].conv_weight);
        fn(p + ".bn.gamma", tcn[i].norm.gamma);
        fn(p + ".bn.beta", tcn[i].norm.beta);
        attention("temporal_attention.block" + std::to_string(i), temporal[i]);
    }
    fn("readout.w_z", readout.w_z);
    fn("readout.b_z", readout.b_z);
    if (config_.num_classes > 0) projection("classifier", classifier);
    projection("head", head);
}

void GtaNetModel::for_each_norm(const std::function<void(const std::string&, BatchNormLayer&)>& fn) {
    for (std::size_t l = 0; l < joint_gcn.norms.size(); ++l) fn("joint_gcn.layer" + std::to_string(l) + ".bn", joint_gcn.norms[l]);
    for (std::size_t l = 0; l < bone_gcn.norms.size(); ++l) fn("bone_gcn.layer" + std::to_string(l) + ".bn", bone_gcn.norms[l]);
    for (std::size_t i = 0; i < tcn.size(); ++i) fn("tcn.block" + std::to_string(i) + ".bn", tcn[i].norm);
}

std::vector<std::pair<std::string, Tensor>> GtaNetModel::parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    for_each_parameter([&out](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

std::size_t GtaNetModel::parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&n](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

Tensor GtaNetModel::parameter(const std::string& name) {
    Tensor found;
    for_each_parameter([&](const std::string& n, Tensor& t) {
        if (n == name) found = t;
    });
    if (!found.defined()) throw std::out_of_range("no parameter named '" + name + "'");
    return found;
}

GtaNetModel GtaNetModel::clone() const {
    auto& self = const_cast<GtaNetModel&>(*this);
    GtaNetModel copy(config_, topology_);
    std::map<std::string, Tensor> mine;
    self.for_each_parameter([&mine](const std::string& n, Tensor& t) { mine.emplace(n, t); });
    copy.for_each_parameter([&mine](const std::string& n, Tensor& t) { copy_values(mine.at(n), t); });
    std::map<std::string, BatchNormStats> stats;
    self.for_each_norm([&stats](const std::string& n, BatchNormLayer& bn) { stats.emplace(n, bn.stats); });
    copy.for_each_norm([&stats](const std::string& n, BatchNormLayer& bn) { bn.stats = stats.at(n); });
    return copy;
}

GtaNetModel init_weights(const GtaNetConfig& config, const SkeletonTopology& topology, std::uint64_t seed) {
    GtaNetModel model(config, topology);
    Rng rng(seed);
    model.for_each_parameter([&rng](const std::string& name, Tensor& t) {
        auto values = t.mutable_data();
        if (ends_with(name, ".gamma")) {
            std::fill(values.begin(), values.end(), 1.0);
        } else if (ends_with(name, ".bias") || ends_with(name, ".beta") || ends_with(name, ".b_h") ||
                   ends_with(name, ".b_z")) {
            std::fill(values.begin(), values.end(), 0.0);
        } else {
            const double fan_in = static_cast<double>(t.numel() / t.shape().back());
            const double stddev = std::sqrt(2.0 / fan_in);
            for (auto& v : values) v = rng.normal(0.0, stddev);
        }
    });
    return model;
}

namespace {

Tensor temporal_features(GtaNetModel& model, const Tensor& seq2d, Mode mode, Rng& rng, ForwardTrace* trace) {
    const auto& cfg = model.config();
    const auto& topo = model.topology();
    const std::size_t j = topo.joint_count();
    if (seq2d.dim() != 3 || seq2d.size(0) == 0 || seq2d.size(1) != j || seq2d.size(2) != cfg.input_channels()) {
        throw ShapeError("forward: expected input [T>=1, " + std::to_string(j) + ", " +
                         std::to_string(cfg.input_channels()) + "], got " + shape_to_string(seq2d.shape()));
    }
    const std::size_t t = seq2d.size(0);
    const std::size_t c = cfg.gcn_channels;

    const Tensor joints = cfg.use_joint_gcn ? joint_stream(seq2d, model.joint_graph(), model.joint_gcn, mode)
                                            : project_nodes(seq2d, model.joint_proj);
    const Tensor bones_in = bone_sequence(seq2d, topo);
    const Tensor bones = cfg.use_bone_gcn ? run_gcn_stream(bones_in, model.bone_graph().normalized, model.bone_gcn, mode)
                                          : project_nodes(bones_in, model.bone_proj);
    Tensor x = fuse_streams(joints, bones, topo, model.fuse_weight);
    if (cfg.use_hier_attention) {
        Tensor w;
        x = spatial_attention(x, model.spatial, trace ? &w : nullptr);
        if (trace) trace->spatial_weights.push_back(w);
    }
    x = project_nodes(reshape(x, {t, j * c}), model.temporal_in);
    if (cfg.use_attention) {
        for (std::size_t b = 0; b < model.tcn.size(); ++b) {
            if (!cfg.use_hier_attention) {
                x = tcn_block(x, model.tcn[b], mode, rng);
                continue;
            }
            Tensor w;
            x = attention_tcn_block(x, model.tcn[b], model.temporal[b], cfg.temporal_window(), mode, rng,
                                    trace ? &w : nullptr);
            if (trace) trace->temporal_weights.push_back(w);
        }
    }
    if (trace) trace->features = x;
    return x;
}

}  // namespace

Tensor forward(GtaNetModel& model, const Tensor& seq2d, Mode mode, Rng& rng, ForwardTrace* trace) {
    const Tensor x = temporal_features(model, seq2d, mode, rng, trace);
    const std::size_t t = seq2d.size(0);
    const std::size_t j = model.topology().joint_count();
    Tensor y = scale(project_nodes(x, model.head), model.config().output_scale_mm);
    return mix_nodes(model.root_relative_operator(), reshape(y, {t, j, 3}));
}

Tensor sequence_summary(GtaNetModel& model, const Tensor& seq2d, Mode mode, Rng& rng) {
    return hierarchical_readout(temporal_features(model, seq2d, mode, rng, nullptr), model.readout);
}

Tensor classify(GtaNetModel& model, const Tensor& seq2d, Mode mode, Rng& rng) {
    if (model.config().num_classes == 0) throw ConfigError("classify: model has no classification head");
    const Tensor z = sequence_summary(model, seq2d, mode, rng);
    return project_nodes(reshape(z, {1, z.numel()}), model.classifier);
}

// ---- Checkpoints ---------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(GtaNetModel& model) {
    ByteWriter w;
    w.bytes(std::string_view(kCheckpointMagic, 4));
    w.u16le(kCheckpointVersion);
    const nlohmann::json header = {{"config", model.config().to_json()}, {"topology", model.topology().to_json()}};
    const std::string text = header.dump();
    w.u32le(static_cast<std::uint32_t>(text.size()));
    w.bytes(text);

    struct Entry {
        std::string name;
        Shape shape;
        std::vector<double> values;
    };
    std::vector<Entry> entries;
    model.for_each_parameter([&entries](const std::string& n, Tensor& t) {
        entries.push_back({n, t.shape(), {t.data().begin(), t.data().end()}});
    });
    model.for_each_norm([&entries](const std::string& n, BatchNormLayer& bn) {
        entries.push_back({n + ".running_mean", {bn.stats.mean.size()}, bn.stats.mean});
        entries.push_back({n + ".running_var", {bn.stats.var.size()}, bn.stats.var});
    });
    w.u32le(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.u16le(static_cast<std::uint16_t>(e.name.size()));
        w.bytes(e.name);
        w.u8(static_cast<std::uint8_t>(e.shape.size()));
        for (auto d : e.shape) w.u32le(static_cast<std::uint32_t>(d));
        for (double v : e.values) w.f64le(v);
    }
    return w.take();
}

namespace {

struct ParsedCheckpoint {
    GtaNetConfig config;
    SkeletonTopology topology;
    std::map<std::string, std::pair<Shape, std::vector<double>>> entries;
};

ParsedCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.str(4) != std::string_view(kCheckpointMagic, 4)) r.fail("bad magic, not a checkpoint file");
    const auto version = r.u16le();
    if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = r.u32le();
    const auto text = r.str(header_len);
    ParsedCheckpoint out;
    try {
        const auto header = nlohmann::json::parse(text);
        out.config = GtaNetConfig::from_json(header.at("config"));
        out.topology = SkeletonTopology::from_json(header.at("topology"));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header: ") + e.what());
    }
    const auto count = r.u32le();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = r.str(r.u16le());
        const auto ndim = r.u8();
        Shape shape(ndim);
        for (auto& d : shape) d = r.u32le();
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.f64le();
        if (!out.entries.emplace(name, std::make_pair(std::move(shape), std::move(values))).second) {
            r.fail("duplicate entry '" + name + "'");
        }
    }
    if (r.remaining() != 0) r.fail("trailing bytes after the last entry");
    return out;
}

void apply_entries(GtaNetModel& model, ParsedCheckpoint& parsed) {
    std::set<std::string> used;
    auto take = [&](const std::string& name, const Shape& shape) -> std::vector<double>& {
        auto it = parsed.entries.find(name);
        if (it == parsed.entries.end()) throw CheckpointError("checkpoint is missing '" + name + "'");
        if (it->second.first != shape) {
            throw CheckpointError("checkpoint entry '" + name + "' has shape " + shape_to_string(it->second.first) +
                                  ", config expects " + shape_to_string(shape));
        }
        used.insert(name);
        return it->second.second;
    };
    model.for_each_parameter([&](const std::string& n, Tensor& t) {
        const auto& v = take(n, t.shape());
        std::copy(v.begin(), v.end(), t.mutable_data().begin());
    });
    model.for_each_norm([&](const std::string& n, BatchNormLayer& bn) {
        const Shape s{bn.gamma.numel()};
        bn.stats.mean = take(n + ".running_mean", s);
        bn.stats.var = take(n + ".running_var", s);
        bn.stats.initialized = true;
    });
    for (const auto& [name, _] : parsed.entries) {
        if (!used.contains(name)) throw CheckpointError("checkpoint has unexpected entry '" + name + "'");
    }
}

}  // namespace

GtaNetModel deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    auto parsed = parse_checkpoint(bytes);
    GtaNetModel model(parsed.config, parsed.topology);
    apply_entries(model, parsed);
    return model;
}

void load_checkpoint_into(GtaNetModel& model, std::span<const std::uint8_t> bytes) {
    auto parsed = parse_checkpoint(bytes);
    if (!(parsed.config == model.config()) || !(parsed.topology == model.topology())) {
        throw CheckpointError("checkpoint config does not match the model");
    }
    apply_entries(model, parsed);
}

void save_checkpoint(GtaNetModel& model, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

GtaNetModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace gtanet
