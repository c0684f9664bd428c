#include "gtanet/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace gtanet {

void SkeletonTopology::validate() const {
    const std::size_t j = parent.size();
    if (j < 2) throw TopologyError("topology needs at least 2 joints");
    if (!joint_names.empty() && joint_names.size() != j) throw TopologyError("joint name count does not match parents");
    if (root_index >= j) throw TopologyError("root index out of range");
    std::size_t roots = 0;
    for (std::size_t i = 0; i < j; ++i) {
        if (parent[i] < 0) {
            ++roots;
            if (i != root_index) throw TopologyError("joint " + std::to_string(i) + " has no parent but is not the root");
        } else if (static_cast<std::size_t>(parent[i]) >= j) {
            throw TopologyError("parent index out of range at joint " + std::to_string(i));
        }
    }
    if (roots != 1) throw TopologyError("parent array must contain exactly one root");
    // Every joint must reach the root within J steps.
    for (std::size_t i = 0; i < j; ++i) {
        std::size_t cur = i;
        std::size_t steps = 0;
        while (parent[cur] >= 0) {
            cur = static_cast<std::size_t>(parent[cur]);
            if (++steps > j) throw TopologyError("parent array contains a cycle through joint " + std::to_string(i));
        }
    }
    std::set<std::size_t> seen;
    for (auto [l, r] : left_right_pairs) {
        if (l >= j || r >= j || l == r) throw TopologyError("invalid left/right pair");
        if (!seen.insert(l).second || !seen.insert(r).second) {
            throw TopologyError("left/right pairs must be disjoint");
        }
    }
}

std::vector<Bone> SkeletonTopology::bones() const {
    std::vector<Bone> out;
    out.reserve(bone_count());
    for (std::size_t i = 0; i < parent.size(); ++i) {
        if (parent[i] >= 0) out.push_back({i, static_cast<std::size_t>(parent[i])});
    }
    return out;
}

std::vector<int> SkeletonTopology::incoming_bone() const {
    std::vector<int> out(parent.size(), -1);
    int b = 0;
    for (std::size_t i = 0; i < parent.size(); ++i) {
        if (parent[i] >= 0) out[i] = b++;
    }
    return out;
}

std::vector<std::size_t> SkeletonTopology::mirror_permutation() const {
    std::vector<std::size_t> perm(parent.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (auto [l, r] : left_right_pairs) std::swap(perm[l], perm[r]);
    return perm;
}

SkeletonTopology SkeletonTopology::h36m17() {
    SkeletonTopology t;
    t.name = "h36m17";
    t.joint_names = {"hip",        "right_hip",     "right_knee", "right_foot",     "left_hip",  "left_knee",
                     "left_foot",  "spine",         "thorax",     "neck",           "head",      "left_shoulder",
                     "left_elbow", "left_wrist",    "right_shoulder", "right_elbow", "right_wrist"};
    t.parent = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
    t.left_right_pairs = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
    t.root_index = 0;
    return t;
}

SkeletonTopology SkeletonTopology::builtin(const std::string& name) {
    if (name == "h36m17") return h36m17();
    throw TopologyError("unknown topology '" + name + "'");
}

nlohmann::json SkeletonTopology::to_json() const {
    nlohmann::json j;
    if (!name.empty()) j["name"] = name;
    j["joints"] = joint_names;
    j["parents"] = parent;
    j["root"] = root_index;
    auto pairs = nlohmann::json::array();
    for (auto [l, r] : left_right_pairs) pairs.push_back({l, r});
    j["lr_pairs"] = pairs;
    return j;
}

SkeletonTopology SkeletonTopology::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw TopologyError("topology must be a JSON object");
    static const std::set<std::string> allowed = {"name", "joints", "parents", "root", "lr_pairs"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.contains(it.key())) throw TopologyError("unknown topology key '" + it.key() + "'");
    }
    for (const char* key : {"joints", "parents", "root", "lr_pairs"}) {
        if (!j.contains(key)) throw TopologyError(std::string("missing topology key '") + key + "'");
    }
    SkeletonTopology t;
    try {
        if (j.contains("name")) t.name = j.at("name").get<std::string>();
        t.joint_names = j.at("joints").get<std::vector<std::string>>();
        t.parent = j.at("parents").get<std::vector<int>>();
        t.root_index = j.at("root").get<std::size_t>();
        for (const auto& p : j.at("lr_pairs")) {
            if (!p.is_array() || p.size() != 2) throw TopologyError("lr_pairs entries must be [left, right]");
            t.left_right_pairs.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw TopologyError(std::string("malformed topology: ") + e.what());
    }
    t.validate();
    return t;
}

SkeletonTopology SkeletonTopology::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw TopologyError("cannot open topology file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw TopologyError("topology file " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

Matrix add_self_loops(const Matrix& adjacency) {
    if (adjacency.rows != adjacency.cols) throw std::invalid_argument("add_self_loops: adjacency must be square");
    Matrix out = adjacency;
    for (std::size_t i = 0; i < out.rows; ++i) {
        if (out(i, i) != 0.0) throw std::invalid_argument("add_self_loops: diagonal must be zero");
        out(i, i) = 1.0;
    }
    return out;
}

Matrix normalize_adjacency(const Matrix& with_loops) {
    if (with_loops.rows != with_loops.cols) throw std::invalid_argument("normalize_adjacency: matrix must be square");
    const std::size_t n = with_loops.rows;
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) deg[i] += with_loops(i, j);
        if (!(deg[i] > 0.0)) throw std::invalid_argument("normalize_adjacency: node " + std::to_string(i) + " has zero degree");
    }
    // One sqrt of the degree product: integer degrees give correctly rounded entries.
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (with_loops(i, j) != 0.0) out(i, j) = with_loops(i, j) / std::sqrt(deg[i] * deg[j]);
        }
    return out;
}

GraphOperator make_graph_operator(Matrix adjacency) {
    if (adjacency.rows != adjacency.cols) throw std::invalid_argument("adjacency must be square");
    for (std::size_t i = 0; i < adjacency.rows; ++i) {
        if (adjacency(i, i) != 0.0) throw std::invalid_argument("adjacency must have a zero diagonal");
        for (std::size_t j = 0; j < i; ++j) {
            const double v = adjacency(i, j);
            if (v != adjacency(j, i) || (v != 0.0 && v != 1.0)) {
                throw std::invalid_argument("adjacency must be symmetric with 0/1 entries");
            }
        }
    }
    GraphOperator g;
    g.n = adjacency.rows;
    g.normalized = normalize_adjacency(add_self_loops(adjacency));
    g.adjacency = std::move(adjacency);
    return g;
}

GraphOperator build_joint_adjacency(const SkeletonTopology& topo) {
    topo.validate();
    Matrix a(topo.joint_count(), topo.joint_count());
    for (const auto& b : topo.bones()) {
        a(b.child, b.parent) = 1.0;
        a(b.parent, b.child) = 1.0;
    }
    return make_graph_operator(std::move(a));
}

GraphOperator build_bone_graph(const SkeletonTopology& topo) {
    topo.validate();
    const auto bones = topo.bones();
    const std::size_t n = bones.size();
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool shared = bones[i].child == bones[j].child || bones[i].child == bones[j].parent ||
                                bones[i].parent == bones[j].child || bones[i].parent == bones[j].parent;
            if (shared) a(i, j) = a(j, i) = 1.0;
        }
    return make_graph_operator(std::move(a));
}

Matrix bone_operator(const SkeletonTopology& topo) {
    const auto bones = topo.bones();
    Matrix m(bones.size(), topo.joint_count());
    for (std::size_t b = 0; b < bones.size(); ++b) {
        m(b, bones[b].child) = 1.0;
        m(b, bones[b].parent) = -1.0;
    }
    return m;
}

Matrix bone_to_child_operator(const SkeletonTopology& topo) {
    const auto bones = topo.bones();
    Matrix m(topo.joint_count(), bones.size());
    for (std::size_t b = 0; b < bones.size(); ++b) m(bones[b].child, b) = 1.0;
    return m;
}

Matrix bone_features(const Matrix& pose, const SkeletonTopology& topo) {
    if (pose.rows != topo.joint_count()) {
        throw std::invalid_argument("bone_features: pose has " + std::to_string(pose.rows) + " joints, topology has " +
                                    std::to_string(topo.joint_count()));
    }
    const auto bones = topo.bones();
    Matrix out(bones.size(), pose.cols);
    for (std::size_t b = 0; b < bones.size(); ++b)
        for (std::size_t d = 0; d < pose.cols; ++d) out(b, d) = pose(bones[b].child, d) - pose(bones[b].parent, d);
    return out;
}

}  // namespace gtanet
