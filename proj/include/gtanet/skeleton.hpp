#pragma once

#include "gtanet/tensor.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace gtanet {

class TopologyError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Bone {
    std::size_t child;
    std::size_t parent;
};

/// Joint tree with left/right symmetry. `parent[root] == -1`.
struct SkeletonTopology {
    std::string name;
    std::vector<std::string> joint_names;
    std::vector<int> parent;
    std::vector<std::pair<std::size_t, std::size_t>> left_right_pairs;
    std::size_t root_index = 0;

    std::size_t joint_count() const { return parent.size(); }
    std::size_t bone_count() const { return parent.empty() ? 0 : parent.size() - 1; }

    // Throws TopologyError unless this is a single rooted tree with J >= 2
    // and disjoint left/right pairs.
    void validate() const;

    // Bones ordered by child joint index; the root contributes none.
    std::vector<Bone> bones() const;
    // For each joint, the index of the bone ending at it (or -1 for the root).
    std::vector<int> incoming_bone() const;
    // Joint index permutation that swaps every left/right pair.
    std::vector<std::size_t> mirror_permutation() const;

    // 17-joint Human3.6M convention, mid-hip root.
    static SkeletonTopology h36m17();
    // Looks up a built-in topology by name.
    static SkeletonTopology builtin(const std::string& name);

    nlohmann::json to_json() const;
    // Strict: exactly the keys joints, parents, root, lr_pairs (and optional name).
    static SkeletonTopology from_json(const nlohmann::json& j);
    static SkeletonTopology load(const std::filesystem::path& path);

    bool operator==(const SkeletonTopology&) const = default;
};

struct GraphOperator {
    std::size_t n = 0;
    Matrix adjacency;   // symmetric 0/1, zero diagonal
    Matrix normalized;  // D^-1/2 (A + I) D^-1/2
};

Matrix add_self_loops(const Matrix& adjacency);
Matrix normalize_adjacency(const Matrix& with_loops);
GraphOperator make_graph_operator(Matrix adjacency);

GraphOperator build_joint_adjacency(const SkeletonTopology& topo);
// Line graph of the skeleton tree: bones are adjacent iff they share a joint.
GraphOperator build_bone_graph(const SkeletonTopology& topo);

// (J-1) x J operator with +1 at the child and -1 at the parent of each bone.
Matrix bone_operator(const SkeletonTopology& topo);
// J x (J-1) operator that routes each bone to its child joint.
Matrix bone_to_child_operator(const SkeletonTopology& topo);

// pose: J x D frame -> (J-1) x D bone vectors (child - parent).
Matrix bone_features(const Matrix& pose, const SkeletonTopology& topo);

}  // namespace gtanet
