#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

namespace ropar {

using Vec3 = Eigen::Vector3d;

inline constexpr int kNumParts = 5;
inline constexpr int kRootSentinel = -1;

enum class Part : int { Torso = 0, LeftArm = 1, RightArm = 2, LeftLeg = 3, RightLeg = 4 };

struct SkeletonSpec {
  std::vector<std::string> joint_names;
  std::vector<int> parent_index;  // kRootSentinel for joint 0
  std::vector<Vec3> rest_offsets; // offset from parent; root's is its rest position

  int num_joints() const { return static_cast<int>(joint_names.size()); }
  int index_of(const std::string& name) const;  // -1 when absent
  /// Rest-pose world positions by accumulating offsets down the tree.
  std::vector<Vec3> rest_positions() const;
};

/// Decomposition of the skeleton into the five kinematic chains. Each part's
/// joint set carries the shared root/spine joints; the torso owns them as
/// its own chain.
struct PartPartition {
  std::vector<std::string> parts;
  std::vector<std::vector<int>> joints_of;
  std::vector<int> shared_joints;

  int num_parts() const { return static_cast<int>(parts.size()); }
  bool is_shared(int joint) const;
  /// Joints whose confidences decide credibility of `part`: the torso chain
  /// includes the shared joints, the limb chains are their exclusive joints.
  std::vector<int> chain_joints(int part) const;
};

/// 22-joint SMPL body layout with the default five-part partition.
std::pair<SkeletonSpec, PartPartition> build_default_skeleton();

struct ValidationIssue {
  std::string code;     // e.g. "uncovered joint", "missing shared joint"
  std::string message;
};
using ValidationReport = std::vector<ValidationIssue>;

/// Checks the tree invariants: parents precede children, root at 0, J >= 6.
ValidationReport validate_skeleton(const SkeletonSpec& skeleton);
/// Lists every violated partition invariant; empty iff all hold.
ValidationReport validate_partition(const SkeletonSpec& skeleton,
                                    const PartPartition& partition);

nlohmann::json skeleton_to_json(const SkeletonSpec& s, const PartPartition& p);
std::pair<SkeletonSpec, PartPartition> skeleton_from_json(const nlohmann::json& j);

}  // namespace ropar
