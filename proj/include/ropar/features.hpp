#pragma once

#include <vector>

#include <Eigen/Core>

#include "ropar/motion.hpp"

namespace ropar {

/// Per-frame feature layout for a part with J joints:
/// [r^x, r^z, r^a, j^p (3J), j^v (3J), j^r (6J)], so D = 3 + 12 J.
struct FeatureLayout {
  int joints = 0;

  int dim() const { return 3 + 12 * joints; }
  static constexpr int kRootVelX = 0;
  static constexpr int kRootVelZ = 1;
  static constexpr int kRootYawRate = 2;
  int position(int k) const { return 3 + 3 * k; }
  int velocity(int k) const { return 3 + 3 * joints + 3 * k; }
  int rotation(int k) const { return 3 + 6 * joints + 6 * k; }
};

inline constexpr int feature_dim(int joints) { return 3 + 12 * joints; }

struct PartFeatureSequence {
  int part_id = 0;
  int frames = 0;
  int dim = 0;
  std::vector<double> values;  // frames x dim

  double& operator()(int frame, int k) { return values[static_cast<std::size_t>(frame) * dim + k]; }
  double operator()(int frame, int k) const { return values[static_cast<std::size_t>(frame) * dim + k]; }
};

/// Integration constants needed to place decoded features back in the world:
/// root ground position and heading at the first frame, and the floor height.
struct RootAnchor {
  double x = 0.0;
  double z = 0.0;
  double heading = 0.0;
  double floor = 0.0;
};

/// Heading (yaw, radians) of the body at one frame, from the hip axis.
double body_heading(const MotionRecord& record, const SkeletonSpec& skeleton, int frame);

RootAnchor root_anchor(const MotionRecord& record, const SkeletonSpec& skeleton);

/// Encodes each joint set of `joint_sets` into N-1 feature frames. Positions are
/// expressed relative to the root's ground projection with heading removed;
/// heights are measured from a floor placed one rest pelvis height below the
/// lowest root position of the sequence.
std::vector<PartFeatureSequence> encode_features(const MotionRecord& record, const SkeletonSpec& skeleton,
                                                 const std::vector<std::vector<int>>& joint_sets);
std::vector<PartFeatureSequence> encode_features(const MotionRecord& record, const SkeletonSpec& skeleton,
                                                 const PartPartition& partition);

/// Integrates root velocities (averaged over the parts) from `anchor` and
/// places every joint; joints carried by several parts take the mean.
Positions decode_features(const std::vector<PartFeatureSequence>& features, const SkeletonSpec& skeleton,
                          const std::vector<std::vector<int>>& joint_sets, const RootAnchor& anchor);
Positions decode_features(const std::vector<PartFeatureSequence>& features, const SkeletonSpec& skeleton,
                          const PartPartition& partition, const RootAnchor& anchor);

/// 6D rotation (first two matrix columns) and its Gram-Schmidt inverse.
Eigen::Matrix<double, 6, 1> rotation_to_6d(const Eigen::Matrix3d& r);
Eigen::Matrix3d rotation_from_6d(const Eigen::Matrix<double, 6, 1>& v);

/// Compact full-body descriptor used by the retrieval evaluator: root
/// velocities, local positions and velocities of every joint (3 + 6 J per frame).
std::vector<std::vector<float>> body_descriptor(const MotionRecord& record, const SkeletonSpec& skeleton);
int body_descriptor_dim(int joints);

}  // namespace ropar
