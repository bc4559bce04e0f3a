#include "ropar/features.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

namespace ropar {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct BodyJoints {
  int root = 0, left_hip = 1, right_hip = 2, spine = 3;
};

BodyJoints body_joints(const SkeletonSpec& s) {
  BodyJoints b;
  const auto pick = [&](const char* name, int fallback) {
    const int idx = s.index_of(name);
    return idx >= 0 ? idx : fallback;
  };
  b.left_hip = pick("left_hip", 1);
  b.right_hip = pick("right_hip", 2);
  b.spine = pick("spine1", 3);
  return b;
}

Eigen::Matrix3d yaw_matrix(double heading) {
  return Eigen::AngleAxisd(heading, Vec3::UnitY()).toRotationMatrix();
}

double wrap_angle(double a) { return std::remainder(a, kTwoPi); }

double heading_from(const Vec3& left_hip, const Vec3& right_hip) {
  Vec3 across = left_hip - right_hip;
  across.y() = 0.0;
  const Vec3 forward = across.cross(Vec3::UnitY());
  return std::atan2(forward.x(), forward.z());
}

Eigen::Matrix3d pelvis_frame(const Vec3& root, const Vec3& left_hip, const Vec3& right_hip, const Vec3& spine) {
  const Vec3 x = (left_hip - right_hip).normalized();
  Vec3 y = spine - root;
  y = (y - y.dot(x) * x).normalized();
  Eigen::Matrix3d f;
  f.col(0) = x;
  f.col(1) = y;
  f.col(2) = x.cross(y);
  return f;
}

Eigen::Matrix3d swing_rotation(const Vec3& from, const Vec3& to) {
  const Vec3 a = from.normalized();
  const Vec3 b = to.normalized();
  const double c = a.dot(b);
  if (c < -1.0 + 1e-12) {
    Vec3 axis = a.cross(Vec3::UnitX());
    if (axis.norm() < 1e-6) axis = a.cross(Vec3::UnitY());
    return Eigen::AngleAxisd(std::numbers::pi, axis.normalized()).toRotationMatrix();
  }
  const Vec3 v = a.cross(b);
  Eigen::Matrix3d vx;
  vx << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return Eigen::Matrix3d::Identity() + vx + vx * vx / (1.0 + c);
}

// Ground reference from the root track alone: the lowest root height minus the
// rest pelvis height.
double floor_height(const MotionRecord& record, const SkeletonSpec& skeleton) {
  double floor = std::numeric_limits<double>::infinity();
  for (int i = 0; i < record.frames(); ++i) floor = std::min(floor, record.at(i, 0).y());
  return floor - skeleton.rest_offsets[0].y();
}

}  // namespace

Eigen::Matrix<double, 6, 1> rotation_to_6d(const Eigen::Matrix3d& r) {
  Eigen::Matrix<double, 6, 1> v;
  v << r.col(0), r.col(1);
  return v;
}

Eigen::Matrix3d rotation_from_6d(const Eigen::Matrix<double, 6, 1>& v) {
  const Vec3 a = v.head<3>();
  const Vec3 b = v.tail<3>();
  const Vec3 x = a.normalized();
  const Vec3 y = (b - b.dot(x) * x).normalized();
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = x.cross(y);
  return r;
}

double body_heading(const MotionRecord& record, const SkeletonSpec& skeleton, int frame) {
  const auto b = body_joints(skeleton);
  return heading_from(record.at(frame, b.left_hip), record.at(frame, b.right_hip));
}

RootAnchor root_anchor(const MotionRecord& record, const SkeletonSpec& skeleton) {
  RootAnchor a;
  a.x = record.at(0, 0).x();
  a.z = record.at(0, 0).z();
  a.heading = body_heading(record, skeleton, 0);
  a.floor = floor_height(record, skeleton);
  return a;
}

std::vector<PartFeatureSequence> encode_features(const MotionRecord& record, const SkeletonSpec& skeleton,
                                                 const std::vector<std::vector<int>>& joint_sets) {
  record.validate(2);
  if (record.joints() != skeleton.num_joints())
    fail_data("record " + record.id + " has " + std::to_string(record.joints()) + " joints, skeleton has " +
              std::to_string(skeleton.num_joints()));

  const int n_out = record.frames() - 1;
  const auto b = body_joints(skeleton);
  const double floor = floor_height(record, skeleton);
  const auto rest = skeleton.rest_positions();
  const Eigen::Matrix3d rest_pelvis =
      pelvis_frame(rest[b.root], rest[b.left_hip], rest[b.right_hip], rest[b.spine]);

  std::vector<double> heading(record.frames());
  for (int i = 0; i < record.frames(); ++i) heading[i] = body_heading(record, skeleton, i);

  // Per-joint canonical quantities for every output frame, shared by all parts.
  const int nj = record.joints();
  std::vector<Vec3> local(static_cast<std::size_t>(n_out) * nj);
  std::vector<Vec3> velocity(local.size());
  std::vector<Eigen::Matrix<double, 6, 1>> rot6(local.size());
  std::vector<Eigen::Vector3d> root_terms(n_out);
  for (int i = 0; i < n_out; ++i) {
    const Eigen::Matrix3d to_canon = yaw_matrix(-heading[i]);
    const Vec3 root = record.at(i, b.root);
    const Vec3 ground(root.x(), floor, root.z());
    const Vec3 root_step = to_canon * (record.at(i + 1, b.root) - root);
    root_terms[i] = Vec3(root_step.x(), root_step.z(), wrap_angle(heading[i + 1] - heading[i]));
    for (int j = 0; j < nj; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * nj + j;
      local[k] = to_canon * (record.at(i, j) - ground);
      velocity[k] = to_canon * (record.at(i + 1, j) - record.at(i, j));
      Eigen::Matrix3d r;
      const int parent = skeleton.parent_index[j];
      if (parent < 0) {
        r = to_canon *
            pelvis_frame(record.at(i, b.root), record.at(i, b.left_hip), record.at(i, b.right_hip),
                         record.at(i, b.spine)) *
            rest_pelvis.transpose();
      } else {
        r = swing_rotation(skeleton.rest_offsets[j], to_canon * (record.at(i, j) - record.at(i, parent)));
      }
      rot6[k] = rotation_to_6d(r);
    }
  }

  std::vector<PartFeatureSequence> out;
  out.reserve(joint_sets.size());
  for (std::size_t p = 0; p < joint_sets.size(); ++p) {
    const auto& joints = joint_sets[p];
    const FeatureLayout layout{static_cast<int>(joints.size())};
    PartFeatureSequence seq;
    seq.part_id = static_cast<int>(p);
    seq.frames = n_out;
    seq.dim = layout.dim();
    seq.values.assign(static_cast<std::size_t>(n_out) * seq.dim, 0.0);
    for (int i = 0; i < n_out; ++i) {
      seq(i, FeatureLayout::kRootVelX) = root_terms[i].x();
      seq(i, FeatureLayout::kRootVelZ) = root_terms[i].y();
      seq(i, FeatureLayout::kRootYawRate) = root_terms[i].z();
      for (int m = 0; m < layout.joints; ++m) {
        const std::size_t k = static_cast<std::size_t>(i) * nj + joints[m];
        for (int a = 0; a < 3; ++a) {
          seq(i, layout.position(m) + a) = local[k][a];
          seq(i, layout.velocity(m) + a) = velocity[k][a];
        }
        for (int a = 0; a < 6; ++a) seq(i, layout.rotation(m) + a) = rot6[k][a];
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<PartFeatureSequence> encode_features(const MotionRecord& record, const SkeletonSpec& skeleton,
                                                 const PartPartition& partition) {
  return encode_features(record, skeleton, partition.joints_of);
}

Positions decode_features(const std::vector<PartFeatureSequence>& features, const SkeletonSpec& skeleton,
                          const std::vector<std::vector<int>>& joint_sets, const RootAnchor& anchor) {
  if (features.empty() || features.size() != joint_sets.size())
    fail_data("decode_features: expected " + std::to_string(joint_sets.size()) + " part sequences, got " +
              std::to_string(features.size()));
  const int frames = features.front().frames;
  for (std::size_t p = 0; p < features.size(); ++p) {
    if (features[p].frames != frames) fail_data("decode_features: inconsistent part lengths");
    if (features[p].dim != feature_dim(static_cast<int>(joint_sets[p].size())))
      fail_data("decode_features: part " + std::to_string(p) + " has the wrong feature width");
  }

  const int nj = skeleton.num_joints();
  const double parts = static_cast<double>(features.size());
  Positions out(frames, nj, Vec3::Zero());
  std::vector<int> carriers(nj, 0);
  for (const auto& set : joint_sets)
    for (int j : set) ++carriers[j];

  double heading = anchor.heading;
  Vec3 root(anchor.x, 0.0, anchor.z);
  for (int i = 0; i < frames; ++i) {
    const Eigen::Matrix3d to_world = yaw_matrix(heading);
    const Vec3 ground(root.x(), anchor.floor, root.z());
    for (std::size_t p = 0; p < features.size(); ++p) {
      const FeatureLayout layout{static_cast<int>(joint_sets[p].size())};
      for (int m = 0; m < layout.joints; ++m) {
        const Vec3 local(features[p](i, layout.position(m)), features[p](i, layout.position(m) + 1),
                         features[p](i, layout.position(m) + 2));
        out(i, joint_sets[p][m]) += ground + to_world * local;
      }
    }
    double vx = 0.0, vz = 0.0, yaw = 0.0;
    for (const auto& f : features) {
      vx += f(i, FeatureLayout::kRootVelX);
      vz += f(i, FeatureLayout::kRootVelZ);
      yaw += f(i, FeatureLayout::kRootYawRate);
    }
    root += to_world * Vec3(vx / parts, 0.0, vz / parts);
    heading += yaw / parts;
  }
  for (int i = 0; i < frames; ++i)
    for (int j = 0; j < nj; ++j) {
      if (carriers[j] == 0) fail_data("decode_features: joint " + std::to_string(j) + " is carried by no part");
      out(i, j) /= static_cast<double>(carriers[j]);
    }
  return out;
}

Positions decode_features(const std::vector<PartFeatureSequence>& features, const SkeletonSpec& skeleton,
                          const PartPartition& partition, const RootAnchor& anchor) {
  return decode_features(features, skeleton, partition.joints_of, anchor);
}

int body_descriptor_dim(int joints) { return 3 + 6 * joints; }

std::vector<std::vector<float>> body_descriptor(const MotionRecord& record, const SkeletonSpec& skeleton) {
  std::vector<int> all(skeleton.num_joints());
  for (int j = 0; j < skeleton.num_joints(); ++j) all[j] = j;
  const auto seq = encode_features(record, skeleton, {all}).front();
  const int dim = body_descriptor_dim(skeleton.num_joints());
  std::vector<std::vector<float>> out(seq.frames, std::vector<float>(dim));
  for (int i = 0; i < seq.frames; ++i)
    for (int k = 0; k < dim; ++k) out[i][k] = static_cast<float>(seq(i, k));
  return out;
}

}  // namespace ropar
