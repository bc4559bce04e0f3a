#include "ropar/skeleton.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "ropar/common.hpp"

namespace ropar {

int SkeletonSpec::index_of(const std::string& name) const {
  auto it = std::find(joint_names.begin(), joint_names.end(), name);
  return it == joint_names.end() ? -1 : static_cast<int>(it - joint_names.begin());
}

std::vector<Vec3> SkeletonSpec::rest_positions() const {
  std::vector<Vec3> out(joint_names.size(), Vec3::Zero());
  for (std::size_t j = 0; j < joint_names.size(); ++j) {
    const int parent = parent_index[j];
    out[j] = rest_offsets[j] + (parent < 0 ? Vec3::Zero() : out[parent]);
  }
  return out;
}

bool PartPartition::is_shared(int joint) const {
  return std::find(shared_joints.begin(), shared_joints.end(), joint) != shared_joints.end();
}

std::vector<int> PartPartition::chain_joints(int part) const {
  if (part == static_cast<int>(Part::Torso)) return joints_of[part];
  std::vector<int> out;
  for (int j : joints_of[part])
    if (!is_shared(j)) out.push_back(j);
  return out;
}

std::pair<SkeletonSpec, PartPartition> build_default_skeleton() {
  SkeletonSpec s;
  // Y up, character facing +z, left side on +x.
  struct Row {
    const char* name;
    int parent;
    double x, y, z;
  };
  static constexpr Row kRows[] = {
      {"pelvis", -1, 0.0, 0.93, 0.0},
      {"left_hip", 0, 0.06, -0.09, 0.0},
      {"right_hip", 0, -0.06, -0.09, 0.0},
      {"spine1", 0, 0.0, 0.11, -0.01},
      {"left_knee", 1, 0.04, -0.38, 0.01},
      {"right_knee", 2, -0.04, -0.38, 0.01},
      {"spine2", 3, 0.0, 0.13, 0.0},
      {"left_ankle", 4, 0.0, -0.40, -0.03},
      {"right_ankle", 5, 0.0, -0.40, -0.03},
      {"spine3", 6, 0.0, 0.06, 0.02},
      {"left_foot", 7, 0.0, -0.05, 0.12},
      {"right_foot", 8, 0.0, -0.05, 0.12},
      {"neck", 9, 0.0, 0.21, -0.01},
      {"left_collar", 9, 0.07, 0.12, 0.0},
      {"right_collar", 9, -0.07, 0.12, 0.0},
      {"head", 12, 0.0, 0.09, 0.05},
      {"left_shoulder", 13, 0.11, 0.03, 0.0},
      {"right_shoulder", 14, -0.11, 0.03, 0.0},
      {"left_elbow", 16, 0.26, 0.0, 0.0},
      {"right_elbow", 17, -0.26, 0.0, 0.0},
      {"left_wrist", 18, 0.25, 0.0, 0.0},
      {"right_wrist", 19, -0.25, 0.0, 0.0},
  };
  for (const auto& r : kRows) {
    s.joint_names.emplace_back(r.name);
    s.parent_index.push_back(r.parent);
    s.rest_offsets.emplace_back(r.x, r.y, r.z);
  }

  PartPartition p;
  p.parts = {"torso", "left_arm", "right_arm", "left_leg", "right_leg"};
  p.shared_joints = {0, 3, 6, 9};
  const auto with_shared = [&](std::initializer_list<int> own) {
    std::vector<int> v = p.shared_joints;
    v.insert(v.end(), own.begin(), own.end());
    return v;
  };
  p.joints_of = {
      with_shared({12, 15}),
      with_shared({13, 16, 18, 20}),
      with_shared({14, 17, 19, 21}),
      with_shared({1, 4, 7, 10}),
      with_shared({2, 5, 8, 11}),
  };
  return {std::move(s), std::move(p)};
}

ValidationReport validate_skeleton(const SkeletonSpec& s) {
  ValidationReport report;
  const int n = s.num_joints();
  if (n < 6)
    report.push_back({"too few joints", "skeleton has " + std::to_string(n) + " joints, need >= 6"});
  if (static_cast<int>(s.parent_index.size()) != n || static_cast<int>(s.rest_offsets.size()) != n) {
    report.push_back({"shape mismatch", "parent_index/rest_offsets length differs from joint_names"});
    return report;
  }
  for (int j = 0; j < n; ++j) {
    const int parent = s.parent_index[j];
    if (j == 0 && parent != kRootSentinel)
      report.push_back({"root has parent", "joint 0 must be the root"});
    if (j > 0 && (parent < 0 || parent >= j))
      report.push_back({"bad parent", "joint " + s.joint_names[j] + " has parent " +
                                          std::to_string(parent) + "; parents must precede children"});
  }
  return report;
}

ValidationReport validate_partition(const SkeletonSpec& skeleton, const PartPartition& partition) {
  ValidationReport report;
  const int n = skeleton.num_joints();
  if (partition.num_parts() != kNumParts ||
      static_cast<int>(partition.joints_of.size()) != partition.num_parts()) {
    report.push_back({"wrong part count", "partition must have exactly 5 parts with one joint set each"});
    if (partition.joints_of.empty()) return report;
  }

  std::vector<int> owners(n, 0);
  for (std::size_t p = 0; p < partition.joints_of.size(); ++p) {
    const std::string part_name = p < partition.parts.size() ? partition.parts[p] : std::to_string(p);
    const std::set<int> members(partition.joints_of[p].begin(), partition.joints_of[p].end());
    for (int j : members) {
      if (j < 0 || j >= n) {
        report.push_back({"joint out of range", "part " + part_name + " lists joint " + std::to_string(j)});
        continue;
      }
      if (!partition.is_shared(j)) ++owners[j];
    }
    for (int shared : partition.shared_joints)
      if (!members.count(shared))
        report.push_back({"missing shared joint", "part " + part_name + " lacks shared joint " +
                                                      std::to_string(shared)});
  }
  for (int shared : partition.shared_joints)
    if (shared < 0 || shared >= n)
      report.push_back({"joint out of range", "shared joint " + std::to_string(shared)});

  for (int j = 0; j < n; ++j) {
    if (partition.is_shared(j)) continue;
    const std::string name = skeleton.joint_names[j];
    if (owners[j] == 0)
      report.push_back({"uncovered joint", "joint " + name + " belongs to no part"});
    else if (owners[j] > 1)
      report.push_back({"joint in multiple parts", "joint " + name + " belongs to " +
                                                        std::to_string(owners[j]) + " parts"});
  }
  return report;
}

nlohmann::json skeleton_to_json(const SkeletonSpec& s, const PartPartition& p) {
  nlohmann::json j;
  j["joint_names"] = s.joint_names;
  j["parent_index"] = s.parent_index;
  auto& offsets = j["rest_offsets"] = nlohmann::json::array();
  for (const auto& o : s.rest_offsets) offsets.push_back({o.x(), o.y(), o.z()});
  j["parts"] = p.parts;
  j["joints_of"] = p.joints_of;
  j["shared_joints"] = p.shared_joints;
  return j;
}

std::pair<SkeletonSpec, PartPartition> skeleton_from_json(const nlohmann::json& j) {
  SkeletonSpec s;
  PartPartition p;
  try {
    s.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    s.parent_index = j.at("parent_index").get<std::vector<int>>();
    for (const auto& o : j.at("rest_offsets"))
      s.rest_offsets.emplace_back(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());
    p.parts = j.at("parts").get<std::vector<std::string>>();
    p.joints_of = j.at("joints_of").get<std::vector<std::vector<int>>>();
    p.shared_joints = j.at("shared_joints").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("malformed skeleton document: ") + e.what());
  }
  return {std::move(s), std::move(p)};
}

}  // namespace ropar
