#include "testing.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "ropar/features.hpp"
#include "ropar/skeleton.hpp"

using namespace ropar;

namespace {
bool has_code(const ValidationReport& r, const std::string& code) {
  return std::any_of(r.begin(), r.end(), [&](const ValidationIssue& i) { return i.code == code; });
}
}  // namespace

TEST_CASE("default skeleton has five parts covering 22 joints") {
  const auto [skel, part] = build_default_skeleton();
  CHECK(skel.num_joints() == 22);
  CHECK(part.num_parts() == 5);
  CHECK(part.parts == std::vector<std::string>{"torso", "left_arm", "right_arm", "left_leg", "right_leg"});

  std::set<int> all;
  for (const auto& set : part.joints_of) all.insert(set.begin(), set.end());
  CHECK(all.size() == 22);

  const int root = 0;
  for (const auto& set : part.joints_of) CHECK(std::count(set.begin(), set.end(), root) == 1);
  for (int shared : part.shared_joints)
    for (const auto& set : part.joints_of) CHECK(std::count(set.begin(), set.end(), shared) == 1);

  CHECK(validate_skeleton(skel).empty());
  CHECK(validate_partition(skel, part).empty());
}

TEST_CASE("feature width is 3 + 12 |J_p| for every default part") {
  const auto [skel, part] = build_default_skeleton();
  const std::vector<int> expected = {75, 99, 99, 99, 99};
  for (int p = 0; p < 5; ++p) CHECK(feature_dim(static_cast<int>(part.joints_of[p].size())) == expected[p]);
}

TEST_CASE("chains used for credibility are disjoint and cover the skeleton") {
  const auto [skel, part] = build_default_skeleton();
  std::vector<int> seen(22, 0);
  for (int p = 0; p < 5; ++p)
    for (int j : part.chain_joints(p)) ++seen[j];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  CHECK(part.chain_joints(1).size() == 4);
  CHECK(part.chain_joints(0).size() == 6);
}

TEST_CASE("validate_partition names the violated invariant") {
  const auto [skel, part] = build_default_skeleton();
  const int wrist = skel.index_of("left_wrist");

  SUBCASE("joint removed everywhere") {
    auto broken = part;
    for (auto& set : broken.joints_of) set.erase(std::remove(set.begin(), set.end(), wrist), set.end());
    CHECK(has_code(validate_partition(skel, broken), "uncovered joint"));
  }
  SUBCASE("root missing from a leg") {
    auto broken = part;
    auto& leg = broken.joints_of[3];
    leg.erase(std::remove(leg.begin(), leg.end(), 0), leg.end());
    CHECK(has_code(validate_partition(skel, broken), "missing shared joint"));
  }
  SUBCASE("exclusive joint duplicated") {
    auto broken = part;
    broken.joints_of[2].push_back(wrist);
    CHECK(has_code(validate_partition(skel, broken), "joint in multiple parts"));
  }
  SUBCASE("four parts") {
    auto broken = part;
    broken.parts.pop_back();
    broken.joints_of.pop_back();
    CHECK(has_code(validate_partition(skel, broken), "wrong part count"));
  }
}

TEST_CASE("every single deletion of a covering joint is reported") {
  const auto [skel, part] = build_default_skeleton();
  std::mt19937 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto broken = part;
    const int p = std::uniform_int_distribution<int>(0, 4)(rng);
    auto& set = broken.joints_of[p];
    const int k = std::uniform_int_distribution<int>(0, static_cast<int>(set.size()) - 1)(rng);
    set.erase(set.begin() + k);
    CHECK_FALSE(validate_partition(skel, broken).empty());
    ++checked;
  }
  CHECK(checked == 200);
}

TEST_CASE("validate_skeleton rejects a parent that does not precede its child") {
  auto [skel, part] = build_default_skeleton();
  CHECK(validate_skeleton(skel).empty());
  skel.parent_index[3] = 9;
  CHECK(has_code(validate_skeleton(skel), "bad parent"));
}

TEST_CASE("skeleton json round trip") {
  const auto [skel, part] = build_default_skeleton();
  const auto j = skeleton_to_json(skel, part);
  const auto [s2, p2] = skeleton_from_json(nlohmann::json::parse(j.dump()));
  CHECK(s2.joint_names == skel.joint_names);
  CHECK(s2.parent_index == skel.parent_index);
  for (int k = 0; k < 22; ++k) CHECK((s2.rest_offsets[k] - skel.rest_offsets[k]).norm() == 0.0);
  CHECK(p2.joints_of == part.joints_of);
  CHECK(p2.shared_joints == part.shared_joints);
}
