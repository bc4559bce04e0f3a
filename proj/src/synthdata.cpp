#include "ropar/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "ropar/features.hpp"

namespace ropar {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double deg(double d) { return d * kPi / 180.0; }

using Mat3 = Eigen::Matrix3d;
Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

struct Phrase {
  const char* base;
  const char* progressive;
};

const std::map<Locomotion, Phrase>& locomotion_phrases() {
  static const std::map<Locomotion, Phrase> m = {
      {Locomotion::StandStill, {"stands still", "standing still"}},
      {Locomotion::WalkForward, {"walks forward", "walking forward"}},
      {Locomotion::WalkBackward, {"walks backward", "walking backward"}},
      {Locomotion::RunForward, {"runs forward", "running forward"}},
      {Locomotion::TurnLeft, {"turns left", "turning left"}},
      {Locomotion::TurnRight, {"turns right", "turning right"}},
  };
  return m;
}

const std::map<Action, const char*>& action_phrases() {
  static const std::map<Action, const char*> m = {
      {Action::WaveLeftArm, "waves the left arm"},
      {Action::WaveRightArm, "waves the right arm"},
      {Action::RaiseLeftArm, "raises the left arm"},
      {Action::RaiseRightArm, "raises the right arm"},
      {Action::RaiseBothArms, "raises both arms"},
      {Action::PunchLeftArm, "punches with the left arm"},
      {Action::PunchRightArm, "punches with the right arm"},
      {Action::TwistTorso, "twists the torso"},
      {Action::Nod, "nods"},
      {Action::Bow, "bows"},
      {Action::KickLeftLeg, "kicks with the left leg"},
      {Action::KickRightLeg, "kicks with the right leg"},
      {Action::Jump, "jumps in place"},
      {Action::Squat, "squats"},
  };
  return m;
}

// Actions that take over the legs or the whole trunk; only valid while standing.
bool standing_only(Action a) {
  return a == Action::Bow || a == Action::KickLeftLeg || a == Action::KickRightLeg || a == Action::Jump ||
         a == Action::Squat;
}

bool moves_left_arm(Action a) {
  return a == Action::WaveLeftArm || a == Action::RaiseLeftArm || a == Action::RaiseBothArms ||
         a == Action::PunchLeftArm;
}
bool moves_right_arm(Action a) {
  return a == Action::WaveRightArm || a == Action::RaiseRightArm || a == Action::RaiseBothArms ||
         a == Action::PunchRightArm;
}

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

struct JointIds {
  int pelvis, left_hip, right_hip, spine1, left_knee, right_knee, spine2, left_ankle, right_ankle, spine3,
      left_foot, right_foot, neck, left_collar, right_collar, head, left_shoulder, right_shoulder, left_elbow,
      right_elbow, left_wrist, right_wrist;
};

JointIds joint_ids(const SkeletonSpec& s) {
  const auto at = [&](const char* n) {
    const int i = s.index_of(n);
    if (i < 0) fail_data(std::string("skeleton lacks joint ") + n);
    return i;
  };
  return {at("pelvis"),      at("left_hip"),    at("right_hip"),      at("spine1"),        at("left_knee"),
          at("right_knee"),  at("spine2"),      at("left_ankle"),     at("right_ankle"),   at("spine3"),
          at("left_foot"),   at("right_foot"),  at("neck"),           at("left_collar"),   at("right_collar"),
          at("head"),        at("left_shoulder"), at("right_shoulder"), at("left_elbow"), at("right_elbow"),
          at("left_wrist"),  at("right_wrist")};
}

// Randomised constants of one kinematic program.
struct ProgramParams {
  double heading0, x0, z0;
  double speed = 0.0, yaw_rate = 0.0, gait_hz = 0.0, gait_phase = 0.0;
  double hip_amp = 0.0, knee_amp = 0.0, arm_swing = 0.0, elbow_bend = 0.0, bob = 0.0;
  double act_amp = 0.0, act_hz = 0.0, act_phase = 0.0;
};

ProgramParams draw_params(const MotionProgram& prog, Rng& rng) {
  ProgramParams p;
  p.heading0 = rng.uniform(-kPi, kPi);
  p.x0 = rng.uniform(-1.0, 1.0);
  p.z0 = rng.uniform(-1.0, 1.0);
  p.gait_phase = rng.uniform(0.0, 2.0 * kPi);
  switch (prog.locomotion) {
    case Locomotion::StandStill:
      break;
    case Locomotion::WalkForward:
      p.speed = rng.uniform(0.9, 1.3);
      p.gait_hz = p.speed / 1.3;
      p.hip_amp = deg(rng.uniform(22.0, 30.0));
      p.knee_amp = deg(40.0);
      p.arm_swing = deg(rng.uniform(15.0, 25.0));
      p.bob = 0.02;
      break;
    case Locomotion::WalkBackward:
      p.speed = -rng.uniform(0.6, 0.9);
      p.gait_hz = -p.speed / 1.0;
      p.hip_amp = deg(rng.uniform(18.0, 24.0));
      p.knee_amp = deg(35.0);
      p.arm_swing = deg(rng.uniform(10.0, 15.0));
      p.bob = 0.015;
      break;
    case Locomotion::RunForward:
      p.speed = rng.uniform(2.4, 3.0);
      p.gait_hz = p.speed / 2.4;
      p.hip_amp = deg(rng.uniform(38.0, 45.0));
      p.knee_amp = deg(75.0);
      p.arm_swing = deg(rng.uniform(35.0, 45.0));
      p.elbow_bend = deg(80.0);
      p.bob = 0.05;
      break;
    case Locomotion::TurnLeft:
    case Locomotion::TurnRight:
      p.speed = rng.uniform(0.6, 0.9);
      p.gait_hz = p.speed / 1.1;
      p.hip_amp = deg(rng.uniform(18.0, 24.0));
      p.knee_amp = deg(35.0);
      p.arm_swing = deg(rng.uniform(10.0, 18.0));
      p.bob = 0.015;
      p.yaw_rate = deg(rng.uniform(40.0, 70.0)) * (prog.locomotion == Locomotion::TurnLeft ? 1.0 : -1.0);
      break;
  }
  p.act_phase = rng.uniform(0.0, 2.0 * kPi);
  switch (prog.action) {
    case Action::WaveLeftArm:
    case Action::WaveRightArm:
      p.act_amp = deg(rng.uniform(25.0, 35.0));
      p.act_hz = rng.uniform(1.0, 1.6);
      break;
    case Action::PunchLeftArm:
    case Action::PunchRightArm:
      p.act_hz = rng.uniform(0.8, 1.2);
      break;
    case Action::TwistTorso:
      p.act_amp = deg(rng.uniform(25.0, 35.0));
      p.act_hz = rng.uniform(0.5, 0.8);
      break;
    case Action::Nod:
      p.act_amp = deg(rng.uniform(20.0, 30.0));
      p.act_hz = rng.uniform(1.0, 1.5);
      break;
    case Action::Bow:
      p.act_amp = deg(rng.uniform(40.0, 60.0));
      break;
    case Action::KickLeftLeg:
    case Action::KickRightLeg:
      p.act_amp = deg(rng.uniform(60.0, 80.0));
      p.act_hz = rng.uniform(0.6, 0.9);
      break;
    case Action::Jump:
      p.act_amp = rng.uniform(0.15, 0.25);
      p.act_hz = rng.uniform(1.0, 1.5);
      break;
    case Action::Squat:
      p.act_amp = deg(rng.uniform(50.0, 70.0));
      p.act_hz = rng.uniform(0.3, 0.5);
      break;
    default:
      break;
  }
  return p;
}

std::vector<Vec3> forward_kinematics(const SkeletonSpec& s, const Vec3& root, double heading,
                                     const std::vector<Mat3>& local) {
  const int n = s.num_joints();
  std::vector<Vec3> pos(n);
  std::vector<Mat3> world(n);
  world[0] = rot_y(heading) * local[0];
  pos[0] = root;
  for (int j = 1; j < n; ++j) {
    const int parent = s.parent_index[j];
    world[j] = world[parent] * local[j];
    pos[j] = pos[parent] + world[parent] * s.rest_offsets[j];
  }
  return pos;
}

}  // namespace

PromptGrammar::PromptGrammar() {
  for (const auto& [loco, _] : locomotion_phrases()) productions_.push_back({loco, Action::None});
  for (const auto& [action, _] : action_phrases()) {
    if (standing_only(action)) {
      productions_.push_back({Locomotion::StandStill, action});
      continue;
    }
    for (const auto& [loco, __] : locomotion_phrases()) productions_.push_back({loco, action});
  }
  for (const auto& p : productions_) prompts_.push_back(render(p));
}

std::string PromptGrammar::render(const MotionProgram& program) const {
  const auto& loco = locomotion_phrases().at(program.locomotion);
  if (program.action == Action::None) return std::string("a person ") + loco.base;
  const std::string act = action_phrases().at(program.action);
  if (program.locomotion == Locomotion::StandStill) return "a person " + act;
  return "a person " + act + " while " + loco.progressive;
}

MotionProgram PromptGrammar::parse(const std::string& prompt) const {
  for (std::size_t i = 0; i < prompts_.size(); ++i)
    if (prompts_[i] == prompt) return productions_[i];
  fail_data("prompt is not a grammar production: \"" + prompt + "\"");
}

std::vector<std::string> PromptGrammar::vocabulary() const {
  std::set<std::string> words;
  for (const auto& p : prompts_) {
    std::istringstream in(p);
    std::string w;
    while (in >> w) words.insert(w);
  }
  return {words.begin(), words.end()};
}

const PromptGrammar& default_grammar() {
  static const PromptGrammar g;
  return g;
}

MotionRecord generate_clean(const std::string& prompt, int length, std::uint64_t seed, double fps) {
  if (length < 16) fail_data("generate_clean needs length >= 16, got " + std::to_string(length));
  const MotionProgram prog = default_grammar().parse(prompt);
  static const auto skel = build_default_skeleton().first;
  const JointIds id = joint_ids(skel);
  Rng rng(derive_seed(seed, prompt));
  const ProgramParams p = draw_params(prog, rng);

  MotionRecord rec("clean-" + std::to_string(seed), prompt, fps, length, skel.num_joints());
  const double duration = (length - 1) / fps;
  const double rest_height = skel.rest_offsets[0].y();
  Vec3 root(p.x0, rest_height, p.z0);
  double heading = p.heading0;

  for (int i = 0; i < length; ++i) {
    const double t = i / fps;
    std::vector<Mat3> local(skel.num_joints(), Mat3::Identity());
    double height = rest_height;

    // Arms hang by default; locomotion swings them opposite to the legs.
    const double phase = 2.0 * kPi * p.gait_hz * t + p.gait_phase;
    const bool moving = prog.locomotion != Locomotion::StandStill;
    const double swing = moving ? p.arm_swing * std::sin(phase) : 0.0;
    local[id.left_shoulder] = rot_x(swing) * rot_z(deg(-75.0));
    local[id.right_shoulder] = rot_x(-swing) * rot_z(deg(75.0));
    if (p.elbow_bend > 0.0) {
      local[id.left_elbow] = rot_y(-p.elbow_bend);
      local[id.right_elbow] = rot_y(p.elbow_bend);
    }

    if (moving) {
      local[id.left_hip] = rot_x(-p.hip_amp * std::sin(phase));
      local[id.right_hip] = rot_x(p.hip_amp * std::sin(phase));
      local[id.left_knee] = rot_x(p.knee_amp * std::max(0.0, std::sin(phase + kPi / 2)));
      local[id.right_knee] = rot_x(p.knee_amp * std::max(0.0, std::sin(phase - kPi / 2)));
      height += -p.bob * std::cos(2.0 * phase);
    }

    const double act = 2.0 * kPi * p.act_hz * t + p.act_phase;
    switch (prog.action) {
      case Action::WaveLeftArm:
        local[id.left_shoulder] = rot_z(deg(45.0) + p.act_amp * std::sin(act));
        local[id.left_elbow] = rot_z(deg(30.0));
        break;
      case Action::WaveRightArm:
        local[id.right_shoulder] = rot_z(-(deg(45.0) + p.act_amp * std::sin(act)));
        local[id.right_elbow] = rot_z(deg(-30.0));
        break;
      case Action::RaiseLeftArm:
      case Action::RaiseRightArm:
      case Action::RaiseBothArms: {
        const double s = smoothstep(t / (0.4 * duration));
        const double angle = deg(-75.0) + deg(155.0) * s;
        if (moves_left_arm(prog.action)) {
          local[id.left_shoulder] = rot_z(angle);
          local[id.left_elbow] = Mat3::Identity();
        }
        if (moves_right_arm(prog.action)) {
          local[id.right_shoulder] = rot_z(-angle);
          local[id.right_elbow] = Mat3::Identity();
        }
        break;
      }
      case Action::PunchLeftArm: {
        const double u = 0.5 - 0.5 * std::cos(act);
        local[id.left_shoulder] = rot_y(deg(-85.0) * u) * rot_z(deg(-75.0) * (1.0 - u));
        local[id.left_elbow] = rot_y(deg(-100.0) * (1.0 - u));
        break;
      }
      case Action::PunchRightArm: {
        const double u = 0.5 - 0.5 * std::cos(act);
        local[id.right_shoulder] = rot_y(deg(85.0) * u) * rot_z(deg(75.0) * (1.0 - u));
        local[id.right_elbow] = rot_y(deg(100.0) * (1.0 - u));
        break;
      }
      case Action::TwistTorso:
        local[id.spine3] = rot_y(p.act_amp * std::sin(act));
        break;
      case Action::Nod:
        local[id.neck] = rot_x(p.act_amp * (0.5 - 0.5 * std::cos(act)));
        break;
      case Action::Bow: {
        const double s = std::sin(kPi * t / duration);
        local[id.spine1] = rot_x(p.act_amp * s * s);
        break;
      }
      case Action::KickLeftLeg:
      case Action::KickRightLeg: {
        const double s = std::max(0.0, std::sin(act));
        const int hip = prog.action == Action::KickLeftLeg ? id.left_hip : id.right_hip;
        const int knee = prog.action == Action::KickLeftLeg ? id.left_knee : id.right_knee;
        local[hip] = rot_x(-p.act_amp * s * s);
        local[knee] = rot_x(deg(20.0) * s);
        break;
      }
      case Action::Jump: {
        const double s = std::abs(std::sin(act / 2.0));
        height += p.act_amp * s;
        for (int hip : {id.left_hip, id.right_hip}) local[hip] = rot_x(deg(-20.0) * s);
        for (int knee : {id.left_knee, id.right_knee}) local[knee] = rot_x(deg(40.0) * s);
        break;
      }
      case Action::Squat: {
        const double bend = p.act_amp * (0.5 - 0.5 * std::cos(act - p.act_phase));
        for (int hip : {id.left_hip, id.right_hip}) local[hip] = rot_x(-bend);
        for (int knee : {id.left_knee, id.right_knee}) local[knee] = rot_x(2.0 * bend);
        for (int ankle : {id.left_ankle, id.right_ankle}) local[ankle] = rot_x(-bend);
        height -= 0.78 * (1.0 - std::cos(bend));
        break;
      }
      case Action::None:
        break;
    }

    root.y() = height;
    const auto pos = forward_kinematics(skel, root, heading, local);
    for (int j = 0; j < skel.num_joints(); ++j) rec.at(i, j) = pos[j];

    root += rot_y(heading) * Vec3(0.0, 0.0, p.speed / fps);
    heading += p.yaw_rate / fps;
  }
  return rec;
}

std::vector<PromptCheck> check_prompt_consistency(const MotionRecord& record) {
  const MotionProgram prog = default_grammar().parse(record.prompt);
  static const auto skel = build_default_skeleton().first;
  const JointIds id = joint_ids(skel);
  const int n = record.frames();
  const double duration = (n - 1) / record.fps;
  std::vector<PromptCheck> out;
  const auto add = [&](std::string name, double value, double threshold, bool above = true) {
    out.push_back({std::move(name), value, threshold, above ? value > threshold : value < threshold});
  };

  std::vector<double> heading(n);
  for (int i = 0; i < n; ++i) heading[i] = body_heading(record, skel, i);
  // Per-frame joint offsets from the root in the body's heading frame.
  const auto local = [&](int i, int j) -> Vec3 {
    return rot_y(-heading[i]) * (record.at(i, j) - record.at(i, id.pelvis));
  };
  const auto range_of = [&](auto&& f) {
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < n; ++i) {
      const double v = f(i);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    return hi - lo;
  };

  double forward = 0.0;
  for (int i = 0; i + 1 < n; ++i)
    forward += (rot_y(-heading[i]) * (record.at(i + 1, id.pelvis) - record.at(i, id.pelvis))).z();
  const double speed = forward / duration;
  double turn = 0.0;
  for (int i = 0; i + 1 < n; ++i) turn += std::remainder(heading[i + 1] - heading[i], 2.0 * kPi);
  const double yaw_rate = turn / duration;

  switch (prog.locomotion) {
    case Locomotion::StandStill:
      if (!standing_only(prog.action)) add("root speed (m/s)", std::abs(speed), 0.05, false);
      break;
    case Locomotion::WalkForward:
      add("forward speed (m/s)", speed, 0.5);
      break;
    case Locomotion::WalkBackward:
      add("backward speed (m/s)", -speed, 0.3);
      break;
    case Locomotion::RunForward:
      add("forward speed (m/s)", speed, 1.8);
      break;
    case Locomotion::TurnLeft:
      add("left yaw rate (rad/s)", yaw_rate, 0.4);
      break;
    case Locomotion::TurnRight:
      add("right yaw rate (rad/s)", -yaw_rate, 0.4);
      break;
  }

  const auto wrist_amp = [&](int wrist) { return 0.5 * range_of([&](int i) { return record.at(i, wrist).y(); }); };
  switch (prog.action) {
    case Action::WaveLeftArm:
      add("left wrist vertical amplitude (m)", wrist_amp(id.left_wrist), 0.1);
      break;
    case Action::WaveRightArm:
      add("right wrist vertical amplitude (m)", wrist_amp(id.right_wrist), 0.1);
      break;
    case Action::RaiseLeftArm:
    case Action::RaiseRightArm:
    case Action::RaiseBothArms:
      for (int wrist : {id.left_wrist, id.right_wrist}) {
        if ((wrist == id.left_wrist && !moves_left_arm(prog.action)) ||
            (wrist == id.right_wrist && !moves_right_arm(prog.action)))
          continue;
        add("wrist rise (m)", local(n - 1, wrist).y() - local(0, wrist).y(), 0.5);
      }
      break;
    case Action::PunchLeftArm:
    case Action::PunchRightArm: {
      const int wrist = prog.action == Action::PunchLeftArm ? id.left_wrist : id.right_wrist;
      const int shoulder = prog.action == Action::PunchLeftArm ? id.left_shoulder : id.right_shoulder;
      add("wrist forward range (m)", range_of([&](int i) { return local(i, wrist).z(); }), 0.2);
      add("arm reach range (m)",
          range_of([&](int i) { return (record.at(i, wrist) - record.at(i, shoulder)).norm(); }), 0.12);
      break;
    }
    case Action::TwistTorso:
      add("shoulder yaw range (rad)", range_of([&](int i) {
            const Vec3 s = local(i, id.left_shoulder) - local(i, id.right_shoulder);
            return std::atan2(s.z(), s.x());
          }),
          0.5);
      break;
    case Action::Nod:
      add("head pitch excursion (m)", range_of([&](int i) { return (local(i, id.head) - local(i, id.neck)).z(); }),
          0.025);
      break;
    case Action::Bow:
      add("head forward excursion (m)", range_of([&](int i) { return local(i, id.head).z(); }), 0.3);
      break;
    case Action::KickLeftLeg:
    case Action::KickRightLeg: {
      const int foot = prog.action == Action::KickLeftLeg ? id.left_foot : id.right_foot;
      add("foot forward range (m)", range_of([&](int i) { return local(i, foot).z(); }), 0.3);
      break;
    }
    case Action::Jump:
      add("root height range (m)", range_of([&](int i) { return record.at(i, id.pelvis).y(); }), 0.12);
      break;
    case Action::Squat:
      add("root drop (m)", range_of([&](int i) { return record.at(i, id.pelvis).y(); }), 0.2);
      break;
    case Action::None:
      break;
  }
  return out;
}

namespace {

struct Window {
  int part, begin, end;  // [begin, end)
};

int pick_weighted(const std::vector<double>& w, Rng& rng) {
  return static_cast<int>(std::discrete_distribution<int>(w.begin(), w.end())(rng.engine()));
}

// Frame spans where at least one part is corrupted, covering all but
// round(target * n) frames that stay fully credible.
std::vector<Window> plan_full_body(int n, const NoiseSpec& spec, Rng& rng) {
  const int min_w = std::max(1, spec.min_window);
  int clean = static_cast<int>(std::lround(spec.target_full_body_fraction * n));
  clean = std::clamp(clean, 0, n);
  int noisy = n - clean;
  if (noisy == 0) return {};
  if (noisy < min_w) {
    noisy = std::min(n, min_w);
    clean = n - noisy;
  }
  // Clean block offset such that both flanking noisy regions are 0 or >= min_w.
  std::vector<int> offsets;
  for (int s = 0; s <= noisy; ++s) {
    const int left = s, right = noisy - s;
    if ((left == 0 || left >= min_w) && (right == 0 || right >= min_w)) offsets.push_back(s);
  }
  const int s = offsets[rng.integer(0, static_cast<std::int64_t>(offsets.size()) - 1)];

  std::vector<std::pair<int, int>> regions;
  if (s > 0) regions.push_back({0, s});
  if (noisy - s > 0) regions.push_back({s + clean, n});

  std::vector<double> weights(spec.part_weights.begin(), spec.part_weights.end());
  std::vector<Window> out;
  for (auto [begin, end] : regions) {
    int cursor = begin;
    while (cursor < end) {
      int len = end - cursor;
      if (len >= 2 * min_w) len = static_cast<int>(rng.integer(min_w, std::min<std::int64_t>(len - min_w, 3 * min_w)));
      // One to three distinct parts corrupted over this span.
      const int count = 1 + pick_weighted({0.5, 0.35, 0.15}, rng);
      std::vector<double> w = weights;
      for (int c = 0; c < count; ++c) {
        const int part = pick_weighted(w, rng);
        w[part] = 0.0;
        out.push_back({part, cursor, cursor + len});
        if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) break;
      }
      cursor += len;
    }
  }
  return out;
}

// One window per part whose lengths sum to about (1 - target) * 5n cells.
std::vector<Window> plan_cells(int n, const NoiseSpec& spec, Rng& rng) {
  const int min_w = std::min(std::max(1, spec.min_window), n);
  const int total = static_cast<int>(std::lround((1.0 - spec.target_credible_fraction) * kNumParts * n));
  if (total <= 0) return {};
  std::array<double, kNumParts> share{};
  double sum = 0.0;
  for (int p = 0; p < kNumParts; ++p) {
    share[p] = spec.part_weights[p] * rng.uniform(0.5, 1.5);
    sum += share[p];
  }
  std::array<int, kNumParts> len{};
  int assigned = 0;
  for (int p = 0; p < kNumParts; ++p) {
    len[p] = std::clamp(static_cast<int>(std::lround(total * share[p] / sum)), 0, n);
    assigned += len[p];
  }
  // Repair rounding and the minimum-window constraint, keeping the total.
  for (int iter = 0; iter < 64 && assigned != total; ++iter) {
    const int step = assigned < total ? 1 : -1;
    int best = -1;
    for (int p = 0; p < kNumParts; ++p) {
      const int next = len[p] + step;
      if (next < 0 || next > n) continue;
      if (best < 0 || (step > 0 ? len[p] < len[best] : len[p] > len[best])) best = p;
    }
    if (best < 0) break;
    len[best] += step;
    assigned += step;
  }
  for (int p = 0; p < kNumParts; ++p) {
    if (len[p] > 0 && len[p] < min_w) {
      // Move the short window's cells onto the longest part that has room.
      int target = -1;
      for (int q = 0; q < kNumParts; ++q)
        if (q != p && len[q] + len[p] <= n && len[q] >= min_w && (target < 0 || len[q] > len[target])) target = q;
      if (target >= 0) {
        len[target] += len[p];
        len[p] = 0;
      } else {
        len[p] = min_w;
      }
    }
  }
  std::vector<Window> out;
  for (int p = 0; p < kNumParts; ++p) {
    if (len[p] == 0) continue;
    const int begin = static_cast<int>(rng.integer(0, n - len[p]));
    out.push_back({p, begin, begin + len[p]});
  }
  return out;
}

}  // namespace

NoisyRecord inject_noise(const MotionRecord& record, const NoiseSpec& spec, const PartPartition& partition) {
  NoisyRecord out{record, BoolArray2(record.frames(), kNumParts, 1)};
  Rng rng(derive_seed(spec.seed, record.id));
  if (!rng.bernoulli(spec.sequence_probability)) return out;

  const int n = record.frames();
  const auto windows =
      spec.target == NoiseTarget::FullBodyFraction ? plan_full_body(n, spec, rng) : plan_cells(n, spec, rng);

  MotionRecord& rec = out.record;
  for (const auto& w : windows)
    for (int i = w.begin; i < w.end; ++i) out.truth(i, w.part) = 0;

  // Detector confidences: high for visible chains, low for corrupted ones.
  for (int p = 0; p < kNumParts; ++p) {
    const auto chain = partition.chain_joints(p);
    for (int i = 0; i < n; ++i)
      for (int j : chain)
        rec.confidences(i, j) = out.truth(i, p) ? rng.uniform(spec.clean_confidence_min, 1.0)
                                                : rng.uniform(spec.confidence_floor, spec.confidence_low);
  }

  const std::vector<double> kind_w(spec.kind_weights.begin(), spec.kind_weights.end());
  for (const auto& w : windows) {
    const auto kind = static_cast<CorruptionKind>(pick_weighted(kind_w, rng));
    // Shared joints and the chain's attachment joint (hip, collar) stay intact.
    std::vector<int> joints;
    bool attached = false;
    for (int j : partition.chain_joints(w.part)) {
      if (partition.is_shared(j)) continue;
      if (w.part != 0 && !attached) {
        attached = true;
        continue;
      }
      joints.push_back(j);
    }
    Vec3 drift = Vec3::Zero();
    const int hold = std::max(0, w.begin - 1);
    for (int i = w.begin; i < w.end; ++i) {
      if (kind == CorruptionKind::Drift)
        drift += Vec3(rng.normal(0.0, spec.drift_step), rng.normal(0.0, spec.drift_step),
                      rng.normal(0.0, spec.drift_step));
      for (int j : joints) {
        switch (kind) {
          case CorruptionKind::Jitter:
            rec.at(i, j) = record.at(i, j) + Vec3(rng.normal(0.0, spec.jitter_sigma),
                                                  rng.normal(0.0, spec.jitter_sigma),
                                                  rng.normal(0.0, spec.jitter_sigma));
            break;
          case CorruptionKind::Freeze:
            rec.at(i, j) = record.at(hold, j);
            break;
          case CorruptionKind::Drift:
            rec.at(i, j) = record.at(i, j) + drift;
            break;
        }
      }
    }
  }
  return out;
}

Corpus make_corpus(const CorpusConfig& config) {
  if (config.length_min < 16 || config.length_max < config.length_min)
    fail_config("corpus length range must satisfy 16 <= length_min <= length_max");
  const auto& grammar = default_grammar();
  const auto partition = build_default_skeleton().second;
  Corpus corpus;
  corpus.config = config;
  std::size_t frames = 0, full_body = 0, credible_cells = 0;
  for (std::size_t i = 0; i < config.size; ++i) {
    Rng rng(derive_seed(config.seed, i));
    const auto& prompt = grammar.prompts()[rng.integer(0, static_cast<std::int64_t>(grammar.prompts().size()) - 1)];
    const int length = static_cast<int>(rng.integer(config.length_min, config.length_max));
    MotionRecord clean = generate_clean(prompt, length, rng.engine()(), config.fps);
    char id[32];
    std::snprintf(id, sizeof id, "seq-%06zu", i);
    clean.id = id;
    NoiseSpec spec = config.noise;
    spec.seed = derive_seed(config.seed, "noise");
    NoisyRecord noisy = config.noisy ? inject_noise(clean, spec, partition)
                                     : NoisyRecord{clean, BoolArray2(clean.frames(), kNumParts, 1)};
    const auto mask = credibility_of(noisy.record, partition);
    for (std::size_t f = 0; f < mask.frames(); ++f) {
      bool all = true;
      for (int p = 0; p < kNumParts; ++p) {
        credible_cells += mask.credible(f, p);
        all = all && mask.credible(f, p);
      }
      full_body += all;
    }
    frames += mask.frames();
    corpus.records.push_back(std::move(noisy.record));
    corpus.truth.push_back(std::move(noisy.truth));
  }
  if (frames > 0) {
    corpus.realized_full_body_fraction = static_cast<double>(full_body) / frames;
    corpus.realized_credible_fraction = static_cast<double>(credible_cells) / (frames * kNumParts);
  }
  return corpus;
}

nlohmann::json to_json(const NoiseSpec& s) {
  nlohmann::json j;
  j["target"] = s.target == NoiseTarget::FullBodyFraction ? "full_body_fraction" : "credible_fraction";
  j["target_full_body_fraction"] = s.target_full_body_fraction;
  j["target_credible_fraction"] = s.target_credible_fraction;
  j["sequence_probability"] = s.sequence_probability;
  j["part_weights"] = s.part_weights;
  j["kind_weights"] = {{"jitter", s.kind_weights[0]}, {"freeze", s.kind_weights[1]}, {"drift", s.kind_weights[2]}};
  j["jitter_sigma"] = s.jitter_sigma;
  j["drift_step"] = s.drift_step;
  j["confidence_low"] = s.confidence_low;
  j["confidence_floor"] = s.confidence_floor;
  j["clean_confidence_min"] = s.clean_confidence_min;
  j["min_window"] = s.min_window;
  return j;
}

nlohmann::json Corpus::manifest() const {
  nlohmann::json j;
  j["seed"] = config.seed;
  j["grammar_version"] = kGrammarVersion;
  j["size"] = config.size;
  j["length_min"] = config.length_min;
  j["length_max"] = config.length_max;
  j["fps"] = config.fps;
  j["noisy"] = config.noisy;
  if (config.noisy) j["noise"] = to_json(config.noise);
  j["realized_full_body_fraction"] = realized_full_body_fraction;
  j["realized_credible_fraction"] = realized_credible_fraction;
  return j;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_jsonl(path, corpus.records);
  {
    std::ofstream out(path.string() + ".manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot write manifest next to " + path.string());
    out << corpus.manifest().dump(2) << '\n';
  }
  std::ofstream truth(path.string() + ".truth.jsonl", std::ios::binary | std::ios::trunc);
  if (!truth) fail_data("cannot write truth masks next to " + path.string());
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    nlohmann::json j;
    j["id"] = corpus.records[i].id;
    auto& rows = j["credible"] = nlohmann::json::array();
    for (std::size_t f = 0; f < corpus.truth[i].rows; ++f) {
      auto row = nlohmann::json::array();
      for (int p = 0; p < kNumParts; ++p) row.push_back(corpus.truth[i](f, p) != 0);
      rows.push_back(std::move(row));
    }
    truth << j.dump() << '\n';
  }
}

}  // namespace ropar
