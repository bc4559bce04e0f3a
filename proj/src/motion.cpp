#include "ropar/motion.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ropar {

MotionRecord::MotionRecord(std::string id_, std::string prompt_, double fps_, int frames_, int joints_)
    : id(std::move(id_)),
      prompt(std::move(prompt_)),
      fps(fps_),
      positions(frames_, joints_, Vec3::Zero()),
      confidences(frames_, joints_, 1.0) {}

void MotionRecord::validate(int min_frames) const {
  if (frames() < min_frames)
    fail_data("record " + id + " has " + std::to_string(frames()) + " frames, need >= " +
              std::to_string(min_frames));
  if (positions.data.size() != positions.rows * positions.cols)
    fail_data("record " + id + " position array does not match frames x joints");
  if (confidences.rows != positions.rows || confidences.cols != positions.cols)
    fail_data("record " + id + " confidence track shape does not match positions");
  for (const auto& p : positions.data)
    if (!p.allFinite()) fail_data("record " + id + " has non-finite positions");
  for (double c : confidences.data)
    if (!(c >= 0.0 && c <= 1.0)) fail_data("record " + id + " has confidence outside [0,1]");
  if (!(fps > 0.0)) fail_data("record " + id + " has non-positive fps");
}

nlohmann::json record_to_json(const MotionRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["prompt"] = r.prompt;
  j["fps"] = r.fps;
  auto& pos = j["positions"] = nlohmann::json::array();
  auto& conf = j["confidences"] = nlohmann::json::array();
  for (int i = 0; i < r.frames(); ++i) {
    auto frame = nlohmann::json::array();
    auto frame_conf = nlohmann::json::array();
    for (int k = 0; k < r.joints(); ++k) {
      const Vec3& p = r.at(i, k);
      frame.push_back({p.x(), p.y(), p.z()});
      frame_conf.push_back(r.confidences(i, k));
    }
    pos.push_back(std::move(frame));
    conf.push_back(std::move(frame_conf));
  }
  return j;
}

MotionRecord record_from_json(const nlohmann::json& j) {
  try {
    const auto& pos = j.at("positions");
    const auto& conf = j.at("confidences");
    const int frames = static_cast<int>(pos.size());
    const int joints = frames > 0 ? static_cast<int>(pos.at(0).size()) : 0;
    MotionRecord r(j.at("id").get<std::string>(), j.at("prompt").get<std::string>(),
                   j.at("fps").get<double>(), frames, joints);
    if (static_cast<int>(conf.size()) != frames) fail_data("record " + r.id + ": confidence frame count");
    for (int i = 0; i < frames; ++i) {
      if (static_cast<int>(pos[i].size()) != joints || static_cast<int>(conf[i].size()) != joints)
        fail_data("record " + r.id + ": ragged joint arrays at frame " + std::to_string(i));
      for (int k = 0; k < joints; ++k) {
        const auto& p = pos[i][k];
        r.at(i, k) = Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
        r.confidences(i, k) = conf[i][k].get<double>();
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("malformed motion record: ") + e.what());
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<MotionRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) fail_data("write failed: " + path.string());
}

std::vector<MotionRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open corpus " + path.string());
  std::vector<MotionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail_data(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

}  // namespace ropar
