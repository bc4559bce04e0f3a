#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ropar/common.hpp"
#include "ropar/skeleton.hpp"

namespace ropar {

/// Per-frame, per-joint detector confidences in [0, 1]; rows are frames.
using ConfidenceTrack = Array2<double>;
/// Joint positions, rows are frames.
using Positions = Array2<Vec3>;

/// One dataset unit: world-frame joint positions plus confidence track and prompt.
struct MotionRecord {
  std::string id;
  std::string prompt;
  double fps = 20.0;
  Positions positions;          // frames x joints, meters
  ConfidenceTrack confidences;  // frames x joints

  MotionRecord() = default;
  MotionRecord(std::string id_, std::string prompt_, double fps_, int frames_, int joints_);

  int frames() const { return static_cast<int>(positions.rows); }
  int joints() const { return static_cast<int>(positions.cols); }
  Vec3& at(int frame, int joint) { return positions(frame, joint); }
  const Vec3& at(int frame, int joint) const { return positions(frame, joint); }

  /// Throws a data error if positions are non-finite, shapes disagree,
  /// confidences leave [0,1], or there are fewer than `min_frames` frames.
  void validate(int min_frames = 2) const;

  bool operator==(const MotionRecord&) const = default;
};

nlohmann::json record_to_json(const MotionRecord& r);
MotionRecord record_from_json(const nlohmann::json& j);

/// JSON Lines corpus I/O: one MotionRecord per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<MotionRecord>& records);
std::vector<MotionRecord> read_jsonl(const std::filesystem::path& path);

}  // namespace ropar
