#pragma once

#include <string>
#include <vector>

#include "demonet/common.hpp"

namespace demonet::pipeline {

struct Record {
  std::string path;
  std::string label;
  std::string track_id;
  std::string split;  // train | val | test
};

struct Manifest {
  std::vector<Record> records;
  std::vector<std::string> classes;  // sorted unique labels

  static Manifest load(const std::string& csv_path);
  void save(const std::string& csv_path) const;
  int class_index(const std::string& label) const;
  std::vector<std::size_t> split_indices(const std::string& split) const;
};

// Track ids that appear in more than one split ("ok" iff empty).
std::vector<std::string> validate_split(const Manifest& m);

// 30 s windows with a 15 s hop, fully inside the recording.
struct SegmentIndex {
  std::vector<double> starts_s;
  double segment_s = 30.0;
};

SegmentIndex segment_index(double duration_s, double segment_s = 30.0,
                           double hop_s = 15.0);

// Two distinct window indices from the same recording, uniform over ordered
// distinct pairs; a single-window recording pairs with itself and sets
// *degenerate. Deterministic given the rng state.
std::pair<std::size_t, std::size_t> sample_cross_temporal_pair(
    std::size_t n_windows, Rng& rng, bool* degenerate = nullptr);

}  // namespace demonet::pipeline
