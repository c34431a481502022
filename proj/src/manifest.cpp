#include "demonet/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace demonet::pipeline {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

Manifest Manifest::load(const std::string& csv_path) {
  std::ifstream f(csv_path);
  require(f.good(), "manifest: cannot open " + csv_path);
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), "manifest: empty file " + csv_path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "path,label,track_id,split",
          "manifest: bad header in " + csv_path + " (expected path,label,track_id,split)");
  Manifest m;
  std::set<std::string> labels;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    require(fields.size() == 4, "manifest: " + csv_path + ":" +
                                     std::to_string(lineno) + ": expected 4 fields");
    Record r{fields[0], fields[1], fields[2], fields[3]};
    require(!r.path.empty() && !r.label.empty() && !r.track_id.empty(),
            "manifest: " + csv_path + ":" + std::to_string(lineno) + ": empty field");
    require(r.split == "train" || r.split == "val" || r.split == "test",
            "manifest: " + csv_path + ":" + std::to_string(lineno) +
                ": split must be train|val|test, got '" + r.split + "'");
    std::ifstream probe(r.path, std::ios::binary);
    require(probe.good(), "manifest: " + csv_path + ":" + std::to_string(lineno) +
                              ": file does not exist: " + r.path);
    labels.insert(r.label);
    m.records.push_back(std::move(r));
  }
  require(!m.records.empty(), "manifest: no records in " + csv_path);
  m.classes.assign(labels.begin(), labels.end());
  return m;
}

void Manifest::save(const std::string& csv_path) const {
  std::ofstream f(csv_path, std::ios::trunc);
  require(f.good(), "manifest: cannot write " + csv_path);
  f << "path,label,track_id,split\n";
  for (const auto& r : records)
    f << r.path << "," << r.label << "," << r.track_id << "," << r.split << "\n";
}

int Manifest::class_index(const std::string& label) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), label);
  require(it != classes.end() && *it == label, "manifest: unknown label " + label);
  return static_cast<int>(it - classes.begin());
}

std::vector<std::size_t> Manifest::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::string> validate_split(const Manifest& m) {
  std::map<std::string, std::set<std::string>> track_splits;
  for (const auto& r : m.records) track_splits[r.track_id].insert(r.split);
  std::vector<std::string> violations;
  for (const auto& [track, splits] : track_splits) {
    if (splits.size() > 1) {
      std::string msg = track + " appears in splits:";
      for (const auto& s : splits) msg += " " + s;
      violations.push_back(msg);
    }
  }
  return violations;
}

SegmentIndex segment_index(double duration_s, double segment_s, double hop_s) {
  require(segment_s > 0.0 && hop_s > 0.0, "segment_index: bad geometry");
  require(duration_s + 1e-9 >= segment_s,
          "segment_index: recording shorter than one segment (" +
              std::to_string(duration_s) + " s < " + std::to_string(segment_s) + " s)");
  SegmentIndex idx;
  idx.segment_s = segment_s;
  for (std::size_t i = 0;; ++i) {
    const double start = hop_s * static_cast<double>(i);
    if (start + segment_s > duration_s + 1e-9) break;
    idx.starts_s.push_back(start);
  }
  return idx;
}

std::pair<std::size_t, std::size_t> sample_cross_temporal_pair(
    std::size_t n_windows, Rng& rng, bool* degenerate) {
  require(n_windows >= 1, "sample_cross_temporal_pair: no windows");
  if (degenerate) *degenerate = false;
  if (n_windows == 1) {
    if (degenerate) *degenerate = true;
    return {0, 0};
  }
  const std::size_t a = rng.below(n_windows);
  std::size_t b = rng.below(n_windows - 1);
  if (b >= a) ++b;
  return {a, b};
}

}  // namespace demonet::pipeline
