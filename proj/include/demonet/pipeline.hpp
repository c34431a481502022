#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "demonet/config.hpp"
#include "demonet/demon.hpp"
#include "demonet/features.hpp"
#include "demonet/manifest.hpp"
#include "demonet/model.hpp"

namespace demonet::pipeline {

// --- per-segment features ----------------------------------------------------

struct SegmentFeatures {
  std::vector<float> demon2d;  // [demon_rows x demon_cols], empty if not requested
  std::vector<float> spect;    // [spect_rows x spect_cols], empty if not requested
};

// Extracts (and disk-caches) features for one 30 s window of a record.
// Heavy work happens once per (file hash, window, config hash) key.
class FeatureExtractor {
 public:
  FeatureExtractor(const config::Config& cfg, bool need_demon, bool need_spect);

  // Reads, band-passes, and windows the record once; per-window features come
  // from the cache when possible.
  struct RecordFeatures {
    SegmentIndex windows;
    std::vector<SegmentFeatures> per_window;
  };
  RecordFeatures extract(const Record& rec) const;

  std::size_t demon_rows() const { return demon_rows_; }
  std::size_t demon_cols() const { return demon_cols_; }
  double segment_s() const { return segment_s_; }
  double hop_s() const { return hop_s_; }

 private:
  SegmentFeatures compute_window(const dsp::Waveform& filtered, double start_s,
                                 std::uint64_t file_hash) const;

  config::Config cfg_;
  bool need_demon_, need_spect_;
  std::string cache_dir_;
  demon::DemonConfig demon_cfg_;
  double segment_s_, hop_s_;
  std::uint64_t demon_hash_, spect_hash_;
  mutable std::size_t demon_rows_ = 0, demon_cols_ = 0;
};

// In-memory dataset over the requested records (parallel extraction).
struct Dataset {
  struct Seg {
    std::size_t record;   // index into the manifest
    std::size_t window;   // window index within the record
    double start_s;
    int label;
  };
  std::vector<Seg> segs;
  std::vector<std::vector<float>> demon_vals;
  std::vector<std::vector<float>> spect_vals;
  std::size_t demon_rows = 0, demon_cols = 0;
  std::size_t spect_rows = 0, spect_cols = 0;
  double mod_bin_hz = 0.0;
  std::vector<std::vector<std::size_t>> record_segs;  // record -> seg indices

  static Dataset build(const Manifest& m, const std::vector<std::size_t>& records,
                       const config::Config& cfg, bool need_demon, bool need_spect);
};

// Min-max scaling of a DEMON spectrum to [-1, 1]; the scale is retained so
// reconstructions can be mapped back before demon1d.
struct MinMax {
  float lo = 0.0f, hi = 1.0f;
};
MinMax minmax_of(const std::vector<float>& v);
void to_pm1(const std::vector<float>& v, const MinMax& s, float* out);
void from_pm1(const float* v, std::size_t n, const MinMax& s, float* out);

// --- training -----------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double recon_loss = 0.0, kl_loss = 0.0;       // stage 1
  double task_loss = 0.0, balance_loss = 0.0;   // stage 2
  double total_loss = 0.0;
  std::vector<long> expert_counts;              // stage 2
  double val_metric = 0.0;  // stage 1: val loss; stage 2: val accuracy
};

struct TrainResult {
  std::string checkpoint_dir;
  std::vector<EpochRecord> epochs;
  double best_val_metric = 0.0;
  int best_epoch = -1;
  std::uint64_t seed = 0;
  bool vae_params_unchanged = true;  // stage 2: frozen contract, checked bitwise
};

TrainResult train_stage1(const Manifest& m, const config::Config& cfg,
                         std::uint64_t seed, const std::string& out_dir);

TrainResult train_stage2(const Manifest& m, const config::Config& cfg,
                         const std::string& vae_ckpt_dir, std::uint64_t seed,
                         const std::string& out_dir);

// --- evaluation and reports -----------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<long>> confusion;  // [true class][predicted class]
  long n_segments = 0;
};

EvalResult evaluate(const Manifest& m, const config::Config& cfg,
                    const std::string& vae_ckpt_dir, const std::string& model_ckpt_dir,
                    const std::string& split = "test");

struct CosineReport {
  struct Row {
    std::string track_id;
    std::size_t window_a = 0, window_b = 0;
    double raw = 0.0, recon = 0.0;
  };
  std::vector<Row> rows;
  double mean_raw = 0.0, mean_recon = 0.0;
};

CosineReport cosine_similarity_report(const Manifest& m, const config::Config& cfg,
                                      const std::string& vae_ckpt_dir,
                                      const std::string& split = "train");

struct RoutingReport {
  std::vector<std::string> classes;
  std::vector<std::vector<double>> fractions;  // [class][expert], rows sum to 1
};

RoutingReport routing_report(const Manifest& m, const config::Config& cfg,
                             const std::string& vae_ckpt_dir,
                             const std::string& model_ckpt_dir,
                             const std::string& split = "train");

struct Sweep {
  double mean = 0.0, spread = 0.0;  // mean +- half-range
  std::vector<double> values;
};

Sweep seed_sweep(const std::vector<std::uint64_t>& seeds,
                 const std::function<double(std::uint64_t)>& task);
std::string format_mean_spread(const Sweep& s);

// --- synthetic corpus -----------------------------------------------------------

struct SynthResult {
  std::string manifest_path;
  std::string ground_truth_path;
  std::size_t n_recordings = 0;
};

SynthResult synthesize_corpus(const config::Config& cfg, const std::string& out_dir);

// --- checkpoints ------------------------------------------------------------------

void save_vae_checkpoint(const std::string& dir, model::VaeModel<float>& vae,
                         std::uint64_t seed, const config::Config& cfg);
model::VaeModel<float> load_vae_checkpoint(const std::string& dir);

void save_demonet_checkpoint(const std::string& dir, model::DemonetModel<float>& m,
                             std::uint64_t seed, const config::Config& cfg);
model::DemonetModel<float> load_demonet_checkpoint(const std::string& dir);

// FNV hash over all parameter and buffer bytes (frozen-contract checks).
std::uint64_t vae_param_hash(model::VaeModel<float>& vae);

void write_epoch_report(const std::string& path, const std::vector<EpochRecord>& epochs,
                        std::uint64_t seed);

}  // namespace demonet::pipeline
