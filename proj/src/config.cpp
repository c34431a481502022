#include "demonet/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

namespace demonet::config {

namespace {

struct Default {
  const char* section;
  const char* key;
  const char* value;
};

// Paper-stated defaults where they exist: 50/25 ms framing, 300 Mel filters,
// b = 30, alpha = 1e-2, lr 5e-3, wd 1e-3, warmup 5, epochs 200, N = 5,
// seeds 123/3407, 250 Hz DEMON intervals, 30/15 s segmentation.
const Default kDefaults[] = {
    {"io", "manifest", ""},
    {"io", "cache_dir", "cache"},
    {"io", "output_dir", "out"},
    {"dsp", "sample_rate_hz", "4000"},
    {"dsp", "passband_lo_hz", "10"},
    {"dsp", "passband_hi_hz", "2000"},
    {"dsp", "frame_len_ms", "50"},
    {"dsp", "shift_ms", "25"},
    {"features", "kind", "cqt"},
    {"features", "n_mels", "300"},
    {"features", "log_eps", "1e-10"},
    {"features", "cqt_bins_per_octave", "30"},
    {"features", "cqt_f_min_hz", "0"},
    {"features", "cqt_f_max_hz", "0"},
    {"features", "cqt_hop_ms", "33.35"},
    {"features", "cqt_bin_rule", "floor"},
    {"demon", "interval_hz", "250"},
    {"demon", "lowpass_cutoff_hz", "100"},
    {"demon", "mod_f_max_hz", "100"},
    {"demon", "n_mod_bins", "1172"},
    {"demon", "n_subbands_cap", "0"},
    {"model", "n_experts", "5"},
    {"model", "n_classes", "0"},
    {"model", "alpha", "1e-2"},
    {"train", "lr", "5e-3"},
    {"train", "weight_decay", "1e-3"},
    {"train", "epochs", "200"},
    {"train", "vae_epochs", "200"},
    {"train", "warmup_epochs", "5"},
    {"train", "batch", "16"},
    {"train", "seeds", "123 3407"},
    {"train", "patience", "20"},
    {"train", "val_fraction", "0.15"},
    {"train", "segment_s", "30"},
    {"train", "hop_s", "15"},
    {"synth", "seed", "123"},
    {"synth", "n_recordings", "180"},
    {"synth", "duration_s", "90"},
    {"synth", "snr_db_min", "0"},
    {"synth", "snr_db_max", "20"},
    {"synth", "train_fraction", "0.7"},
};

const std::regex kClassKey(R"(class\.\d+\.(name|band_lo_hz|band_hi_hz|mod_hz|harmonics|depth|weight))");

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config::Config() {
  for (const auto& d : kDefaults) values_[d.section][d.key] = d.value;
  if (const char* env = std::getenv("DEMONET_CACHE_DIR")) {
    values_["io"]["cache_dir"] = env;
  }
}

void Config::validate_key(const std::string& section, const std::string& key,
                          const std::string& origin) const {
  for (const auto& d : kDefaults) {
    if (section == d.section && key == d.key) return;
  }
  if (section == "synth" && std::regex_match(key, kClassKey)) return;
  throw ConfigError(origin + ": unknown key [" + section + "] " + key);
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = origin + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside any [section]");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    cfg.validate_key(section, key, where);
    cfg.values_[section][key] = value;
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  if (s == values_.end()) return false;
  auto k = s->second.find(key);
  return k != s->second.end() && !k->second.empty();
}

std::string Config::get_str(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  if (s != values_.end()) {
    auto k = s->second.find(key);
    if (k != s->second.end()) return k->second;
  }
  throw ConfigError("config: missing [" + section + "] " + key);
}

double Config::get_num(const std::string& section, const std::string& key) const {
  const std::string v = get_str(section, key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: [" + section + "] " + key + " = '" + v +
                      "' is not a number");
  }
}

long Config::get_int(const std::string& section, const std::string& key) const {
  const double d = get_num(section, key);
  const long l = static_cast<long>(d);
  if (static_cast<double>(l) != d)
    throw ConfigError("config: [" + section + "] " + key + " must be an integer");
  return l;
}

std::vector<double> Config::get_nums(const std::string& section,
                                     const std::string& key) const {
  std::istringstream in(get_str(section, key));
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("config: [" + section + "] " + key + ": bad number '" + tok + "'");
    }
  }
  return out;
}

std::vector<long> Config::get_ints(const std::string& section,
                                   const std::string& key) const {
  std::vector<long> out;
  for (double d : get_nums(section, key)) out.push_back(static_cast<long>(d));
  return out;
}

void Config::set(const std::string& section, const std::string& key,
                 const std::string& value) {
  validate_key(section, key, "config::set");
  values_[section][key] = value;
}

std::string Config::serialize() const {
  std::ostringstream out;
  // std::map keeps sections and keys sorted: canonical by construction.
  for (const auto& [section, keys] : values_) {
    out << "[" << section << "]\n";
    for (const auto& [key, value] : keys) out << key << " = " << value << "\n";
    out << "\n";
  }
  return out.str();
}

void Config::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) throw ConfigError("config: cannot write " + path);
  f << serialize();
}

std::uint64_t Config::section_hash(const std::vector<std::string>& sections) const {
  std::ostringstream out;
  for (const auto& want : sections) {
    auto s = values_.find(want);
    if (s == values_.end()) continue;
    out << "[" << want << "]\n";
    for (const auto& [key, value] : s->second) out << key << "=" << value << "\n";
  }
  return fnv1a(out.str());
}

std::size_t Config::synth_class_count() const {
  std::size_t count = 0;
  while (has("synth", "class." + std::to_string(count) + ".name")) ++count;
  return count;
}

}  // namespace demonet::config
