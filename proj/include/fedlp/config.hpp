#pragma once

// Run configuration files.
//
// Flat `key = value` lines grouped under `[section]` headers, '#' comments,
// UTF-8. Keys are unique across sections, so a command-line override only
// needs the bare key (`--lpr=0.5`). A `[manifest]` section is accepted and
// ignored, which lets a run manifest be fed straight back in as a config.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "orchestrator.hpp"
#include "partition.hpp"
#include "pruning.hpp"

namespace fedlp {

inline constexpr const char* kToolVersion = "0.3.0";

enum class DataSource { synthetic, idx };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  SyntheticSpec synthetic;               // samples_per_class is the training count
  std::size_t test_per_class = 50;
  std::string train_images, train_labels, test_images, test_labels;
};

struct OutputConfig {
  std::string csv = "metrics.csv";
  std::string manifest;  // defaults to <csv>.manifest
};

struct RunConfig {
  ExperimentConfig experiment;
  DataConfig data;
  OutputConfig output;
  std::string lc_spec;  // lc_distribution as written, resolved once L is known

  std::filesystem::path manifest_path() const {
    return output.manifest.empty() ? std::filesystem::path(output.csv + ".manifest")
                                   : std::filesystem::path(output.manifest);
  }
};

struct ConfigEntry {
  std::string value;
  std::string origin;  // "file:line" or "--flag"
};

using ConfigMap = std::map<std::string, ConfigEntry>;

namespace detail {

struct KeyInfo {
  std::string_view key;
  std::string_view section;
};

inline constexpr KeyInfo kKeys[] = {
    {"num_clients", "experiment"},      {"participation_rate", "experiment"},
    {"local_epochs", "experiment"},     {"batch_size", "experiment"},
    {"lr", "experiment"},               {"max_global_epochs", "experiment"},
    {"eval_every", "experiment"},       {"weights", "experiment"},
    {"workers", "experiment"},          {"timing", "experiment"},
    {"scheme", "scheme"},               {"lpr", "scheme"},
    {"lc_distribution", "scheme"},      {"hidden", "model"},
    {"source", "data"},                 {"num_classes", "data"},
    {"train_per_class", "data"},        {"test_per_class", "data"},
    {"feature_dim", "data"},            {"class_separation", "data"},
    {"train_images", "data"},           {"train_labels", "data"},
    {"test_images", "data"},            {"test_labels", "data"},
    {"partition", "partition"},         {"shard_size", "partition"},
    {"shards_per_client", "partition"}, {"uniform_fraction", "partition"},
    {"alpha", "partition"},             {"csv", "output"},
    {"manifest", "output"},
};

inline const KeyInfo* find_key(std::string_view key) {
  for (const auto& k : kKeys)
    if (k.key == key) return &k;
  return nullptr;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    out.push_back(trim(s.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parses config text. Syntax problems are appended to `problems`.
inline ConfigMap parse_config_text(std::string_view text, const std::string& source,
                                   std::vector<std::string>& problems) {
  ConfigMap out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    auto line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(where + ": malformed section header");
        continue;
      }
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    if (section == "manifest") continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected key = value");
      continue;
    }
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    const auto value = detail::trim(std::string_view(line).substr(eq + 1));
    const auto* info = detail::find_key(key);
    if (!info) {
      problems.push_back(where + ": unknown key '" + key + "'");
      continue;
    }
    if (!section.empty() && info->section != section) {
      problems.push_back(where + ": key '" + key + "' belongs in [" + std::string(info->section) + "], found in [" +
                         section + "]");
      continue;
    }
    if (out.contains(key)) {
      problems.push_back(where + ": duplicate key '" + key + "' (first at " + out[key].origin + ")");
      continue;
    }
    out[key] = {value, where};
  }
  return out;
}

/// Applies `key=value` overrides on top of file entries.
inline void apply_overrides(ConfigMap& map, const std::vector<std::pair<std::string, std::string>>& overrides,
                            std::vector<std::string>& problems) {
  for (const auto& [key, value] : overrides) {
    if (!detail::find_key(key)) {
      problems.push_back("--" + key + ": unknown key");
      continue;
    }
    map[key] = {value, "--" + key};
  }
}

/// Resolves "u", "peak:<l>", "point:<l>" or an explicit comma list.
inline std::optional<std::vector<double>> resolve_lc_distribution(std::string_view spec, std::size_t L) {
  if (spec == "u" || spec == "uniform") return lc_uniform(L);
  auto indexed = [&](std::string_view prefix) -> std::optional<std::size_t> {
    if (spec.substr(0, prefix.size()) != prefix) return std::nullopt;
    auto l = detail::parse_number<std::size_t>(spec.substr(prefix.size()));
    if (!l || *l < 1 || *l > L) return std::nullopt;
    return l;
  };
  if (spec.starts_with("peak:")) {
    if (auto l = indexed("peak:")) return lc_peaked(L, *l);
    return std::nullopt;
  }
  if (spec.starts_with("point:")) {
    if (auto l = indexed("point:")) return lc_point_mass(L, *l);
    return std::nullopt;
  }
  std::vector<double> out;
  for (const auto& item : detail::split_list(spec)) {
    auto v = detail::parse_number<double>(item);
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  return out;
}

/// Builds a RunConfig from entries, collecting every invalid field.
inline RunConfig build_run_config(const ConfigMap& map, std::uint64_t seed, std::vector<std::string>& problems) {
  RunConfig rc;
  auto& ex = rc.experiment;
  ex.master_seed = seed;

  auto bad = [&](const std::string& key, const std::string& why) {
    problems.push_back(map.at(key).origin + ": " + key + " " + why);
  };
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = map.find(key);
    return it == map.end() ? nullptr : &it->second.value;
  };
  auto count = [&](const std::string& key, auto& dst) {
    if (const auto* v = get(key)) {
      if (auto n = detail::parse_number<std::size_t>(*v)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(*n);
      else bad(key, "must be a non-negative integer, got '" + *v + "'");
    }
  };
  auto real = [&](const std::string& key, double& dst) {
    if (const auto* v = get(key)) {
      if (auto n = detail::parse_number<double>(*v)) dst = *n;
      else bad(key, "must be a number, got '" + *v + "'");
    }
  };
  auto text = [&](const std::string& key, std::string& dst) {
    if (const auto* v = get(key)) dst = *v;
  };

  count("num_clients", ex.num_clients);
  real("participation_rate", ex.participation_rate);
  count("local_epochs", ex.local_epochs);
  count("batch_size", ex.batch_size);
  real("lr", ex.lr);
  count("max_global_epochs", ex.max_global_epochs);
  count("eval_every", ex.eval_every);
  count("workers", ex.workers);
  if (const auto* v = get("timing")) {
    if (*v == "true" || *v == "1") ex.timing = true;
    else if (*v == "false" || *v == "0") ex.timing = false;
    else bad("timing", "must be true or false");
  }
  if (const auto* v = get("weights")) {
    if (*v == "dataset_size") ex.weights = WeightMode::dataset_size;
    else if (*v == "uniform") ex.weights = WeightMode::uniform;
    else bad("weights", "must be dataset_size or uniform, got '" + *v + "'");
  }
  if (const auto* v = get("scheme")) {
    if (*v == "fedavg") ex.scheme = Scheme::fedavg;
    else if (*v == "fedlp_homo") ex.scheme = Scheme::fedlp_homo;
    else if (*v == "fedlp_hetero") ex.scheme = Scheme::fedlp_hetero;
    else bad("scheme", "must be fedavg, fedlp_homo or fedlp_hetero, got '" + *v + "'");
  }
  if (const auto* v = get("hidden")) {
    ex.hidden.clear();
    for (const auto& item : detail::split_list(*v)) {
      if (auto n = detail::parse_number<std::size_t>(item)) ex.hidden.push_back(*n);
      else bad("hidden", "must be a comma list of widths, got '" + *v + "'");
    }
  }
  if (const auto* v = get("lpr")) {
    ex.lpr.clear();
    for (const auto& item : detail::split_list(*v)) {
      if (auto n = detail::parse_number<double>(item)) ex.lpr.push_back(*n);
      else bad("lpr", "must be a number or comma list, got '" + *v + "'");
    }
  }
  if (const auto* v = get("lc_distribution")) {
    rc.lc_spec = *v;
    if (auto d = resolve_lc_distribution(*v, ex.num_layers())) ex.lc_distribution = *d;
    else bad("lc_distribution", "must be u, peak:<l>, point:<l> or a list of " + std::to_string(ex.num_layers()) +
                                    " probabilities, got '" + *v + "'");
  }

  if (const auto* v = get("partition")) {
    if (*v == "iid") ex.partition.scheme = PartitionScheme::iid;
    else if (*v == "mixed_shard") ex.partition.scheme = PartitionScheme::mixed_shard;
    else if (*v == "dirichlet") ex.partition.scheme = PartitionScheme::dirichlet;
    else bad("partition", "must be iid, mixed_shard or dirichlet, got '" + *v + "'");
  }
  count("shard_size", ex.partition.shard_size);
  count("shards_per_client", ex.partition.shards_per_client);
  real("uniform_fraction", ex.partition.uniform_fraction);
  real("alpha", ex.partition.alpha);

  auto& data = rc.data;
  if (const auto* v = get("source")) {
    if (*v == "synthetic") data.source = DataSource::synthetic;
    else if (*v == "idx") data.source = DataSource::idx;
    else bad("source", "must be synthetic or idx, got '" + *v + "'");
  }
  count("num_classes", data.synthetic.num_classes);
  count("train_per_class", data.synthetic.samples_per_class);
  count("test_per_class", data.test_per_class);
  count("feature_dim", data.synthetic.feature_dim);
  real("class_separation", data.synthetic.class_separation);
  text("train_images", data.train_images);
  text("train_labels", data.train_labels);
  text("test_images", data.test_images);
  text("test_labels", data.test_labels);
  if (data.source == DataSource::synthetic) {
    if (data.synthetic.num_classes < 2) problems.emplace_back("num_classes must be >= 2");
    if (data.synthetic.samples_per_class < 1) problems.emplace_back("train_per_class must be >= 1");
    if (data.test_per_class < 1) problems.emplace_back("test_per_class must be >= 1");
    if (data.synthetic.feature_dim < 1) problems.emplace_back("feature_dim must be >= 1");
    if (!(data.synthetic.class_separation > 0.0)) problems.emplace_back("class_separation must be > 0");
  } else {
    for (const auto& [key, path] : {std::pair{"train_images", &data.train_images},
                                    std::pair{"train_labels", &data.train_labels},
                                    std::pair{"test_images", &data.test_images},
                                    std::pair{"test_labels", &data.test_labels}}) {
      if (path->empty()) problems.push_back(std::string(key) + " is required for source idx");
      else if (!std::filesystem::exists(*path)) problems.push_back(std::string(key) + ": no such file " + *path);
    }
  }

  text("csv", rc.output.csv);
  text("manifest", rc.output.manifest);

  const auto ex_errs = ex.validate();
  problems.insert(problems.end(), ex_errs.begin(), ex_errs.end());
  return rc;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loads, overrides and validates; throws ConfigError listing every problem.
inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::vector<std::pair<std::string, std::string>>& overrides,
                                 std::uint64_t seed) {
  std::vector<std::string> problems;
  if (!std::filesystem::exists(path)) throw ConfigError({"config file not found: " + path.string()});
  auto map = parse_config_text(read_text_file(path), path.string(), problems);
  apply_overrides(map, overrides, problems);
  auto rc = build_run_config(map, seed, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return rc;
}

inline std::pair<Dataset, Dataset> load_data(const RunConfig& rc) {
  if (rc.data.source == DataSource::idx)
    return {load_idx(rc.data.train_images, rc.data.train_labels), load_idx(rc.data.test_images, rc.data.test_labels)};
  SyntheticSpec test_spec = rc.data.synthetic;
  test_spec.samples_per_class = rc.data.test_per_class;
  const auto seed = rc.experiment.master_seed;
  return {generate_synthetic(rc.data.synthetic, seed, Purpose::synthetic_train),
          generate_synthetic(test_spec, seed, Purpose::synthetic_test)};
}

/// Resolved configuration in the config-file format. Parsing it back yields
/// the same RunConfig.
inline std::string to_config_text(const RunConfig& rc) {
  const auto& ex = rc.experiment;
  auto list = [](const auto& values, auto fmt) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + fmt(values[i]);
    return out;
  };
  auto num = [](double v) { return detail::format_double(v); };
  auto cnt = [](std::size_t v) { return std::to_string(v); };
  constexpr const char* schemes[] = {"fedavg", "fedlp_homo", "fedlp_hetero"};
  constexpr const char* parts[] = {"iid", "mixed_shard", "dirichlet"};

  std::ostringstream o;
  o << "[experiment]\n"
    << "num_clients = " << ex.num_clients << "\n"
    << "participation_rate = " << num(ex.participation_rate) << "\n"
    << "local_epochs = " << ex.local_epochs << "\n"
    << "batch_size = " << ex.batch_size << "\n"
    << "lr = " << num(ex.lr) << "\n"
    << "max_global_epochs = " << ex.max_global_epochs << "\n"
    << "eval_every = " << ex.eval_every << "\n"
    << "weights = " << (ex.weights == WeightMode::uniform ? "uniform" : "dataset_size") << "\n"
    << "workers = " << ex.workers << "\n"
    << "timing = " << (ex.timing ? "true" : "false") << "\n"
    << "\n[scheme]\n"
    << "scheme = " << schemes[static_cast<int>(ex.scheme)] << "\n"
    << "lpr = " << list(ex.lpr, num) << "\n";
  if (!ex.lc_distribution.empty()) o << "lc_distribution = " << list(ex.lc_distribution, num) << "\n";
  o << "\n[model]\n"
    << "hidden = " << list(ex.hidden, cnt) << "\n"
    << "\n[data]\n";
  if (rc.data.source == DataSource::synthetic) {
    o << "source = synthetic\n"
      << "num_classes = " << rc.data.synthetic.num_classes << "\n"
      << "train_per_class = " << rc.data.synthetic.samples_per_class << "\n"
      << "test_per_class = " << rc.data.test_per_class << "\n"
      << "feature_dim = " << rc.data.synthetic.feature_dim << "\n"
      << "class_separation = " << num(rc.data.synthetic.class_separation) << "\n";
  } else {
    o << "source = idx\n"
      << "train_images = " << rc.data.train_images << "\n"
      << "train_labels = " << rc.data.train_labels << "\n"
      << "test_images = " << rc.data.test_images << "\n"
      << "test_labels = " << rc.data.test_labels << "\n";
  }
  o << "\n[partition]\n"
    << "partition = " << parts[static_cast<int>(ex.partition.scheme)] << "\n"
    << "shard_size = " << ex.partition.shard_size << "\n"
    << "shards_per_client = " << ex.partition.shards_per_client << "\n"
    << "uniform_fraction = " << num(ex.partition.uniform_fraction) << "\n"
    << "alpha = " << num(ex.partition.alpha) << "\n"
    << "\n[output]\n"
    << "csv = " << rc.output.csv << "\n";
  if (!rc.output.manifest.empty()) o << "manifest = " << rc.output.manifest << "\n";
  return o.str();
}

/// Manifest: run metadata followed by the resolved config.
inline std::string manifest_text(const RunConfig& rc, const std::string& command_line) {
  std::ostringstream o;
  o << "[manifest]\n"
    << "tool_version = " << kToolVersion << "\n"
    << "seed = " << rc.experiment.master_seed << "\n"
    << "csv = " << rc.output.csv << "\n"
    << "command = " << command_line << "\n\n"
    << to_config_text(rc);
  return o.str();
}

}  // namespace fedlp
