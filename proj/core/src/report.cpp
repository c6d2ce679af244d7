#include "bnnfi/report.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bnnfi/error.hpp"

namespace bnnfi {

namespace {

std::string trim(const std::string& s) {
  const size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Fixed-precision decimal; deltas are exact multiples of 1/workload_len, so
// six digits round-trip every value a campaign can produce.
std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  return parts;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t v = 0;
  const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size())
    raise(Errc::invalid_argument, "config: bad integer for '" + key + "': " + value);
  return v;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      raise(Errc::invalid_argument,
            "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      raise(Errc::invalid_argument, "config line " + std::to_string(line_no) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_failure, "cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "mnist_idx") return DatasetKind::MNIST_IDX;
  if (text == "cifar10_bin") return DatasetKind::CIFAR10_BIN;
  raise(Errc::invalid_argument, "config: bad dataset_kind '" + text +
                                    "' (expected mnist_idx | cifar10_bin)");
}

CampaignConfig campaign_config_from(const std::map<std::string, std::string>& kv) {
  CampaignConfig cfg;
  std::vector<std::string> missing;
  auto require = [&](const char* key) -> std::string {
    const auto it = kv.find(key);
    if (it == kv.end() || it->second.empty()) {
      missing.push_back(key);
      return "";
    }
    return it->second;
  };
  auto optional = [&](const char* key, const std::string& fallback) -> std::string {
    const auto it = kv.find(key);
    return it == kv.end() || it->second.empty() ? fallback : it->second;
  };

  cfg.model_path = require("model");
  const std::string kind = require("dataset_kind");
  const std::string dataset = require("dataset");
  cfg.out_dir = require("out_dir");
  if (!missing.empty()) {
    std::string msg = "campaign config: missing required keys:";
    for (const std::string& m : missing) msg += " " + m;
    raise(Errc::invalid_argument, msg);
  }
  cfg.dataset_kind = parse_dataset_kind(kind);
  cfg.dataset_paths = split(dataset, ',');
  cfg.network = optional("network", "");
  cfg.workload_len = uint32_t(parse_u64("workload_len", optional("workload_len", "1000")));
  cfg.trials_per_scenario =
      uint32_t(parse_u64("trials_per_scenario", optional("trials_per_scenario", "2000")));
  cfg.master_seed = parse_u64("master_seed", optional("master_seed", "1"));
  cfg.threads = unsigned(parse_u64("threads", optional("threads", "0")));

  const std::string model = optional("fault_model", "seu");
  if (model == "seu")
    cfg.fault_model = FaultModel::SEU;
  else if (model == "mbu8")
    cfg.fault_model = FaultModel::MBU8;
  else
    raise(Errc::invalid_argument, "config: bad fault_model '" + model + "' (expected seu | mbu8)");

  cfg.target = parse_map_target(optional("target", "weights"));

  const std::string persist = optional("persistence", "persistent_read");
  if (persist == "persistent_read")
    cfg.persistence = Persistence::PersistentRead;
  else if (persist == "transient_write")
    cfg.persistence = Persistence::TransientWrite;
  else
    raise(Errc::invalid_argument, "config: bad persistence '" + persist +
                                      "' (expected persistent_read | transient_write)");

  cfg.fault_counts.clear();
  for (const std::string& c : split(optional("fault_counts", "1,2,5,10,20,50,100"), ','))
    if (!c.empty()) cfg.fault_counts.push_back(uint32_t(parse_u64("fault_counts", c)));

  const std::string dry = optional("dry_run", "false");
  cfg.dry_run = dry == "true" || dry == "1";

  cfg.validate();
  return cfg;
}

DatasetSource load_dataset(DatasetKind kind, const std::vector<std::string>& paths) {
  if (kind == DatasetKind::MNIST_IDX) {
    if (paths.size() != 2)
      raise(Errc::invalid_argument, "MNIST dataset needs exactly two paths (images, labels)");
    return load_mnist_idx(paths[0], paths[1]);
  }
  if (paths.empty()) raise(Errc::invalid_argument, "CIFAR dataset needs at least one batch path");
  return load_cifar10_bin(paths);
}

// ---------------------------------------------------------------------------
// Writers

void write_trial_csv(std::ostream& out, const CampaignResult& result) {
  out << "scenario,trial,fault_count,faulty_correct,baseline_correct,delta,effective\n";
  for (const ScenarioResult& sc : result.scenarios)
    for (const TrialOutcome& t : sc.outcomes)
      out << sc.summary.key << ',' << t.trial_index << ',' << sc.summary.fault_count << ','
          << t.faulty_correct << ',' << t.baseline_correct << ',' << fmt(t.delta) << ','
          << (t.effective ? 1 : 0) << '\n';
}

void write_summary_csv(std::ostream& out, const CampaignResult& result) {
  out << "scenario,network,target,model,fault_count,trials,baseline_accuracy,"
         "mean_delta,mean_delta_rel_pct,effective_pct,min_delta,q1,median,q3,max_delta\n";
  for (const ScenarioResult& sc : result.scenarios) {
    const ScenarioSummary& s = sc.summary;
    out << s.key << ',' << s.network << ',' << s.target << ',' << s.model << ',' << s.fault_count
        << ',' << s.trials << ',' << fmt(s.baseline_accuracy) << ',' << fmt(s.mean_delta) << ','
        << fmt(s.mean_delta_rel_pct) << ',' << fmt(s.effective_pct) << ',' << fmt(s.min_delta)
        << ',' << fmt(s.q1) << ',' << fmt(s.median) << ',' << fmt(s.q3) << ',' << fmt(s.max_delta)
        << '\n';
  }
}

void write_summary_json(std::ostream& out, const CampaignResult& result) {
  nlohmann::ordered_json root;
  root["workload_len"] = result.workload_len;
  root["baseline_accuracy"] = result.baseline_accuracy;
  nlohmann::ordered_json scenarios = nlohmann::ordered_json::array();
  for (const ScenarioResult& sc : result.scenarios) {
    const ScenarioSummary& s = sc.summary;
    nlohmann::ordered_json j;
    j["scenario"] = s.key;
    j["network"] = s.network;
    j["target"] = s.target;
    j["model"] = s.model;
    j["fault_count"] = s.fault_count;
    j["trials"] = s.trials;
    j["baseline_accuracy"] = s.baseline_accuracy;
    j["mean_delta"] = s.mean_delta;
    j["mean_delta_rel_pct"] = s.mean_delta_rel_pct;
    j["effective_pct"] = s.effective_pct;
    j["min_delta"] = s.min_delta;
    j["q1"] = s.q1;
    j["median"] = s.median;
    j["q3"] = s.q3;
    j["max_delta"] = s.max_delta;
    j["deltas"] = s.deltas;
    scenarios.push_back(std::move(j));
  }
  root["scenarios"] = std::move(scenarios);
  out << root.dump(2) << '\n';
}

void write_layer_matrix_csv(std::ostream& out, const CampaignResult& result) {
  out << "layer,storage,model,fault_count,trials,mean_delta,mean_delta_rel_pct,effective_pct,"
         "max_delta\n";
  for (const ScenarioResult& sc : result.scenarios) {
    const ScenarioSummary& s = sc.summary;
    const MapTarget target = parse_map_target(s.target);
    out << target.layer_index << ',' << to_string(target.storage) << ',' << s.model << ','
        << s.fault_count << ',' << s.trials << ',' << fmt(s.mean_delta) << ','
        << fmt(s.mean_delta_rel_pct) << ',' << fmt(s.effective_pct) << ',' << fmt(s.max_delta)
        << '\n';
  }
}

void write_manifest_json(std::ostream& out, const std::string& command,
                         const std::map<std::string, std::string>& config_snapshot,
                         uint64_t master_seed, const std::vector<std::string>& scenario_keys) {
  nlohmann::ordered_json root;
  root["version"] = kVersion;
  root["command"] = command;
  root["master_seed"] = master_seed;
  nlohmann::ordered_json cfg;
  for (const auto& [k, v] : config_snapshot) cfg[k] = v;  // std::map order: sorted, stable
  root["config"] = std::move(cfg);
  root["scenarios"] = scenario_keys;
  out << root.dump(2) << '\n';
}

std::string sanitize_slug(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    else if (!out.empty() && out.back() != '-')
      out.push_back('-');
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

std::vector<std::string> emit_reports(const CampaignResult& result, const std::string& out_dir,
                                      const std::string& command,
                                      const std::map<std::string, std::string>& config_snapshot,
                                      uint64_t master_seed, bool layer_matrix) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) raise(Errc::io_failure, "cannot create output directory '" + out_dir + "'");

  std::vector<std::string> written;
  auto open = [&](const std::string& name) {
    const std::string path = (fs::path(out_dir) / name).string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::io_failure, "cannot write '" + path + "'");
    written.push_back(path);
    return out;
  };

  {
    auto out = open("trials.csv");
    write_trial_csv(out, result);
  }
  {
    auto out = open("summary.csv");
    write_summary_csv(out, result);
  }
  {
    auto out = open("summary.json");
    write_summary_json(out, result);
  }
  if (layer_matrix) {
    auto out = open("layers.csv");
    write_layer_matrix_csv(out, result);
  }
  for (const ScenarioResult& sc : result.scenarios) {
    auto out = open("faults-" + sanitize_slug(sc.summary.key) + ".csv");
    std::vector<std::vector<FaultSite>> sites;
    sites.reserve(sc.outcomes.size());
    for (const TrialOutcome& t : sc.outcomes) sites.push_back(t.sites);
    write_fault_sites_csv(out, sites);
  }
  {
    auto out = open("manifest.json");
    std::vector<std::string> keys;
    for (const ScenarioResult& sc : result.scenarios) keys.push_back(sc.summary.key);
    write_manifest_json(out, command, config_snapshot, master_seed, keys);
  }
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace bnnfi
