// bnnfi command-line frontend: training, evaluation, fault-injection
// campaigns, per-layer sweeps, replay, and topology inspection.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "bnnfi/campaign.hpp"
#include "bnnfi/error.hpp"
#include "bnnfi/model_io.hpp"
#include "bnnfi/report.hpp"
#include "bnnfi/synth.hpp"
#include "bnnfi/trainer.hpp"

namespace {

using namespace bnnfi;

// Flag values override config-file values; config-file values override
// defaults. Empty string / 0 sentinel means "not set on the command line".
struct CommonArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

std::map<std::string, std::string> merged_config(const CommonArgs& args) {
  std::map<std::string, std::string> kv;
  if (!args.config_path.empty()) kv = parse_config_file(args.config_path);
  for (const auto& [k, v] : args.overrides) kv[k] = v;
  // Environment default for worker threads; never changes results.
  if (kv.find("threads") == kv.end()) {
    if (const char* env = std::getenv("BNNFI_THREADS")) kv["threads"] = env;
  }
  return kv;
}

void add_override_flag(CLI::App* cmd, CommonArgs& args, const std::string& key,
                       const std::string& description) {
  cmd->add_option_function<std::string>(
      "--" + key, [&args, key](const std::string& v) { args.overrides[key] = v; }, description);
}

void add_campaign_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key = value config file");
  for (const char* key : {"network", "model", "dataset_kind", "dataset", "workload_len",
                          "fault_model", "target", "fault_counts", "trials_per_scenario",
                          "master_seed", "persistence", "threads", "out_dir", "dry_run"})
    add_override_flag(cmd, args, key, std::string("override config key '") + key + "'");
}

NetworkTopology build_topology_spec(const std::string& spec) {
  // lfc:<width>:<precision> | cnv:<precision> | cnv:<c0>:<fc>:<precision>
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(spec);
  while (std::getline(in, item, ':')) parts.push_back(item);
  auto precision_of = [](const std::string& p) {
    if (p == "w1a1" || p == "W1A1") return Precision::W1A1;
    if (p == "w2a2" || p == "W2A2") return Precision::W2A2;
    if (p == "w1a2" || p == "W1A2") return Precision::W1A2;
    raise(Errc::invalid_argument, "bad precision '" + p + "'");
  };
  if (parts.size() == 3 && parts[0] == "lfc")
    return build_lfc(uint32_t(std::stoul(parts[1])), precision_of(parts[2]));
  if (parts.size() == 2 && parts[0] == "cnv") return build_cnv(precision_of(parts[1]));
  if (parts.size() == 4 && parts[0] == "cnv")
    return build_cnv_plan(precision_of(parts[3]), uint32_t(std::stoul(parts[1])),
                          uint32_t(std::stoul(parts[2])));
  raise(Errc::invalid_argument,
        "bad topology '" + spec + "' (lfc:<width>:<prec> | cnv:<prec> | cnv:<c0>:<fc>:<prec>)");
}

void print_info(const NetworkTopology& net) {
  std::cout << "network: " << net.name << "\n";
  std::cout << "precision: " << to_string(net.precision) << "\n";
  std::cout << "layers:\n";
  auto shape_str = [](const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.dims.size(); ++i)
      out += (i ? "x" : "") + std::to_string(s.dims[i]);
    return out + "]";
  };
  for (size_t k = 0; k < net.layers.size(); ++k) {
    const LayerSpec& l = net.layers[k];
    std::cout << "  " << k << ": " << to_string(l.kind) << " " << shape_str(l.in_shape) << " -> "
              << shape_str(l.out_shape) << "  weight_bits=" << l.weight_bits()
              << "  activation_bits=" << l.activation_bits(net.precision) << "\n";
  }
  std::cout << "susceptible bits (weights): " << count_susceptible_bits(net, CountTarget::Weights)
            << "\n";
  std::cout << "susceptible bits (activations): "
            << count_susceptible_bits(net, CountTarget::Activations) << "\n";
  std::cout << "susceptible bits (both): " << count_susceptible_bits(net, CountTarget::Both)
            << "\n";
}

std::map<std::string, std::string> snapshot_for_manifest(
    const std::map<std::string, std::string>& kv) {
  return kv;  // already a flat, sorted view of the effective configuration
}

int cmd_info(const std::string& model_path, const std::string& topology) {
  if (!topology.empty()) {
    print_info(build_topology_spec(topology));
    return 0;
  }
  if (model_path.empty()) raise(Errc::invalid_argument, "info: need --model or --topology");
  print_info(load_model_file(model_path));
  return 0;
}

int cmd_synth(const std::string& kind, const std::string& out_dir, size_t count, uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);
  if (kind == "mnist") {
    const DatasetSource ds = make_synth_digits(DatasetKind::MNIST_IDX, count, seed);
    const auto images = dir / "synth-images-idx3-ubyte";
    const auto labels = dir / "synth-labels-idx1-ubyte";
    write_idx_files(ds, images.string(), labels.string());
    std::cout << "wrote " << images.string() << " and " << labels.string() << " (" << count
              << " images, seed " << seed << ")\n";
    return 0;
  }
  if (kind == "cifar") {
    const DatasetSource ds = make_synth_digits(DatasetKind::CIFAR10_BIN, count, seed);
    const auto batch = dir / "synth_batch.bin";
    write_cifar10_bin(ds, batch.string());
    std::cout << "wrote " << batch.string() << " (" << count << " images, seed " << seed << ")\n";
    return 0;
  }
  raise(Errc::invalid_argument, "synth: kind must be mnist or cifar");
}

int cmd_train(const CommonArgs& args, const std::string& topology, const std::string& out_model,
              const std::string& log_path, int epochs, int batch_size, double lr, double lr_decay,
              double momentum, uint64_t seed) {
  const auto kv = merged_config(args);
  const auto kind_it = kv.find("dataset_kind");
  const auto data_it = kv.find("dataset");
  if (kind_it == kv.end() || data_it == kv.end())
    raise(Errc::invalid_argument, "train: missing required keys: dataset_kind dataset");
  const DatasetKind kind = parse_dataset_kind(kind_it->second);
  std::vector<std::string> paths;
  std::istringstream in(data_it->second);
  std::string p;
  while (std::getline(in, p, ',')) {
    const size_t b = p.find_first_not_of(' ');
    const size_t e = p.find_last_not_of(' ');
    if (b != std::string::npos) paths.push_back(p.substr(b, e - b + 1));
  }
  const DatasetSource data = load_dataset(kind, paths);

  NetworkTopology skeleton = build_topology_spec(topology);
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.lr = lr;
  cfg.lr_decay = lr_decay;
  cfg.momentum = momentum;
  cfg.seed = seed;
  std::vector<EpochLog> log;
  const ShadowModel shadow = train_ste(skeleton, data, cfg, &data, &log);
  const NetworkTopology net = export_topology(shadow);
  save_model_file(net, out_model);
  if (!log_path.empty()) {
    std::ofstream out(log_path, std::ios::trunc);
    if (!out) raise(Errc::io_failure, "cannot write '" + log_path + "'");
    write_training_log_csv(out, log);
  }
  {
    std::map<std::string, std::string> snapshot = kv;
    snapshot["topology"] = topology;
    snapshot["out_model"] = out_model;
    snapshot["epochs"] = std::to_string(epochs);
    snapshot["batch_size"] = std::to_string(batch_size);
    snapshot["lr"] = std::to_string(lr);
    snapshot["lr_decay"] = std::to_string(lr_decay);
    snapshot["momentum"] = std::to_string(momentum);
    std::ofstream out(out_model + ".manifest.json", std::ios::trunc);
    if (out) write_manifest_json(out, "train", snapshot, seed, {});
  }
  std::cout << "trained " << net.name << " -> " << out_model;
  if (!log.empty()) std::cout << " (final train accuracy " << log.back().test_accuracy << ")";
  std::cout << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  const auto kv = merged_config(args);
  const CampaignConfig cfg = campaign_config_from(kv);
  const NetworkTopology net = load_model_file(cfg.model_path);
  const DatasetSource data = load_dataset(cfg.dataset_kind, cfg.dataset_paths);
  const double acc = baseline_accuracy(net, data, cfg.workload_len);
  std::cout << "baseline_accuracy " << acc << " over " << cfg.workload_len << " images\n";
  return 0;
}

int cmd_campaign(const CommonArgs& args) {
  const auto kv = merged_config(args);
  const CampaignConfig cfg = campaign_config_from(kv);
  const NetworkTopology net = load_model_file(cfg.model_path);
  const DatasetSource data = load_dataset(cfg.dataset_kind, cfg.dataset_paths);
  const CampaignResult result = run_campaign(cfg, net, data);
  const auto written = emit_reports(result, cfg.out_dir, "campaign", snapshot_for_manifest(kv),
                                    cfg.master_seed, false);
  for (const auto& p : written) std::cout << "wrote " << p << "\n";
  return 0;
}

int cmd_layers(const CommonArgs& args, const std::string& layer_list) {
  const auto kv = merged_config(args);
  const CampaignConfig cfg = campaign_config_from(kv);
  const NetworkTopology net = load_model_file(cfg.model_path);
  const DatasetSource data = load_dataset(cfg.dataset_kind, cfg.dataset_paths);

  std::vector<MapTarget> targets;
  if (layer_list == "all" || layer_list.empty()) {
    for (size_t k = 0; k < net.layers.size(); ++k) {
      if (net.layers[k].has_weights()) targets.push_back(MapTarget::layer(k, StorageKind::Weights));
      if (net.layers[k].activation_bits(net.precision) > 0)
        targets.push_back(MapTarget::layer(k, StorageKind::Activations));
    }
  } else {
    std::istringstream in(layer_list);
    std::string item;
    while (std::getline(in, item, ';')) targets.push_back(parse_map_target(item));
  }
  const CampaignResult result = per_layer_campaign(cfg, net, data, targets);
  const auto written =
      emit_reports(result, cfg.out_dir, "layers", snapshot_for_manifest(kv), cfg.master_seed, true);
  for (const auto& p : written) std::cout << "wrote " << p << "\n";
  return 0;
}

int cmd_replay(const CommonArgs& args, const std::string& sites_path) {
  const auto kv = merged_config(args);
  const CampaignConfig cfg = campaign_config_from(kv);
  const NetworkTopology net = load_model_file(cfg.model_path);
  const DatasetSource data = load_dataset(cfg.dataset_kind, cfg.dataset_paths);
  std::ifstream in(sites_path);
  if (!in) raise(Errc::io_failure, "cannot open '" + sites_path + "'");
  const auto sites = read_fault_sites_csv(in);
  uint32_t fault_count = 0;
  for (const auto& trial : sites) fault_count = std::max(fault_count, uint32_t(trial.size()));
  const CampaignResult result = replay_campaign(cfg, net, data, sites, fault_count);
  auto snapshot = snapshot_for_manifest(kv);
  snapshot["replay_sites"] = sites_path;
  const auto written =
      emit_reports(result, cfg.out_dir, "replay", snapshot, cfg.master_seed, false);
  for (const auto& p : written) std::cout << "wrote " << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bit-exact BNN inference engine and soft-error fault-injection simulator"};
  app.require_subcommand(1);

  // info
  auto* info = app.add_subcommand("info", "print a topology table with susceptible-bit counts");
  std::string info_model, info_topology;
  info->add_option("--model", info_model, "model file to inspect");
  info->add_option("--topology", info_topology,
                   "builder spec (lfc:<width>:<prec> | cnv:<prec> | cnv:<c0>:<fc>:<prec>)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic digit dataset on disk");
  std::string synth_kind = "mnist", synth_out = ".";
  size_t synth_count = 14000;
  uint64_t synth_seed = 1;
  synth->add_option("--kind", synth_kind, "mnist (28x28 IDX) or cifar (32x32x3 batch)");
  synth->add_option("--out_dir", synth_out, "output directory");
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--seed", synth_seed, "generator seed");

  // train
  auto* train = app.add_subcommand("train", "train a model and write a model file");
  CommonArgs train_args;
  train->add_option("--config", train_args.config_path, "flat key = value config file");
  for (const char* key : {"dataset_kind", "dataset"})
    add_override_flag(train, train_args, key, std::string("override config key '") + key + "'");
  std::string train_topology = "lfc:256:w1a1", train_out = "model.bnn", train_log;
  int train_epochs = 16, train_batch = 100;
  double train_lr = 0.03, train_decay = 0.92, train_momentum = 0.9;
  uint64_t train_seed = 101;
  train->add_option("--topology", train_topology, "builder spec");
  train->add_option("--out_model", train_out, "output model path");
  train->add_option("--log", train_log, "training log CSV path");
  train->add_option("--epochs", train_epochs, "training epochs");
  train->add_option("--batch_size", train_batch, "batch size");
  train->add_option("--lr", train_lr, "initial learning rate");
  train->add_option("--lr_decay", train_decay, "multiplicative epoch decay");
  train->add_option("--momentum", train_momentum, "SGD momentum");
  train->add_option("--seed", train_seed, "training seed");

  // eval / campaign / layers / replay share the campaign config surface
  auto* eval = app.add_subcommand("eval", "fault-free baseline accuracy");
  CommonArgs eval_args;
  add_campaign_flags(eval, eval_args);

  auto* campaign = app.add_subcommand("campaign", "run a fault-injection campaign");
  CommonArgs campaign_args;
  add_campaign_flags(campaign, campaign_args);

  auto* layers = app.add_subcommand("layers", "per-layer vulnerability sweep");
  CommonArgs layers_args;
  std::string layer_list = "all";
  add_campaign_flags(layers, layers_args);
  layers->add_option("--layers", layer_list,
                     "semicolon-separated layer targets (layer:<k>:<kind>) or 'all'");

  auto* replay = app.add_subcommand("replay", "re-run trials from a fault-site CSV");
  CommonArgs replay_args;
  std::string sites_path;
  add_campaign_flags(replay, replay_args);
  replay->add_option("--sites", sites_path, "fault-site CSV exported by a campaign")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*info) return cmd_info(info_model, info_topology);
    if (*synth) return cmd_synth(synth_kind, synth_out, synth_count, synth_seed);
    if (*train)
      return cmd_train(train_args, train_topology, train_out, train_log, train_epochs, train_batch,
                       train_lr, train_decay, train_momentum, train_seed);
    if (*eval) return cmd_eval(eval_args);
    if (*campaign) return cmd_campaign(campaign_args);
    if (*layers) return cmd_layers(layers_args, layer_list);
    if (*replay) return cmd_replay(replay_args, sites_path);
  } catch (const bnnfi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
