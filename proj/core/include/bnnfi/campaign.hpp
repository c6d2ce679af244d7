#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnnfi/fault.hpp"
#include "bnnfi/model_io.hpp"
#include "bnnfi/network.hpp"

namespace bnnfi {

struct CampaignConfig {
  std::string network;                    // display name used in keys/reports
  std::string model_path;                 // model file the campaign runs on
  DatasetKind dataset_kind = DatasetKind::MNIST_IDX;
  std::vector<std::string> dataset_paths; // MNIST: {images, labels}; CIFAR: batch files
  uint32_t workload_len = 1000;           // images per trial, in stored dataset order
  FaultModel fault_model = FaultModel::SEU;
  MapTarget target = MapTarget::weights();
  std::vector<uint32_t> fault_counts = {1, 2, 5, 10, 20, 50, 100};
  uint32_t trials_per_scenario = 2000;
  uint64_t master_seed = 1;
  Persistence persistence = Persistence::PersistentRead;
  unsigned threads = 0;                   // 0 = hardware concurrency; never changes results
  bool dry_run = false;                   // zero faults per trial (debug)
  std::string out_dir;

  void validate() const;
};

// Images of the first workload_len dataset entries, shaped for the network.
struct Workload {
  std::vector<IntTensor> images;
  std::vector<uint8_t> labels;

  uint32_t size() const { return uint32_t(labels.size()); }
  static Workload prepare(const NetworkTopology& net, const DatasetSource& data, uint32_t len);
};

// Clean-run results shared read-only across trials: per-image predictions and
// the clean first-layer accumulators (reused whenever a trial's overlay has
// not touched the first layer's weights).
struct BaselineContext {
  std::vector<int32_t> predictions;
  uint32_t correct = 0;
  std::vector<IntTensor> layer0_acc;

  double accuracy(uint32_t workload_len) const { return double(correct) / workload_len; }
  static BaselineContext compute(const NetworkTopology& net, const Workload& workload);
};

struct TrialOutcome {
  uint32_t trial_index = 0;
  std::vector<FaultSite> sites;
  uint32_t faulty_correct = 0;
  uint32_t baseline_correct = 0;
  double faulty_accuracy = 0.0;
  double delta = 0.0;       // baseline - faulty; positive = degradation
  bool effective = false;   // integer correct-counts differ
};

struct ScenarioSummary {
  std::string key;
  std::string network;
  std::string target;
  std::string model;
  uint32_t fault_count = 0;
  uint32_t trials = 0;
  double baseline_accuracy = 0.0;
  double mean_delta = 0.0;
  double mean_delta_rel_pct = 0.0;  // 100 * mean_delta / baseline_accuracy
  double effective_pct = 0.0;
  double min_delta = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max_delta = 0.0;
  std::vector<double> deltas;  // per-trial, in trial order (box-plot source)
};

struct ScenarioResult {
  ScenarioSummary summary;
  std::vector<TrialOutcome> outcomes;
};

struct CampaignResult {
  uint32_t workload_len = 0;
  double baseline_accuracy = 0.0;
  std::vector<ScenarioResult> scenarios;
};

// Fraction of correctly classified images among the first workload_len
// images, no faults.
double baseline_accuracy(const NetworkTopology& net, const DatasetSource& data,
                         uint32_t workload_len);

std::string scenario_key(const std::string& network, const MapTarget& target, FaultModel model,
                         uint32_t fault_count, Persistence persistence, uint32_t workload_len);

// One fault-injection trial: samples `fault_count` sites from the trial's
// substream (seed = trial_seed(master, fnv1a64(key), index)), replays the
// workload activating each site before the image at its time_index, and
// resets all network/overlay state afterwards (state lives only inside the
// call). fault_count == 0 runs the workload clean.
TrialOutcome run_trial(const NetworkTopology& net, const Workload& workload,
                       const BaselineContext& baseline, const MemoryMap& map, FaultModel model,
                       uint32_t fault_count, Persistence persistence, uint64_t master_seed,
                       uint64_t scenario_id, uint32_t trial_index);

// Replay variant: runs the given sites instead of sampling.
TrialOutcome run_trial_with_sites(const NetworkTopology& net, const Workload& workload,
                                  const BaselineContext& baseline, const MemoryMap& map,
                                  std::vector<FaultSite> sites, Persistence persistence,
                                  uint32_t trial_index);

// Aggregation: signed mean delta, relative %, effective-trial %, and order
// statistics (quartiles by linear interpolation) of the delta multiset.
ScenarioSummary summarize(const std::vector<TrialOutcome>& outcomes, double baseline_acc);

// Full sweep over config.fault_counts for the configured target. Trials may
// run on config.threads workers; results are identical to sequential
// execution (per-trial seeding, index-ordered aggregation).
CampaignResult run_campaign(const CampaignConfig& config, const NetworkTopology& net,
                            const DatasetSource& data);

// One scenario sweep per requested Layer(k, kind) target.
CampaignResult per_layer_campaign(const CampaignConfig& config, const NetworkTopology& net,
                                  const DatasetSource& data, const std::vector<MapTarget>& targets);

// Re-runs trials from previously exported fault sites (one scenario).
CampaignResult replay_campaign(const CampaignConfig& config, const NetworkTopology& net,
                               const DatasetSource& data,
                               const std::vector<std::vector<FaultSite>>& sites_per_trial,
                               uint32_t fault_count);

}  // namespace bnnfi
