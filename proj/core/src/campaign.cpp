#include "bnnfi/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

#include "bnnfi/error.hpp"
#include "bnnfi/rng.hpp"

namespace bnnfi {

namespace {

// Cap on the cached clean first-layer accumulators (full-scale cnv at long
// workloads would not fit comfortably).
constexpr size_t kLayer0CacheBytes = size_t(160) << 20;

void parallel_for_index(size_t n, unsigned threads, const std::function<void(size_t)>& fn);

}  // namespace

void CampaignConfig::validate() const {
  std::vector<std::string> missing;
  if (model_path.empty()) missing.push_back("model");
  if (dataset_paths.empty()) missing.push_back("dataset paths");
  if (out_dir.empty()) missing.push_back("out_dir");
  if (!missing.empty()) {
    std::string msg = "campaign config: missing required keys:";
    for (const std::string& m : missing) msg += " " + m;
    raise(Errc::invalid_argument, msg);
  }
  if (workload_len < 1) raise(Errc::invalid_argument, "campaign config: workload_len must be >= 1");
  if (trials_per_scenario < 1)
    raise(Errc::invalid_argument, "campaign config: trials_per_scenario must be >= 1");
  if (fault_counts.empty())
    raise(Errc::invalid_argument, "campaign config: fault_counts must be non-empty");
  for (uint32_t c : fault_counts)
    if (c < 1) raise(Errc::invalid_argument, "campaign config: fault counts must be >= 1");
}

Workload Workload::prepare(const NetworkTopology& net, const DatasetSource& data, uint32_t len) {
  if (data.count() == 0) raise(Errc::empty_input, "workload: empty dataset");
  if (data.count() < len)
    raise(Errc::invalid_argument, "workload: dataset has " + std::to_string(data.count()) +
                                      " images, need " + std::to_string(len));
  const bool conv = net.layers.front().is_conv();
  const size_t in_elems = net.layers.front().in_shape.elements();
  if (data.pixels_per_image() != in_elems)
    raise(Errc::shape_mismatch, "workload: dataset geometry does not match network input");
  Workload wl;
  wl.images.reserve(len);
  wl.labels.reserve(len);
  for (uint32_t i = 0; i < len; ++i) {
    wl.images.push_back(data.image(i, conv));
    wl.labels.push_back(data.labels[i]);
  }
  return wl;
}

BaselineContext BaselineContext::compute(const NetworkTopology& net, const Workload& workload) {
  BaselineContext ctx;
  const uint32_t n = workload.size();
  ctx.predictions.resize(n);
  const size_t acc_bytes = net.layers.front().out_shape.elements() * sizeof(int32_t) * n;
  const bool cache_acc = acc_bytes <= kLayer0CacheBytes;
  if (cache_acc) ctx.layer0_acc.reserve(n);
  ActivationBuffer buffers = ActivationBuffer::for_network(net);
  ForwardScratch scratch;
  for (uint32_t i = 0; i < n; ++i) {
    IntTensor acc = layer_accumulators(net, 0, workload.images[i], nullptr, buffers);
    const ForwardResult r = forward_from_acc(net, 0, acc, nullptr, buffers, &scratch);
    ctx.predictions[i] = r.predicted_class;
    if (r.predicted_class == int(workload.labels[i])) ++ctx.correct;
    if (cache_acc) ctx.layer0_acc.push_back(std::move(acc));
  }
  return ctx;
}

double baseline_accuracy(const NetworkTopology& net, const DatasetSource& data,
                         uint32_t workload_len) {
  const Workload wl = Workload::prepare(net, data, workload_len);
  return BaselineContext::compute(net, wl).accuracy(workload_len);
}

std::string scenario_key(const std::string& network, const MapTarget& target, FaultModel model,
                         uint32_t fault_count, Persistence persistence, uint32_t workload_len) {
  return "net=" + network + "|target=" + to_string(target) + "|model=" + to_string(model) +
         "|count=" + std::to_string(fault_count) + "|persist=" + to_string(persistence) +
         "|wl=" + std::to_string(workload_len);
}

TrialOutcome run_trial_with_sites(const NetworkTopology& net, const Workload& workload,
                                  const BaselineContext& baseline, const MemoryMap& map,
                                  std::vector<FaultSite> sites, Persistence persistence,
                                  uint32_t trial_index) {
  TrialOutcome out;
  out.trial_index = trial_index;
  out.baseline_correct = baseline.correct;

  ActivationBuffer buffers = ActivationBuffer::for_network(net);
  ForwardScratch scratch;
  FaultOverlay overlay(net, map, persistence);
  overlay.attach(buffers);
  overlay.arm(sites);
  out.sites = std::move(sites);

  const uint32_t n = workload.size();
  const bool have_acc_cache = baseline.layer0_acc.size() == n;
  uint32_t correct = 0;
  for (uint32_t t = 0; t < n; ++t) {
    overlay.activate_due(t);
    int predicted;
    if (!overlay.any_applied()) {
      // Time gating: before the first fault lands, the run is bit-identical
      // to the clean baseline.
      predicted = baseline.predictions[t];
    } else if (have_acc_cache && !overlay.layer_weights_dirty(0)) {
      predicted =
          forward_from_acc(net, 0, baseline.layer0_acc[t], &overlay, buffers, &scratch)
              .predicted_class;
    } else {
      predicted = forward(net, workload.images[t], &overlay, buffers, &scratch).predicted_class;
    }
    if (predicted == int(workload.labels[t])) ++correct;
  }
  out.faulty_correct = correct;
  out.faulty_accuracy = double(correct) / n;
  out.delta = double(int64_t(out.baseline_correct) - int64_t(correct)) / n;
  out.effective = out.faulty_correct != out.baseline_correct;
  return out;
}

TrialOutcome run_trial(const NetworkTopology& net, const Workload& workload,
                       const BaselineContext& baseline, const MemoryMap& map, FaultModel model,
                       uint32_t fault_count, Persistence persistence, uint64_t master_seed,
                       uint64_t scenario_id, uint32_t trial_index) {
  SplitMix64 rng(trial_seed(master_seed, scenario_id, trial_index));
  std::vector<FaultSite> sites;
  if (fault_count > 0) sites = sample_faults(rng, fault_count, map, workload.size(), model);
  return run_trial_with_sites(net, workload, baseline, map, std::move(sites), persistence,
                              trial_index);
}

ScenarioSummary summarize(const std::vector<TrialOutcome>& outcomes, double baseline_acc) {
  if (outcomes.empty()) raise(Errc::empty_input, "summarize: no trial outcomes");
  ScenarioSummary s;
  s.trials = uint32_t(outcomes.size());
  s.baseline_accuracy = baseline_acc;
  s.deltas.reserve(outcomes.size());
  double sum = 0.0;
  uint32_t effective = 0;
  for (const TrialOutcome& o : outcomes) {
    s.deltas.push_back(o.delta);
    sum += o.delta;
    if (o.effective) ++effective;
  }
  s.mean_delta = sum / double(s.trials);
  s.mean_delta_rel_pct = baseline_acc > 0 ? 100.0 * s.mean_delta / baseline_acc : 0.0;
  s.effective_pct = 100.0 * double(effective) / double(s.trials);

  std::vector<double> sorted = s.deltas;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) {
    // Linear interpolation between order statistics (R-7).
    const double h = p * double(sorted.size() - 1);
    const size_t lo = size_t(std::floor(h));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
  };
  s.min_delta = sorted.front();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.max_delta = sorted.back();
  return s;
}

namespace {

void parallel_for_index(size_t n, unsigned threads, const std::function<void(size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = unsigned(std::min<size_t>(threads, n));
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

ScenarioResult run_scenario(const CampaignConfig& config, const NetworkTopology& net,
                            const Workload& workload, const BaselineContext& baseline,
                            const MemoryMap& map, const MapTarget& target, uint32_t fault_count) {
  const uint32_t effective_count = config.dry_run ? 0 : fault_count;
  const std::string key = scenario_key(config.network.empty() ? net.name : config.network, target,
                                       config.fault_model, effective_count, config.persistence,
                                       workload.size());
  const uint64_t scenario_id = fnv1a64(key);
  ScenarioResult result;
  result.outcomes.resize(config.trials_per_scenario);
  parallel_for_index(config.trials_per_scenario, config.threads, [&](size_t trial) {
    result.outcomes[trial] =
        run_trial(net, workload, baseline, map, config.fault_model, effective_count,
                  config.persistence, config.master_seed, scenario_id, uint32_t(trial));
  });
  result.summary = summarize(result.outcomes, baseline.accuracy(workload.size()));
  result.summary.key = key;
  result.summary.network = config.network.empty() ? net.name : config.network;
  result.summary.target = to_string(target);
  result.summary.model = to_string(config.fault_model);
  result.summary.fault_count = effective_count;
  return result;
}

}  // namespace

CampaignResult run_campaign(const CampaignConfig& config, const NetworkTopology& net,
                            const DatasetSource& data) {
  if (config.workload_len < 1 || config.trials_per_scenario < 1 || config.fault_counts.empty())
    raise(Errc::invalid_argument, "run_campaign: invalid configuration");
  const Workload workload = Workload::prepare(net, data, config.workload_len);
  const BaselineContext baseline = BaselineContext::compute(net, workload);
  const MemoryMap map = build_memory_map(net, config.target);  // rejects invalid targets up front

  CampaignResult result;
  result.workload_len = workload.size();
  result.baseline_accuracy = baseline.accuracy(workload.size());
  for (uint32_t count : config.fault_counts)
    result.scenarios.push_back(
        run_scenario(config, net, workload, baseline, map, config.target, count));
  return result;
}

CampaignResult per_layer_campaign(const CampaignConfig& config, const NetworkTopology& net,
                                  const DatasetSource& data,
                                  const std::vector<MapTarget>& targets) {
  if (targets.empty()) raise(Errc::invalid_argument, "per_layer_campaign: no targets");
  const Workload workload = Workload::prepare(net, data, config.workload_len);
  const BaselineContext baseline = BaselineContext::compute(net, workload);

  // Validate every target before any work starts.
  std::vector<MemoryMap> maps;
  for (const MapTarget& t : targets) {
    if (t.kind != MapTarget::Kind::Layer)
      raise(Errc::invalid_argument, "per_layer_campaign: targets must be layer targets");
    maps.push_back(build_memory_map(net, t));
  }

  CampaignResult result;
  result.workload_len = workload.size();
  result.baseline_accuracy = baseline.accuracy(workload.size());
  for (size_t i = 0; i < targets.size(); ++i)
    for (uint32_t count : config.fault_counts)
      result.scenarios.push_back(
          run_scenario(config, net, workload, baseline, maps[i], targets[i], count));
  return result;
}

CampaignResult replay_campaign(const CampaignConfig& config, const NetworkTopology& net,
                               const DatasetSource& data,
                               const std::vector<std::vector<FaultSite>>& sites_per_trial,
                               uint32_t fault_count) {
  const Workload workload = Workload::prepare(net, data, config.workload_len);
  const BaselineContext baseline = BaselineContext::compute(net, workload);
  const MemoryMap map = build_memory_map(net, config.target);
  for (const auto& sites : sites_per_trial)
    for (const FaultSite& s : sites) {
      if (s.bit_address >= map.total_bits)
        raise(Errc::out_of_range, "replay: fault address outside the configured target map");
      if (s.time_index >= workload.size())
        raise(Errc::out_of_range, "replay: fault time outside the workload");
    }

  CampaignResult result;
  result.workload_len = workload.size();
  result.baseline_accuracy = baseline.accuracy(workload.size());
  ScenarioResult scenario;
  scenario.outcomes.resize(sites_per_trial.size());
  parallel_for_index(sites_per_trial.size(), config.threads, [&](size_t trial) {
    scenario.outcomes[trial] = run_trial_with_sites(net, workload, baseline, map,
                                                    sites_per_trial[trial], config.persistence,
                                                    uint32_t(trial));
  });
  scenario.summary = summarize(scenario.outcomes, baseline.accuracy(workload.size()));
  scenario.summary.key = scenario_key(config.network.empty() ? net.name : config.network,
                                      config.target, config.fault_model, fault_count,
                                      config.persistence, workload.size());
  scenario.summary.network = config.network.empty() ? net.name : config.network;
  scenario.summary.target = to_string(config.target);
  scenario.summary.model = to_string(config.fault_model);
  scenario.summary.fault_count = fault_count;
  result.scenarios.push_back(std::move(scenario));
  return result;
}

}  // namespace bnnfi
