#include <benchmark/benchmark.h>

#include "bnnfi/campaign.hpp"
#include "bnnfi/synth.hpp"
#include "bnnfi/trainer.hpp"

using namespace bnnfi;

namespace {

// One trial of a 200-image SEU campaign against activations; covers the
// whole per-trial path (seeding, sampling, overlay, cached forward).
void BM_ActivationSeuTrial(benchmark::State& state) {
  static const DatasetSource data = make_synth_digits(DatasetKind::MNIST_IDX, 300, 1);
  static const NetworkTopology net = [] {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 50;
    cfg.seed = 1;
    return export_topology(train_ste(build_lfc(64, Precision::W1A1), data, cfg));
  }();
  static const Workload workload = Workload::prepare(net, data, 200);
  static const BaselineContext baseline = BaselineContext::compute(net, workload);
  static const MemoryMap map = build_memory_map(net, MapTarget::activations());

  const uint32_t faults = uint32_t(state.range(0));
  uint32_t trial = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_trial(net, workload, baseline, map, FaultModel::SEU, faults,
                                       Persistence::PersistentRead, 42, 7, trial++)
                                 .faulty_correct);
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 200);  // images per trial
}
BENCHMARK(BM_ActivationSeuTrial)->Arg(1)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
