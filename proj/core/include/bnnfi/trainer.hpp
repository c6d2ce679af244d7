#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "bnnfi/model_io.hpp"
#include "bnnfi/network.hpp"

namespace bnnfi {

struct TrainConfig {
  int epochs = 12;
  int batch_size = 100;
  double lr = 0.02;
  double lr_decay = 0.92;   // multiplicative per epoch
  double momentum = 0.9;
  double weight_clip = 1.0;  // shadow weights clipped to [-clip, clip] after each step
  uint64_t seed = 1;

  void validate() const;
};

// Real-valued training-time mirror of one layer: shadow weights plus
// batch-norm parameters and SGD momentum state.
struct ShadowLayer {
  LayerKind kind;
  Shape in_shape, out_shape;
  std::vector<float> weights;  // same element order as the packed payload
  std::vector<float> gamma, beta, run_mean, run_var;  // per output channel
  std::vector<float> w_vel, g_vel, b_vel;

  size_t channels() const { return gamma.size(); }
};

struct ShadowModel {
  std::string name;
  Precision precision = Precision::W1A1;
  std::vector<ShadowLayer> layers;
  int num_classes = 10;
};

struct EpochLog {
  int epoch;
  double train_loss;
  double test_accuracy;  // NaN when no test set was supplied
};

// Deterministic shadow-model initialization for a topology skeleton.
ShadowModel init_shadow(const NetworkTopology& skeleton, uint64_t seed);

// Straight-through-estimator training: forward uses quantized weights and
// activations, backward passes gradients through the quantizers where the
// pre-activation is inside the representable range, shadow weights are
// clipped after every step. Deterministic given the seed.
ShadowModel train_ste(const NetworkTopology& skeleton, const DatasetSource& train,
                      const TrainConfig& config, const DatasetSource* test = nullptr,
                      std::vector<EpochLog>* log = nullptr);

// Folded integer thresholds for one hidden layer: the real-valued rule
// "batch-norm output >= boundary" holds exactly iff s*acc >= s*tau for every
// integer accumulator value. 1-bit activations use the single boundary 0;
// 2-bit activations use boundaries {-2, 0, +2} (three thresholds/channel).
struct FoldedThresholds {
  IntTensor thresholds;
  std::vector<int8_t> signs;
};
FoldedThresholds fold_batchnorm(const ShadowLayer& layer, Precision precision);

// Quantize weights, fold every batch norm, and produce a serializable
// topology whose forward matches the training-graph quantized forward
// bit-exactly (same predictions on every image).
NetworkTopology export_topology(const ShadowModel& model);

// Training-graph quantized forward (binarized weights, real batch norm on
// running stats, quantized activations); the independent half of the
// export-fidelity check.
int quantized_predict(const ShadowModel& model, const IntTensor& image);
double quantized_accuracy(const ShadowModel& model, const DatasetSource& data, size_t limit);

// `epoch,train_loss,test_accuracy` rows.
void write_training_log_csv(std::ostream& out, const std::vector<EpochLog>& log);

// Float reference kernels used by training; exposed for finite-difference
// gradient tests.
namespace train_detail {

struct BnStats {
  std::vector<float> mean, inv_std;  // per channel, eps folded into inv_std
};

// x is [count, channels * spatial] flattened per sample; statistics are per
// channel across count * spatial entries.
BnStats bn_stats(const float* x, size_t count, size_t channels, size_t spatial);
void bn_forward(const float* x, float* y, size_t count, size_t channels, size_t spatial,
                const BnStats& stats, const float* gamma, const float* beta);
void bn_backward(const float* x, const float* dy, float* dx, size_t count, size_t channels,
                 size_t spatial, const BnStats& stats, const float* gamma, float* dgamma,
                 float* dbeta);

void conv3x3_forward(const float* in, const float* w, float* out, size_t ic, size_t ih, size_t iw,
                     size_t oc);
void conv3x3_backward_input(const float* dout, const float* w, float* din, size_t ic, size_t ih,
                            size_t iw, size_t oc);
void conv3x3_backward_weights(const float* in, const float* dout, float* dw, size_t ic, size_t ih,
                              size_t iw, size_t oc);

}  // namespace train_detail

}  // namespace bnnfi
