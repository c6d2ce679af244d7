#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bnnfi/tensor.hpp"

namespace bnnfi {

class FaultOverlay;

enum class LayerKind : uint8_t {
  InputDense,    // 8-bit pixels in, integer dot with decoded weights
  InputConv3x3,  // same, 3x3 stride-1 unpadded convolution
  BinDense,
  BinConv3x3,
  MaxPool2x2,  // 2x2 window, stride 2, decoded-value max
  OutputDense,  // raw integer class scores, no activation
};

enum class Precision : uint8_t { W1A1, W2A2, W1A2 };

const char* to_string(LayerKind kind);
const char* to_string(Precision precision);

// Weight payloads are 1-bit or 2-bit depending on the topology's W precision.
using PackedWeights = std::variant<BitTensor, Q2Tensor>;
using Activation = std::variant<BitTensor, Q2Tensor>;

struct LayerSpec {
  LayerKind kind;
  Shape in_shape;
  Shape out_shape;
  // Dense weights are [out, in]; conv weights are [out_c, in_c, 3, 3].
  // Absent for MaxPool2x2.
  std::optional<PackedWeights> weights;
  // One threshold per output channel for 1-bit activations, three ordered
  // thresholds per channel for 2-bit activations ([channels] or [channels,3]).
  // Absent for MaxPool2x2 and OutputDense.
  std::optional<IntTensor> thresholds;
  std::vector<int8_t> signs;  // per-channel comparison sign, +1 or -1

  bool has_weights() const { return weights.has_value(); }
  bool has_thresholds() const { return thresholds.has_value(); }
  bool is_conv() const { return kind == LayerKind::InputConv3x3 || kind == LayerKind::BinConv3x3; }
  bool is_input() const { return kind == LayerKind::InputDense || kind == LayerKind::InputConv3x3; }

  // Dot length per output: dense = input elements, conv = in_channels * 9.
  size_t fan_in() const;
  // Output channels (conv) or output neurons (dense).
  size_t fan_out() const;
  size_t weight_elements() const;
  // Susceptible weight payload bits (elements * weight bit width).
  size_t weight_bits() const;
  // Susceptible activation payload bits written by this layer (0 for the
  // final layer, whose output is not quantized).
  size_t activation_bits(Precision precision) const;
};

struct NetworkTopology {
  std::string name;
  Precision precision = Precision::W1A1;
  std::vector<LayerSpec> layers;
  int num_classes = 0;
  // Builders produce placeholder (all-zero) payloads; loading or exporting a
  // trained model marks the topology ready for inference.
  bool initialized = false;

  size_t weight_bit_count() const;
  size_t activation_bit_count() const;
  // Throws unless adjacent shapes chain and payload sizes match the shapes.
  void validate() const;

  static bool weights_are_q2(Precision p) { return p == Precision::W2A2; }
  static bool activations_are_q2(Precision p) { return p != Precision::W1A1; }
};

// lfc: InputDense 784->W, BinDense W->W, BinDense W->W, OutputDense W->10.
// Supported precisions: W1A1, W1A2.
NetworkTopology build_lfc(uint32_t hidden_width, Precision precision);

// cnv: the VGG/BinaryNet-style plan 64-64-(pool)-128-128-(pool)-256-256 with
// fully connected 256-512-512-10, 3x3 unpadded convolutions on 32x32x3 input.
// Supported precisions: W1A1, W2A2.
NetworkTopology build_cnv(Precision precision);
// Same layout with scalable widths (conv channels c0, 2*c0, 4*c0; FC width
// fc_width); build_cnv == build_cnv_plan(precision, 64, 512). Used for
// desk-scale conv experiments.
NetworkTopology build_cnv_plan(Precision precision, uint32_t c0, uint32_t fc_width);

// output_i = +1 iff s_i * acc_i >= s_i * tau_i else -1, per output channel.
// For conv accumulators ([C,H,W]) the channel's threshold applies across the
// spatial extent.
BitTensor threshold_activate(const IntTensor& acc, const IntTensor& thresholds,
                             std::span<const int8_t> signs);
// 2-bit variant: thresholds is [channels,3], ordered ascending in the
// comparison domain; code = #{t : s*acc >= s*tau_t}, decoded via the Q2 table.
Q2Tensor threshold_activate_q2(const IntTensor& acc, const IntTensor& thresholds,
                               std::span<const int8_t> signs);

// 2x2 stride-2 max over decoded values, per channel; input is [C,H,W] with
// even spatial extents.
Activation maxpool2x2(const Activation& input, const Shape& in_shape);

// Most recently written activation of each non-final layer, indexed by layer.
struct ActivationBuffer {
  std::vector<Activation> slots;

  static ActivationBuffer for_network(const NetworkTopology& net);
};

struct ForwardResult {
  IntTensor scores;
  int predicted_class = 0;
};

// Reusable scratch for conv patch rows; a default-constructed instance works
// for any network.
struct ForwardScratch {
  std::vector<uint64_t> patch;
};

// Bit-exact forward pass. `overlay` may be null (no fault machinery); when
// present, every weight read goes through the overlay's faulted views and
// every activation write is re-corrupted per the overlay's persistence mode.
// `pixel - 128` centering is applied to the raw 8-bit input before the first
// layer's integer dot.
ForwardResult forward(const NetworkTopology& net, const IntTensor& image, FaultOverlay* overlay,
                      ActivationBuffer& buffers, ForwardScratch* scratch = nullptr);

// Runs layers [start_layer, end) given the accumulators already computed for
// layer `start_layer`. Exposed so campaign code can reuse cached clean
// first-layer accumulators; equivalent to the tail of forward().
ForwardResult forward_from_acc(const NetworkTopology& net, size_t start_layer,
                               const IntTensor& start_acc, FaultOverlay* overlay,
                               ActivationBuffer& buffers, ForwardScratch* scratch = nullptr);

// Accumulators of layer k given its input (the image for k == 0, otherwise
// buffers[k-1]).
IntTensor layer_accumulators(const NetworkTopology& net, size_t layer, const IntTensor& image,
                             FaultOverlay* overlay, const ActivationBuffer& buffers);

enum class CountTarget : uint8_t { Weights, Activations, Both };

// Total bits of the modeled on-chip storage exposed to injection.
size_t count_susceptible_bits(const NetworkTopology& net, CountTarget target);

}  // namespace bnnfi
