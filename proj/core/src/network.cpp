#include "bnnfi/network.hpp"

#include <algorithm>
#include <cstring>

#include "bnnfi/error.hpp"
#include "bnnfi/fault.hpp"

namespace bnnfi {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::InputDense: return "InputDense";
    case LayerKind::InputConv3x3: return "InputConv3x3";
    case LayerKind::BinDense: return "BinDense";
    case LayerKind::BinConv3x3: return "BinConv3x3";
    case LayerKind::MaxPool2x2: return "MaxPool2x2";
    case LayerKind::OutputDense: return "OutputDense";
  }
  return "?";
}

const char* to_string(Precision precision) {
  switch (precision) {
    case Precision::W1A1: return "W1A1";
    case Precision::W2A2: return "W2A2";
    case Precision::W1A2: return "W1A2";
  }
  return "?";
}

size_t LayerSpec::fan_in() const {
  if (kind == LayerKind::MaxPool2x2) return 0;
  if (is_conv()) return size_t(in_shape.dims.at(0)) * 9;
  return in_shape.elements();
}

size_t LayerSpec::fan_out() const {
  if (kind == LayerKind::MaxPool2x2) return 0;
  if (is_conv()) return out_shape.dims.at(0);
  return out_shape.elements();
}

size_t LayerSpec::weight_elements() const {
  if (kind == LayerKind::MaxPool2x2) return 0;
  return fan_in() * fan_out();
}

size_t LayerSpec::weight_bits() const {
  if (!weights) return 0;
  return std::visit([](const auto& t) { return t.payload_bits(); }, *weights);
}

size_t LayerSpec::activation_bits(Precision precision) const {
  if (kind == LayerKind::OutputDense) return 0;  // final outputs are not quantized
  const size_t per_element = NetworkTopology::activations_are_q2(precision) ? 2 : 1;
  return out_shape.elements() * per_element;
}

size_t NetworkTopology::weight_bit_count() const {
  size_t total = 0;
  for (const auto& l : layers) total += l.weight_bits();
  return total;
}

size_t NetworkTopology::activation_bit_count() const {
  size_t total = 0;
  for (const auto& l : layers) total += l.activation_bits(precision);
  return total;
}

namespace {

size_t threshold_count_per_channel(Precision precision) {
  return NetworkTopology::activations_are_q2(precision) ? 3 : 1;
}

PackedWeights make_weights(Precision precision, Shape shape) {
  if (NetworkTopology::weights_are_q2(precision)) return Q2Tensor(std::move(shape));
  return BitTensor(std::move(shape));
}

LayerSpec make_layer(LayerKind kind, Shape in, Shape out, Precision precision) {
  LayerSpec l;
  l.kind = kind;
  l.in_shape = std::move(in);
  l.out_shape = std::move(out);
  if (kind != LayerKind::MaxPool2x2) {
    Shape wshape;
    if (l.is_conv())
      wshape = Shape{l.out_shape.dims[0], l.in_shape.dims[0], 3, 3};
    else
      wshape = Shape{uint32_t(l.fan_out()), uint32_t(l.fan_in())};
    l.weights = make_weights(precision, std::move(wshape));
  }
  if (kind != LayerKind::MaxPool2x2 && kind != LayerKind::OutputDense) {
    const uint32_t channels = uint32_t(l.fan_out());
    const uint32_t per = uint32_t(threshold_count_per_channel(precision));
    l.thresholds = per == 1 ? IntTensor(Shape{channels}) : IntTensor(Shape{channels, per});
    l.signs.assign(channels, int8_t(1));
  }
  return l;
}

}  // namespace

NetworkTopology build_lfc(uint32_t hidden_width, Precision precision) {
  if (hidden_width < 1) raise(Errc::invalid_argument, "build_lfc: hidden_width must be >= 1");
  if (precision != Precision::W1A1 && precision != Precision::W1A2)
    raise(Errc::invalid_argument, "build_lfc: unsupported precision (use W1A1 or W1A2)");
  NetworkTopology net;
  net.precision = precision;
  net.num_classes = 10;
  net.name = (hidden_width == 1024 ? std::string("lfc") : "lfc" + std::to_string(hidden_width)) +
             to_string(precision);
  const uint32_t w = hidden_width;
  net.layers.push_back(make_layer(LayerKind::InputDense, Shape{784}, Shape{w}, precision));
  net.layers.push_back(make_layer(LayerKind::BinDense, Shape{w}, Shape{w}, precision));
  net.layers.push_back(make_layer(LayerKind::BinDense, Shape{w}, Shape{w}, precision));
  net.layers.push_back(make_layer(LayerKind::OutputDense, Shape{w}, Shape{10}, precision));
  net.validate();
  return net;
}

NetworkTopology build_cnv_plan(Precision precision, uint32_t c0, uint32_t fc_width) {
  if (c0 < 1 || fc_width < 1) raise(Errc::invalid_argument, "build_cnv_plan: widths must be >= 1");
  if (precision != Precision::W1A1 && precision != Precision::W2A2)
    raise(Errc::invalid_argument, "build_cnv_plan: unsupported precision (use W1A1 or W2A2)");
  NetworkTopology net;
  net.precision = precision;
  net.num_classes = 10;
  net.name = (c0 == 64 && fc_width == 512 ? std::string("cnv")
                                          : "cnv" + std::to_string(c0) + "x" + std::to_string(fc_width)) +
             to_string(precision);
  const uint32_t c1 = 2 * c0, c2 = 4 * c0;
  auto conv = [&](LayerKind kind, uint32_t ic, uint32_t oc, uint32_t in_hw) {
    return make_layer(kind, Shape{ic, in_hw, in_hw}, Shape{oc, in_hw - 2, in_hw - 2}, precision);
  };
  auto pool = [&](uint32_t c, uint32_t in_hw) {
    return make_layer(LayerKind::MaxPool2x2, Shape{c, in_hw, in_hw},
                      Shape{c, in_hw / 2, in_hw / 2}, precision);
  };
  net.layers.push_back(conv(LayerKind::InputConv3x3, 3, c0, 32));  // 32 -> 30
  net.layers.push_back(conv(LayerKind::BinConv3x3, c0, c0, 30));   // -> 28
  net.layers.push_back(pool(c0, 28));                              // -> 14
  net.layers.push_back(conv(LayerKind::BinConv3x3, c0, c1, 14));   // -> 12
  net.layers.push_back(conv(LayerKind::BinConv3x3, c1, c1, 12));   // -> 10
  net.layers.push_back(pool(c1, 10));                              // -> 5
  net.layers.push_back(conv(LayerKind::BinConv3x3, c1, c2, 5));    // -> 3
  net.layers.push_back(conv(LayerKind::BinConv3x3, c2, c2, 3));    // -> 1
  net.layers.push_back(make_layer(LayerKind::BinDense, Shape{c2, 1, 1}, Shape{fc_width}, precision));
  net.layers.push_back(make_layer(LayerKind::BinDense, Shape{fc_width}, Shape{fc_width}, precision));
  net.layers.push_back(make_layer(LayerKind::OutputDense, Shape{fc_width}, Shape{10}, precision));
  net.validate();
  return net;
}

NetworkTopology build_cnv(Precision precision) { return build_cnv_plan(precision, 64, 512); }

void NetworkTopology::validate() const {
  if (layers.empty()) raise(Errc::invalid_argument, "topology has no layers");
  if (!layers.front().is_input())
    raise(Errc::invalid_argument, "first layer must be InputDense or InputConv3x3");
  if (layers.back().kind != LayerKind::OutputDense)
    raise(Errc::invalid_argument, "last layer must be OutputDense");
  for (size_t k = 0; k + 1 < layers.size(); ++k) {
    if (!(layers[k].out_shape == layers[k + 1].in_shape))
      raise(Errc::shape_mismatch, "layer " + std::to_string(k) + " out_shape does not chain");
  }
  for (size_t k = 1; k < layers.size(); ++k)
    if (layers[k].is_input())
      raise(Errc::invalid_argument, "input layer kinds are only valid at position 0");
  for (size_t k = 0; k < layers.size(); ++k) {
    const LayerSpec& l = layers[k];
    if (l.is_conv()) {
      if (l.in_shape.rank() != 3 || l.out_shape.rank() != 3)
        raise(Errc::shape_mismatch, "conv layer shapes must be [C,H,W]");
      if (l.out_shape.dims[1] != l.in_shape.dims[1] - 2 ||
          l.out_shape.dims[2] != l.in_shape.dims[2] - 2)
        raise(Errc::shape_mismatch, "conv output must be input minus 2 (3x3, stride 1, no padding)");
    }
    if (l.kind == LayerKind::MaxPool2x2) {
      if (l.in_shape.rank() != 3) raise(Errc::shape_mismatch, "pool input must be [C,H,W]");
      if (l.in_shape.dims[1] % 2 != 0 || l.in_shape.dims[2] % 2 != 0)
        raise(Errc::shape_mismatch, "pool input extents must be even");
      if (l.out_shape.dims[0] != l.in_shape.dims[0] ||
          l.out_shape.dims[1] != l.in_shape.dims[1] / 2 ||
          l.out_shape.dims[2] != l.in_shape.dims[2] / 2)
        raise(Errc::shape_mismatch, "pool output must halve spatial extents");
      if (l.weights || l.thresholds) raise(Errc::invalid_argument, "pool layers carry no payload");
      continue;
    }
    if (!l.weights) raise(Errc::invalid_argument, "weighted layer missing weights");
    const size_t welems =
        std::visit([](const auto& t) { return t.elements(); }, *l.weights);
    if (welems != l.weight_elements())
      raise(Errc::shape_mismatch, "weight element count does not match fan_in*fan_out");
    const bool wants_q2_weights = weights_are_q2(precision);
    if (wants_q2_weights != std::holds_alternative<Q2Tensor>(*l.weights))
      raise(Errc::invalid_argument, "weight payload width does not match precision");
    if (l.kind == LayerKind::OutputDense) {
      if (l.thresholds) raise(Errc::invalid_argument, "output layer carries no thresholds");
    } else {
      if (!l.thresholds) raise(Errc::invalid_argument, "hidden layer missing thresholds");
      const size_t per = threshold_count_per_channel(precision);
      if (l.thresholds->elements() != l.fan_out() * per)
        raise(Errc::shape_mismatch, "threshold count does not match output channels");
      if (l.signs.size() != l.fan_out())
        raise(Errc::shape_mismatch, "sign count does not match output channels");
      for (int8_t s : l.signs)
        if (s != 1 && s != -1) raise(Errc::invalid_argument, "signs must be +1 or -1");
    }
  }
  if (num_classes != int(layers.back().out_shape.elements()))
    raise(Errc::shape_mismatch, "num_classes does not match output layer");
}

size_t count_susceptible_bits(const NetworkTopology& net, CountTarget target) {
  switch (target) {
    case CountTarget::Weights: return net.weight_bit_count();
    case CountTarget::Activations: return net.activation_bit_count();
    case CountTarget::Both: return net.weight_bit_count() + net.activation_bit_count();
  }
  raise(Errc::invalid_argument, "count_susceptible_bits: bad target");
}

// ---------------------------------------------------------------------------
// Activation functions

namespace {

void check_threshold_shapes(const IntTensor& acc, const IntTensor& thresholds,
                            std::span<const int8_t> signs, size_t per_channel) {
  const size_t channels = acc.shape().rank() == 3 ? acc.shape().dims[0] : acc.elements();
  if (thresholds.elements() != channels * per_channel)
    raise(Errc::shape_mismatch, "threshold_activate: threshold count mismatch");
  if (signs.size() != channels) raise(Errc::shape_mismatch, "threshold_activate: sign count mismatch");
}

size_t channel_of(const Shape& shape, size_t flat_index) {
  if (shape.rank() != 3) return flat_index;
  return flat_index / (size_t(shape.dims[1]) * shape.dims[2]);
}

}  // namespace

BitTensor threshold_activate(const IntTensor& acc, const IntTensor& thresholds,
                             std::span<const int8_t> signs) {
  check_threshold_shapes(acc, thresholds, signs, 1);
  BitTensor out(acc.shape());
  for (size_t i = 0; i < acc.elements(); ++i) {
    const size_t c = channel_of(acc.shape(), i);
    const int32_t s = signs[c];
    out.set(i, s * acc[i] >= s * thresholds[c]);
  }
  return out;
}

Q2Tensor threshold_activate_q2(const IntTensor& acc, const IntTensor& thresholds,
                               std::span<const int8_t> signs) {
  check_threshold_shapes(acc, thresholds, signs, 3);
  Q2Tensor out(acc.shape());
  for (size_t i = 0; i < acc.elements(); ++i) {
    const size_t c = channel_of(acc.shape(), i);
    const int32_t s = signs[c];
    unsigned code = 0;
    for (size_t t = 0; t < 3; ++t) code += unsigned(s * acc[i] >= s * thresholds[c * 3 + t]);
    out.set_code(i, code);
  }
  return out;
}

ActivationBuffer ActivationBuffer::for_network(const NetworkTopology& net) {
  ActivationBuffer buf;
  buf.slots.reserve(net.layers.size());
  const bool q2 = NetworkTopology::activations_are_q2(net.precision);
  for (const LayerSpec& l : net.layers) {
    if (q2)
      buf.slots.emplace_back(Q2Tensor(l.out_shape));
    else
      buf.slots.emplace_back(BitTensor(l.out_shape));
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

inline unsigned span_bit(std::span<const uint64_t> w, size_t i) {
  return unsigned(w[i >> 6] >> (i & 63)) & 1u;
}

inline unsigned span_code(std::span<const uint64_t> w, size_t i) {
  return unsigned(w[i >> 5] >> ((i & 31) * 2)) & 3u;
}

std::span<const uint64_t> weight_view(const NetworkTopology& net, size_t layer,
                                      FaultOverlay* overlay) {
  if (overlay) return overlay->weight_words(layer);
  return std::visit([](const auto& t) { return t.words(); }, *net.layers[layer].weights);
}

// Integer dot of decoded weights against centered pixels for an input layer.
void input_layer_acc(const NetworkTopology& net, size_t layer, const IntTensor& image,
                     FaultOverlay* overlay, IntTensor& acc) {
  const LayerSpec& spec = net.layers[layer];
  const bool q2w = NetworkTopology::weights_are_q2(net.precision);
  const auto w = weight_view(net, layer, overlay);
  auto wdec = [&](size_t i) {
    return q2w ? Q2Tensor::decode_code(span_code(w, i)) : (int(span_bit(w, i)) * 2 - 1);
  };
  if (spec.kind == LayerKind::InputDense) {
    const size_t fan_in = spec.fan_in(), fan_out = spec.fan_out();
    for (size_t o = 0; o < fan_out; ++o) {
      int32_t sum = 0;
      const size_t base = o * fan_in;
      for (size_t i = 0; i < fan_in; ++i) sum += wdec(base + i) * (image[i] - 128);
      acc[o] = sum;
    }
    return;
  }
  // InputConv3x3
  const uint32_t IC = spec.in_shape.dims[0], IH = spec.in_shape.dims[1], IW = spec.in_shape.dims[2];
  const uint32_t OC = spec.out_shape.dims[0], OH = spec.out_shape.dims[1], OW = spec.out_shape.dims[2];
  for (uint32_t oc = 0; oc < OC; ++oc) {
    for (uint32_t y = 0; y < OH; ++y) {
      for (uint32_t x = 0; x < OW; ++x) {
        int32_t sum = 0;
        for (uint32_t ic = 0; ic < IC; ++ic) {
          const size_t wbase = ((size_t(oc) * IC + ic) * 3) * 3;
          for (uint32_t ky = 0; ky < 3; ++ky) {
            const size_t ibase = (size_t(ic) * IH + (y + ky)) * IW + x;
            for (uint32_t kx = 0; kx < 3; ++kx)
              sum += wdec(wbase + ky * 3 + kx) * (image[ibase + kx] - 128);
          }
        }
        acc[(size_t(oc) * OH + y) * OW + x] = sum;
      }
    }
  }
}

// Packs the 3x3xC window at output position (y, x) into contiguous patch rows
// matching the conv weight element order (ic, ky, kx).
void gather_patch_bits(std::span<const uint64_t> in, uint32_t IC, uint32_t IH, uint32_t IW,
                       uint32_t y, uint32_t x, std::span<uint64_t> patch) {
  std::fill(patch.begin(), patch.end(), 0);
  size_t pos = 0;
  for (uint32_t ic = 0; ic < IC; ++ic) {
    for (uint32_t ky = 0; ky < 3; ++ky) {
      const uint64_t bits = word_at(in, (size_t(ic) * IH + (y + ky)) * IW + x) & 7u;
      patch[pos >> 6] |= bits << (pos & 63);
      if ((pos & 63) > 61) patch[(pos >> 6) + 1] |= bits >> (64 - (pos & 63));
      pos += 3;
    }
  }
}

void gather_patch_codes(std::span<const uint64_t> in, uint32_t IC, uint32_t IH, uint32_t IW,
                        uint32_t y, uint32_t x, std::span<uint64_t> patch) {
  std::fill(patch.begin(), patch.end(), 0);
  size_t pos = 0;  // bit position; 3 codes = 6 bits per gather
  for (uint32_t ic = 0; ic < IC; ++ic) {
    for (uint32_t ky = 0; ky < 3; ++ky) {
      const uint64_t bits = word_at(in, ((size_t(ic) * IH + (y + ky)) * IW + x) * 2) & 0x3Fu;
      patch[pos >> 6] |= bits << (pos & 63);
      if ((pos & 63) > 58) patch[(pos >> 6) + 1] |= bits >> (64 - (pos & 63));
      pos += 6;
    }
  }
}

std::span<const uint64_t> activation_words(const Activation& a) {
  return std::visit([](const auto& t) { return t.words(); }, a);
}

// Accumulators of a binary (non-input) weighted layer.
void binary_layer_acc(const NetworkTopology& net, size_t layer, const Activation& input,
                      FaultOverlay* overlay, IntTensor& acc, std::vector<uint64_t>& patch) {
  const LayerSpec& spec = net.layers[layer];
  const bool q2w = NetworkTopology::weights_are_q2(net.precision);
  const bool q2a = NetworkTopology::activations_are_q2(net.precision);
  const auto w = weight_view(net, layer, overlay);
  const auto in = activation_words(input);
  const size_t fan_in = spec.fan_in();

  auto row_dot = [&](std::span<const uint64_t> a_words, size_t o) {
    if (q2w) return q2_dot_span(w, o * fan_in, a_words, 0, fan_in);
    if (q2a) return b1q2_dot_span(w, o * fan_in, a_words, 0, fan_in);
    return xnor_popcount_span(a_words, 0, w, o * fan_in, fan_in);
  };

  if (!spec.is_conv()) {
    for (size_t o = 0; o < spec.fan_out(); ++o) acc[o] = row_dot(in, o);
    return;
  }
  const uint32_t IC = spec.in_shape.dims[0], IH = spec.in_shape.dims[1], IW = spec.in_shape.dims[2];
  const uint32_t OC = spec.out_shape.dims[0], OH = spec.out_shape.dims[1], OW = spec.out_shape.dims[2];
  const size_t patch_words = words_for_bits(fan_in * (q2a ? 2 : 1)) + 1;
  if (patch.size() < patch_words) patch.resize(patch_words);
  std::span<uint64_t> p(patch.data(), patch_words);
  for (uint32_t y = 0; y < OH; ++y) {
    for (uint32_t x = 0; x < OW; ++x) {
      if (q2a)
        gather_patch_codes(in, IC, IH, IW, y, x, p);
      else
        gather_patch_bits(in, IC, IH, IW, y, x, p);
      for (uint32_t oc = 0; oc < OC; ++oc)
        acc[(size_t(oc) * OH + y) * OW + x] = row_dot(p, oc);
    }
  }
}

// In-place threshold application into a preallocated activation slot.
void threshold_into(const LayerSpec& spec, Precision precision, const IntTensor& acc,
                    Activation& out) {
  const size_t spatial =
      spec.out_shape.rank() == 3 ? size_t(spec.out_shape.dims[1]) * spec.out_shape.dims[2] : 1;
  const IntTensor& thr = *spec.thresholds;
  if (NetworkTopology::activations_are_q2(precision)) {
    Q2Tensor& t = std::get<Q2Tensor>(out);
    for (size_t i = 0; i < acc.elements(); ++i) {
      const size_t c = i / spatial;
      const int32_t s = spec.signs[c];
      unsigned code = 0;
      for (size_t k = 0; k < 3; ++k) code += unsigned(s * acc[i] >= s * thr[c * 3 + k]);
      t.set_code(i, code);
    }
  } else {
    BitTensor& t = std::get<BitTensor>(out);
    for (size_t i = 0; i < acc.elements(); ++i) {
      const size_t c = i / spatial;
      const int32_t s = spec.signs[c];
      t.set(i, s * acc[i] >= s * thr[c]);
    }
  }
}

void pool_into(const LayerSpec& spec, const Activation& input, Activation& out) {
  const uint32_t C = spec.in_shape.dims[0], IH = spec.in_shape.dims[1], IW = spec.in_shape.dims[2];
  const uint32_t OH = spec.out_shape.dims[1], OW = spec.out_shape.dims[2];
  if (std::holds_alternative<BitTensor>(input)) {
    const BitTensor& in = std::get<BitTensor>(input);
    BitTensor& o = std::get<BitTensor>(out);
    for (uint32_t c = 0; c < C; ++c)
      for (uint32_t y = 0; y < OH; ++y)
        for (uint32_t x = 0; x < OW; ++x) {
          const size_t r0 = (size_t(c) * IH + 2 * y) * IW + 2 * x;
          const size_t r1 = (size_t(c) * IH + 2 * y + 1) * IW + 2 * x;
          // Decoded-domain max: any +1 in the window wins.
          o.set((size_t(c) * OH + y) * OW + x,
                in.get(r0) || in.get(r0 + 1) || in.get(r1) || in.get(r1 + 1));
        }
    return;
  }
  const Q2Tensor& in = std::get<Q2Tensor>(input);
  Q2Tensor& o = std::get<Q2Tensor>(out);
  for (uint32_t c = 0; c < C; ++c)
    for (uint32_t y = 0; y < OH; ++y)
      for (uint32_t x = 0; x < OW; ++x) {
        const size_t r0 = (size_t(c) * IH + 2 * y) * IW + 2 * x;
        const size_t r1 = (size_t(c) * IH + 2 * y + 1) * IW + 2 * x;
        // The code table is monotone, so code max == decoded max.
        const unsigned m = std::max(std::max(in.get_code(r0), in.get_code(r0 + 1)),
                                    std::max(in.get_code(r1), in.get_code(r1 + 1)));
        o.set_code((size_t(c) * OH + y) * OW + x, m);
      }
}

std::span<uint64_t> activation_words_mut(Activation& a) {
  return std::visit([](auto& t) { return t.words(); }, a);
}

LayerSpec pool_spec_for(const Shape& in_shape) {
  if (in_shape.rank() != 3 || in_shape.dims[1] % 2 != 0 || in_shape.dims[2] % 2 != 0)
    raise(Errc::shape_mismatch, "maxpool2x2: input must be [C,H,W] with even extents");
  LayerSpec spec;
  spec.kind = LayerKind::MaxPool2x2;
  spec.in_shape = in_shape;
  spec.out_shape = Shape{in_shape.dims[0], in_shape.dims[1] / 2, in_shape.dims[2] / 2};
  return spec;
}

int argmax_lowest(const IntTensor& scores) {
  int best = 0;
  for (size_t i = 1; i < scores.elements(); ++i)
    if (scores[i] > scores[best]) best = int(i);
  return best;
}

}  // namespace

Activation maxpool2x2(const Activation& input, const Shape& in_shape) {
  const LayerSpec spec = pool_spec_for(in_shape);
  Activation out = std::holds_alternative<BitTensor>(input)
                       ? Activation(BitTensor(spec.out_shape))
                       : Activation(Q2Tensor(spec.out_shape));
  pool_into(spec, input, out);
  return out;
}

IntTensor layer_accumulators(const NetworkTopology& net, size_t layer, const IntTensor& image,
                             FaultOverlay* overlay, const ActivationBuffer& buffers) {
  const LayerSpec& spec = net.layers.at(layer);
  if (spec.kind == LayerKind::MaxPool2x2)
    raise(Errc::invalid_argument, "pool layers have no accumulators");
  IntTensor acc(spec.out_shape);
  std::vector<uint64_t> patch;
  if (spec.is_input()) {
    if (!(image.shape() == spec.in_shape))
      raise(Errc::shape_mismatch, "image shape does not match first layer input");
    input_layer_acc(net, layer, image, overlay, acc);
  } else {
    binary_layer_acc(net, layer, buffers.slots[layer - 1], overlay, acc, patch);
  }
  return acc;
}

ForwardResult forward_from_acc(const NetworkTopology& net, size_t start_layer,
                               const IntTensor& start_acc, FaultOverlay* overlay,
                               ActivationBuffer& buffers, ForwardScratch* scratch) {
  if (net.layers.at(start_layer).kind == LayerKind::MaxPool2x2)
    raise(Errc::invalid_argument, "cannot start from a pool layer");
  ForwardScratch local;
  ForwardScratch& s = scratch ? *scratch : local;
  IntTensor acc = start_acc;
  for (size_t k = start_layer; k < net.layers.size(); ++k) {
    const LayerSpec& spec = net.layers[k];
    if (k != start_layer) {
      if (spec.kind == LayerKind::MaxPool2x2) {
        pool_into(spec, buffers.slots[k - 1], buffers.slots[k]);
        if (overlay) overlay->on_activation_write(k, activation_words_mut(buffers.slots[k]));
        continue;
      }
      acc = IntTensor(spec.out_shape);
      binary_layer_acc(net, k, buffers.slots[k - 1], overlay, acc, s.patch);
    }
    if (spec.kind == LayerKind::OutputDense) {
      ForwardResult r;
      r.scores = std::move(acc);
      r.predicted_class = argmax_lowest(r.scores);
      return r;
    }
    threshold_into(spec, net.precision, acc, buffers.slots[k]);
    if (overlay) overlay->on_activation_write(k, activation_words_mut(buffers.slots[k]));
  }
  raise(Errc::invalid_argument, "network has no output layer");
}

ForwardResult forward(const NetworkTopology& net, const IntTensor& image, FaultOverlay* overlay,
                      ActivationBuffer& buffers, ForwardScratch* scratch) {
  if (!net.initialized) raise(Errc::invalid_argument, "forward: uninitialized weights");
  if (buffers.slots.size() != net.layers.size())
    raise(Errc::shape_mismatch, "forward: buffer count does not match network");
  IntTensor acc = layer_accumulators(net, 0, image, overlay, buffers);
  return forward_from_acc(net, 0, acc, overlay, buffers, scratch);
}

}  // namespace bnnfi
