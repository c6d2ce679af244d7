#include "bnnfi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>

#include "bnnfi/error.hpp"
#include "bnnfi/rng.hpp"

namespace bnnfi {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kRunningMomentum = 0.1;
constexpr double kQ2WeightDelta = 1.0 / 3.0;  // 2-bit weight levels at {-1, -1/3, +1/3, +1}

// Shared quantizer rules; the export path (binarize/quantize2) applies the
// same comparisons, which is what makes the dual forward paths bit-equal.
inline int q2_level_of(double v) {
  const unsigned code = unsigned(v >= -2.0) + unsigned(v >= 0.0) + unsigned(v >= 2.0);
  return Q2Tensor::decode_code(code);
}

inline int quantize_weight_level(float w, bool q2w) {
  if (q2w) return q2_level_of(double(w) / kQ2WeightDelta);
  return w >= 0.0f ? 1 : -1;
}

inline int quantize_act_level(double y, bool q2a) {
  if (q2a) return q2_level_of(y);
  return y >= 0.0 ? 1 : -1;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) raise(Errc::invalid_argument, "TrainConfig: epochs must be >= 0");
  if (batch_size < 1 || lr < 0 || lr_decay <= 0 || momentum < 0 || momentum >= 1 ||
      weight_clip <= 0)
    raise(Errc::invalid_argument, "TrainConfig: invalid parameter (all must be positive)");
}

// ---------------------------------------------------------------------------
// Detail kernels

namespace train_detail {

BnStats bn_stats(const float* x, size_t count, size_t channels, size_t spatial) {
  BnStats st;
  st.mean.assign(channels, 0.0f);
  st.inv_std.assign(channels, 0.0f);
  const size_t stride = channels * spatial;
  for (size_t c = 0; c < channels; ++c) {
    double sum = 0.0, sum_sq = 0.0;
    for (size_t b = 0; b < count; ++b) {
      const float* row = x + b * stride + c * spatial;
      for (size_t s = 0; s < spatial; ++s) {
        sum += row[s];
        sum_sq += double(row[s]) * row[s];
      }
    }
    const double n = double(count) * spatial;
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    st.mean[c] = float(mean);
    st.inv_std[c] = float(1.0 / std::sqrt(var + kBnEps));
  }
  return st;
}

void bn_forward(const float* x, float* y, size_t count, size_t channels, size_t spatial,
                const BnStats& stats, const float* gamma, const float* beta) {
  const size_t stride = channels * spatial;
  for (size_t b = 0; b < count; ++b)
    for (size_t c = 0; c < channels; ++c) {
      const float m = stats.mean[c], is = stats.inv_std[c], g = gamma[c], bb = beta[c];
      const float* xi = x + b * stride + c * spatial;
      float* yi = y + b * stride + c * spatial;
      for (size_t s = 0; s < spatial; ++s) yi[s] = g * (xi[s] - m) * is + bb;
    }
}

void bn_backward(const float* x, const float* dy, float* dx, size_t count, size_t channels,
                 size_t spatial, const BnStats& stats, const float* gamma, float* dgamma,
                 float* dbeta) {
  const size_t stride = channels * spatial;
  const double n = double(count) * spatial;
  for (size_t c = 0; c < channels; ++c) {
    const float m = stats.mean[c], is = stats.inv_std[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (size_t b = 0; b < count; ++b) {
      const float* xi = x + b * stride + c * spatial;
      const float* di = dy + b * stride + c * spatial;
      for (size_t s = 0; s < spatial; ++s) {
        sum_dy += di[s];
        sum_dy_xhat += double(di[s]) * (xi[s] - m) * is;
      }
    }
    dgamma[c] += float(sum_dy_xhat);
    dbeta[c] += float(sum_dy);
    const float k1 = float(sum_dy / n), k2 = float(sum_dy_xhat / n);
    const float gis = gamma[c] * is;
    for (size_t b = 0; b < count; ++b) {
      const float* xi = x + b * stride + c * spatial;
      const float* di = dy + b * stride + c * spatial;
      float* oi = dx + b * stride + c * spatial;
      for (size_t s = 0; s < spatial; ++s)
        oi[s] = gis * (di[s] - k1 - (xi[s] - m) * is * k2);
    }
  }
}

// Loop order keeps the x-sweep contiguous in both operands so the compiler
// vectorizes the inner accumulation.
void conv3x3_forward(const float* in, const float* w, float* out, size_t ic, size_t ih, size_t iw,
                     size_t oc) {
  const size_t oh = ih - 2, ow = iw - 2;
  std::memset(out, 0, sizeof(float) * oc * oh * ow);
  for (size_t o = 0; o < oc; ++o)
    for (size_t c = 0; c < ic; ++c) {
      const float* wrow = w + ((o * ic + c) * 3) * 3;
      for (size_t ky = 0; ky < 3; ++ky)
        for (size_t kx = 0; kx < 3; ++kx) {
          const float wv = wrow[ky * 3 + kx];
          for (size_t y = 0; y < oh; ++y) {
            const float* irow = in + (c * ih + y + ky) * iw + kx;
            float* orow = out + (o * oh + y) * ow;
            for (size_t x = 0; x < ow; ++x) orow[x] += wv * irow[x];
          }
        }
    }
}

void conv3x3_backward_input(const float* dout, const float* w, float* din, size_t ic, size_t ih,
                            size_t iw, size_t oc) {
  const size_t oh = ih - 2, ow = iw - 2;
  std::memset(din, 0, sizeof(float) * ic * ih * iw);
  for (size_t o = 0; o < oc; ++o)
    for (size_t c = 0; c < ic; ++c) {
      const float* wrow = w + ((o * ic + c) * 3) * 3;
      for (size_t ky = 0; ky < 3; ++ky)
        for (size_t kx = 0; kx < 3; ++kx) {
          const float wv = wrow[ky * 3 + kx];
          for (size_t y = 0; y < oh; ++y) {
            const float* grow = dout + (o * oh + y) * ow;
            float* irow = din + (c * ih + y + ky) * iw + kx;
            for (size_t x = 0; x < ow; ++x) irow[x] += wv * grow[x];
          }
        }
    }
}

void conv3x3_backward_weights(const float* in, const float* dout, float* dw, size_t ic, size_t ih,
                              size_t iw, size_t oc) {
  const size_t oh = ih - 2, ow = iw - 2;
  for (size_t o = 0; o < oc; ++o)
    for (size_t c = 0; c < ic; ++c) {
      float* wrow = dw + ((o * ic + c) * 3) * 3;
      for (size_t ky = 0; ky < 3; ++ky)
        for (size_t kx = 0; kx < 3; ++kx) {
          double sum = 0.0;
          for (size_t y = 0; y < oh; ++y) {
            const float* grow = dout + (o * oh + y) * ow;
            const float* irow = in + (c * ih + y + ky) * iw + kx;
            for (size_t x = 0; x < ow; ++x) sum += double(grow[x]) * irow[x];
          }
          wrow[ky * 3 + kx] += float(sum);
        }
    }
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Shadow model

ShadowModel init_shadow(const NetworkTopology& skeleton, uint64_t seed) {
  ShadowModel model;
  model.name = skeleton.name;
  model.precision = skeleton.precision;
  model.num_classes = skeleton.num_classes;
  for (size_t k = 0; k < skeleton.layers.size(); ++k) {
    const LayerSpec& spec = skeleton.layers[k];
    ShadowLayer l;
    l.kind = spec.kind;
    l.in_shape = spec.in_shape;
    l.out_shape = spec.out_shape;
    if (spec.kind != LayerKind::MaxPool2x2) {
      const size_t n = spec.weight_elements();
      l.weights.resize(n);
      l.w_vel.assign(n, 0.0f);
      SplitMix64 rng(mix64(seed ^ (0x10001 * (k + 1))));
      const double bound = std::sqrt(6.0 / double(spec.fan_in() + spec.fan_out()));
      for (float& w : l.weights) w = float(rng.uniform(-bound, bound));
      if (spec.kind != LayerKind::OutputDense) {
        const size_t c = spec.fan_out();
        l.gamma.assign(c, 1.0f);
        l.beta.assign(c, 0.0f);
        l.run_mean.assign(c, 0.0f);
        l.run_var.assign(c, 1.0f);
        l.g_vel.assign(c, 0.0f);
        l.b_vel.assign(c, 0.0f);
      }
    }
    model.layers.push_back(std::move(l));
  }
  return model;
}

namespace {

struct LayerGeom {
  size_t in_elems, out_elems;
  size_t channels, spatial;  // out_elems == channels * spatial
  bool conv, pool, output, weighted;
};

LayerGeom geom_of(const ShadowLayer& l) {
  LayerGeom g;
  g.in_elems = l.in_shape.elements();
  g.out_elems = l.out_shape.elements();
  g.conv = l.kind == LayerKind::InputConv3x3 || l.kind == LayerKind::BinConv3x3;
  g.pool = l.kind == LayerKind::MaxPool2x2;
  g.output = l.kind == LayerKind::OutputDense;
  g.weighted = !g.pool;
  if (l.out_shape.rank() == 3) {
    g.channels = l.out_shape.dims[0];
    g.spatial = size_t(l.out_shape.dims[1]) * l.out_shape.dims[2];
  } else {
    g.channels = g.out_elems;
    g.spatial = 1;
  }
  return g;
}

// Per-batch storage for one layer.
struct LayerBatch {
  std::vector<float> acc;   // pre-BN accumulators (weighted layers)
  std::vector<float> y;     // BN output (hidden weighted layers)
  std::vector<float> act;   // quantized activations (all but output layer)
  std::vector<int> pool_src;  // argmax flat input index (pool layers)
  std::vector<float> dact;  // gradient scratch
  std::vector<float> dacc;
};

void dense_forward(const float* in, const float* w, float* out, size_t fan_in, size_t fan_out) {
  for (size_t o = 0; o < fan_out; ++o) {
    const float* row = w + o * fan_in;
    double sum = 0.0;
    for (size_t i = 0; i < fan_in; ++i) sum += double(row[i]) * in[i];
    out[o] = float(sum);
  }
}

void pool_forward(const float* in, float* out, int* src, size_t c, size_t ih, size_t iw) {
  const size_t oh = ih / 2, ow = iw / 2;
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t y = 0; y < oh; ++y)
      for (size_t x = 0; x < ow; ++x) {
        const size_t base = (ch * ih + 2 * y) * iw + 2 * x;
        const size_t idx[4] = {base, base + 1, base + iw, base + iw + 1};
        size_t best = idx[0];
        for (int k = 1; k < 4; ++k)
          if (in[idx[k]] > in[best]) best = idx[k];
        out[(ch * oh + y) * ow + x] = in[best];
        src[(ch * oh + y) * ow + x] = int(best);
      }
}

}  // namespace

// ---------------------------------------------------------------------------
// Training-graph quantized forward (running statistics)

namespace {

struct QuantizedLayers {
  std::vector<std::vector<int8_t>> levels;  // quantized weight levels per layer
};

QuantizedLayers quantize_all_weights(const ShadowModel& model) {
  const bool q2w = NetworkTopology::weights_are_q2(model.precision);
  QuantizedLayers q;
  q.levels.resize(model.layers.size());
  for (size_t k = 0; k < model.layers.size(); ++k) {
    const auto& w = model.layers[k].weights;
    q.levels[k].resize(w.size());
    for (size_t i = 0; i < w.size(); ++i) q.levels[k][i] = int8_t(quantize_weight_level(w[i], q2w));
  }
  return q;
}

int quantized_predict_impl(const ShadowModel& model, const QuantizedLayers& q,
                           const IntTensor& image) {
  const bool q2a = NetworkTopology::activations_are_q2(model.precision);
  std::vector<int32_t> act(image.values().begin(), image.values().end());
  for (int32_t& v : act) v -= 128;
  std::vector<int32_t> acc, next;
  for (size_t k = 0; k < model.layers.size(); ++k) {
    const ShadowLayer& l = model.layers[k];
    const LayerGeom g = geom_of(l);
    if (g.pool) {
      const size_t ih = l.in_shape.dims[1], iw = l.in_shape.dims[2];
      const size_t oh = ih / 2, ow = iw / 2;
      next.assign(g.out_elems, 0);
      for (size_t c = 0; c < g.channels; ++c)
        for (size_t y = 0; y < oh; ++y)
          for (size_t x = 0; x < ow; ++x) {
            const size_t base = (c * ih + 2 * y) * iw + 2 * x;
            next[(c * oh + y) * ow + x] =
                std::max(std::max(act[base], act[base + 1]),
                         std::max(act[base + iw], act[base + iw + 1]));
          }
      act.swap(next);
      continue;
    }
    acc.assign(g.out_elems, 0);
    const std::vector<int8_t>& w = q.levels[k];
    if (g.conv) {
      const size_t ic = l.in_shape.dims[0], ih = l.in_shape.dims[1], iw = l.in_shape.dims[2];
      const size_t oh = ih - 2, ow = iw - 2;
      for (size_t o = 0; o < g.channels; ++o)
        for (size_t c = 0; c < ic; ++c) {
          const int8_t* wrow = w.data() + ((o * ic + c) * 3) * 3;
          for (size_t ky = 0; ky < 3; ++ky)
            for (size_t kx = 0; kx < 3; ++kx) {
              const int32_t wv = wrow[ky * 3 + kx];
              for (size_t y = 0; y < oh; ++y) {
                const int32_t* irow = act.data() + (c * ih + y + ky) * iw + kx;
                int32_t* orow = acc.data() + (o * oh + y) * ow;
                for (size_t x = 0; x < ow; ++x) orow[x] += wv * irow[x];
              }
            }
        }
    } else {
      const size_t fan_in = g.in_elems;
      for (size_t o = 0; o < g.out_elems; ++o) {
        int32_t sum = 0;
        const int8_t* row = w.data() + o * fan_in;
        for (size_t i = 0; i < fan_in; ++i) sum += row[i] * act[i];
        acc[o] = sum;
      }
    }
    if (g.output) {
      size_t best = 0;
      for (size_t i = 1; i < acc.size(); ++i)
        if (acc[i] > acc[best]) best = i;
      return int(best);
    }
    next.assign(g.out_elems, 0);
    for (size_t i = 0; i < g.out_elems; ++i) {
      const size_t c = i / g.spatial;
      const double sigma = std::sqrt(double(l.run_var[c]) + kBnEps);
      const double y = double(l.gamma[c]) * (acc[i] - double(l.run_mean[c])) / sigma + l.beta[c];
      next[i] = quantize_act_level(y, q2a);
    }
    act.swap(next);
  }
  raise(Errc::invalid_argument, "model has no output layer");
}

}  // namespace

int quantized_predict(const ShadowModel& model, const IntTensor& image) {
  const QuantizedLayers q = quantize_all_weights(model);
  return quantized_predict_impl(model, q, image);
}

double quantized_accuracy(const ShadowModel& model, const DatasetSource& data, size_t limit) {
  if (data.count() == 0) raise(Errc::empty_input, "quantized_accuracy: empty dataset");
  const QuantizedLayers q = quantize_all_weights(model);
  const bool conv = model.layers.front().kind == LayerKind::InputConv3x3;
  const size_t n = limit == 0 ? data.count() : std::min(limit, data.count());
  size_t correct = 0;
  for (size_t i = 0; i < n; ++i)
    if (quantized_predict_impl(model, q, data.image(i, conv)) == int(data.labels[i])) ++correct;
  return double(correct) / double(n);
}

// ---------------------------------------------------------------------------
// Training loop

ShadowModel train_ste(const NetworkTopology& skeleton, const DatasetSource& train,
                      const TrainConfig& config, const DatasetSource* test,
                      std::vector<EpochLog>* log) {
  config.validate();
  skeleton.validate();
  ShadowModel model = init_shadow(skeleton, config.seed);
  const bool q2w = NetworkTopology::weights_are_q2(model.precision);
  const bool q2a = NetworkTopology::activations_are_q2(model.precision);
  const double act_bound = q2a ? 3.0 : 1.0;  // STE passes where |pre-activation| <= bound
  const bool conv_input = skeleton.layers.front().kind == LayerKind::InputConv3x3;
  const size_t in_elems = skeleton.layers.front().in_shape.elements();
  if (train.pixels_per_image() != in_elems)
    raise(Errc::shape_mismatch, "train_ste: dataset does not match network input");
  if (train.count() < size_t(config.batch_size))
    raise(Errc::invalid_argument, "train_ste: fewer samples than one batch");

  const size_t L = model.layers.size();
  std::vector<LayerGeom> geom(L);
  for (size_t k = 0; k < L; ++k) geom[k] = geom_of(model.layers[k]);
  const size_t B = size_t(config.batch_size);
  const double logit_scale = std::sqrt(double(geom[L - 1].in_elems));

  std::vector<LayerBatch> batch(L);
  for (size_t k = 0; k < L; ++k) {
    batch[k].act.resize(B * geom[k].out_elems);
    batch[k].dact.resize(B * geom[k].out_elems);
    if (geom[k].weighted) {
      batch[k].acc.resize(B * geom[k].out_elems);
      batch[k].dacc.resize(B * geom[k].out_elems);
      if (!geom[k].output) batch[k].y.resize(B * geom[k].out_elems);
    } else {
      batch[k].pool_src.resize(B * geom[k].out_elems);
    }
  }
  std::vector<float> input(B * in_elems);
  std::vector<float> dinput(B * in_elems);
  std::vector<std::vector<float>> wq(L), dw(L), dgamma(L), dbeta(L);
  for (size_t k = 0; k < L; ++k) {
    wq[k].resize(model.layers[k].weights.size());
    dw[k].resize(model.layers[k].weights.size());
    dgamma[k].resize(model.layers[k].gamma.size());
    dbeta[k].resize(model.layers[k].beta.size());
  }
  std::vector<train_detail::BnStats> stats(L);

  SplitMix64 shuffle_rng(mix64(config.seed ^ 0xA5A5A5A5ull));
  std::vector<size_t> order(train.count());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  double lr = config.lr;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);
    double epoch_loss = 0.0;
    size_t batches = 0;

    for (size_t start = 0; start + B <= train.count(); start += B, ++batches) {
      // Quantize weights once per step.
      for (size_t k = 0; k < L; ++k) {
        const auto& w = model.layers[k].weights;
        for (size_t i = 0; i < w.size(); ++i) wq[k][i] = float(quantize_weight_level(w[i], q2w));
      }
      // Gather centered inputs.
      for (size_t b = 0; b < B; ++b) {
        const uint8_t* px = train.pixels.data() + order[start + b] * in_elems;
        for (size_t i = 0; i < in_elems; ++i) input[b * in_elems + i] = float(px[i]) - 128.0f;
      }

      // Forward.
      const float* prev = input.data();
      size_t prev_elems = in_elems;
      for (size_t k = 0; k < L; ++k) {
        const ShadowLayer& l = model.layers[k];
        const LayerGeom& g = geom[k];
        LayerBatch& lb = batch[k];
        if (g.pool) {
          for (size_t b = 0; b < B; ++b)
            pool_forward(prev + b * prev_elems, lb.act.data() + b * g.out_elems,
                         lb.pool_src.data() + b * g.out_elems, g.channels, l.in_shape.dims[1],
                         l.in_shape.dims[2]);
        } else if (g.conv) {
          for (size_t b = 0; b < B; ++b)
            train_detail::conv3x3_forward(prev + b * prev_elems, wq[k].data(),
                                          lb.acc.data() + b * g.out_elems, l.in_shape.dims[0],
                                          l.in_shape.dims[1], l.in_shape.dims[2], g.channels);
        } else {
          for (size_t b = 0; b < B; ++b)
            dense_forward(prev + b * prev_elems, wq[k].data(), lb.acc.data() + b * g.out_elems,
                          g.in_elems, g.out_elems);
        }
        if (g.weighted && !g.output) {
          stats[k] = train_detail::bn_stats(lb.acc.data(), B, g.channels, g.spatial);
          train_detail::bn_forward(lb.acc.data(), lb.y.data(), B, g.channels, g.spatial, stats[k],
                                   l.gamma.data(), l.beta.data());
          for (size_t i = 0; i < lb.y.size(); ++i)
            lb.act[i] = float(quantize_act_level(double(lb.y[i]), q2a));
          // Update running statistics from the batch statistics.
          ShadowLayer& ml = model.layers[k];
          for (size_t c = 0; c < g.channels; ++c) {
            const double var = 1.0 / (double(stats[k].inv_std[c]) * stats[k].inv_std[c]) - kBnEps;
            ml.run_mean[c] =
                float((1.0 - kRunningMomentum) * ml.run_mean[c] + kRunningMomentum * stats[k].mean[c]);
            ml.run_var[c] =
                float((1.0 - kRunningMomentum) * ml.run_var[c] + kRunningMomentum * std::max(var, 0.0));
          }
        }
        if (!g.output) {
          prev = lb.act.data();
          prev_elems = g.out_elems;
        }
      }

      // Softmax cross-entropy on scaled scores.
      LayerBatch& out = batch[L - 1];
      const size_t classes = geom[L - 1].out_elems;
      double loss = 0.0;
      for (size_t b = 0; b < B; ++b) {
        const float* scores = out.acc.data() + b * classes;
        float* dacc = out.dacc.data() + b * classes;
        double maxv = -std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < classes; ++c) maxv = std::max(maxv, double(scores[c]) / logit_scale);
        double denom = 0.0;
        for (size_t c = 0; c < classes; ++c) denom += std::exp(double(scores[c]) / logit_scale - maxv);
        const int label = train.labels[order[start + b]];
        for (size_t c = 0; c < classes; ++c) {
          const double p = std::exp(double(scores[c]) / logit_scale - maxv) / denom;
          dacc[c] = float((p - (int(c) == label ? 1.0 : 0.0)) / (double(B) * logit_scale));
          if (int(c) == label) loss += -std::log(std::max(p, 1e-300));
        }
      }
      loss /= double(B);
      if (!std::isfinite(loss))
        raise(Errc::diverged, "train_ste: non-finite loss at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(batches));
      epoch_loss += loss;

      // Backward.
      for (size_t k = 0; k < L; ++k) {
        std::fill(dw[k].begin(), dw[k].end(), 0.0f);
        std::fill(dgamma[k].begin(), dgamma[k].end(), 0.0f);
        std::fill(dbeta[k].begin(), dbeta[k].end(), 0.0f);
      }
      for (size_t k = L; k-- > 0;) {
        const ShadowLayer& l = model.layers[k];
        const LayerGeom& g = geom[k];
        LayerBatch& lb = batch[k];
        float* dprev = k == 0 ? dinput.data() : batch[k - 1].dact.data();
        const float* prev_act = k == 0 ? input.data() : batch[k - 1].act.data();
        const size_t pe = k == 0 ? in_elems : geom[k - 1].out_elems;
        if (g.pool) {
          std::memset(dprev, 0, sizeof(float) * B * pe);
          for (size_t b = 0; b < B; ++b) {
            const float* da = lb.dact.data() + b * g.out_elems;
            const int* src = lb.pool_src.data() + b * g.out_elems;
            float* dp = dprev + b * pe;
            for (size_t i = 0; i < g.out_elems; ++i) dp[src[i]] += da[i];
          }
          continue;
        }
        if (!g.output) {
          // STE through the activation quantizer, then batch-norm backward.
          for (size_t i = 0; i < lb.y.size(); ++i)
            lb.dact[i] = std::abs(double(lb.y[i])) <= act_bound ? lb.dact[i] : 0.0f;
          train_detail::bn_backward(lb.acc.data(), lb.dact.data(), lb.dacc.data(), B, g.channels,
                                    g.spatial, stats[k], l.gamma.data(), dgamma[k].data(),
                                    dbeta[k].data());
        }
        const float* dacc = lb.dacc.data();
        if (g.conv) {
          for (size_t b = 0; b < B; ++b) {
            train_detail::conv3x3_backward_weights(prev_act + b * pe, dacc + b * g.out_elems,
                                                   dw[k].data(), l.in_shape.dims[0],
                                                   l.in_shape.dims[1], l.in_shape.dims[2],
                                                   g.channels);
            if (k > 0)
              train_detail::conv3x3_backward_input(dacc + b * g.out_elems, wq[k].data(),
                                                   dprev + b * pe, l.in_shape.dims[0],
                                                   l.in_shape.dims[1], l.in_shape.dims[2],
                                                   g.channels);
          }
        } else {
          for (size_t b = 0; b < B; ++b) {
            const float* da = dacc + b * g.out_elems;
            const float* pa = prev_act + b * pe;
            for (size_t o = 0; o < g.out_elems; ++o) {
              float* wrow = dw[k].data() + o * g.in_elems;
              const float gout = da[o];
              for (size_t i = 0; i < g.in_elems; ++i) wrow[i] += gout * pa[i];
            }
            if (k > 0) {
              float* dp = dprev + b * pe;
              std::fill(dp, dp + pe, 0.0f);
              for (size_t o = 0; o < g.out_elems; ++o) {
                const float* wrow = wq[k].data() + o * g.in_elems;
                const float gout = da[o];
                for (size_t i = 0; i < g.in_elems; ++i) dp[i] += gout * wrow[i];
              }
            }
          }
        }
      }

      // SGD with momentum; straight-through to the shadow weights, then clip.
      for (size_t k = 0; k < L; ++k) {
        ShadowLayer& l = model.layers[k];
        for (size_t i = 0; i < l.weights.size(); ++i) {
          l.w_vel[i] = float(config.momentum * l.w_vel[i] - lr * dw[k][i]);
          l.weights[i] = std::clamp(l.weights[i] + l.w_vel[i], -float(config.weight_clip),
                                    float(config.weight_clip));
        }
        for (size_t c = 0; c < l.gamma.size(); ++c) {
          l.g_vel[c] = float(config.momentum * l.g_vel[c] - lr * dgamma[k][c]);
          l.gamma[c] += l.g_vel[c];
          l.b_vel[c] = float(config.momentum * l.b_vel[c] - lr * dbeta[k][c]);
          l.beta[c] += l.b_vel[c];
        }
      }
    }

    for (size_t k = 0; k < L; ++k) {
      const ShadowLayer& l = model.layers[k];
      for (float g : l.gamma)
        if (!std::isfinite(g))
          raise(Errc::diverged, "train_ste: non-finite batch-norm scale after epoch " +
                                    std::to_string(epoch) + ", layer " + std::to_string(k));
    }
    if (log) {
      EpochLog e;
      e.epoch = epoch;
      e.train_loss = batches > 0 ? epoch_loss / double(batches) : 0.0;
      e.test_accuracy =
          test ? quantized_accuracy(model, *test, 1000) : std::numeric_limits<double>::quiet_NaN();
      log->push_back(e);
    }
    lr *= config.lr_decay;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Batch-norm folding and export

FoldedThresholds fold_batchnorm(const ShadowLayer& layer, Precision precision) {
  const size_t channels = layer.channels();
  if (channels == 0) raise(Errc::invalid_argument, "fold_batchnorm: layer has no batch norm");
  const bool q2a = NetworkTopology::activations_are_q2(precision);
  const size_t per = q2a ? 3 : 1;
  const double boundaries_q2[3] = {-2.0, 0.0, 2.0};
  const double boundary_bin[1] = {0.0};
  const double* boundaries = q2a ? boundaries_q2 : boundary_bin;

  FoldedThresholds out;
  out.thresholds = per == 1 ? IntTensor(Shape{uint32_t(channels)})
                            : IntTensor(Shape{uint32_t(channels), uint32_t(per)});
  out.signs.resize(channels);
  for (size_t c = 0; c < channels; ++c) {
    const double gamma = layer.gamma[c];
    if (gamma == 0.0)
      raise(Errc::degenerate_channel, "fold_batchnorm: gamma == 0 in channel " + std::to_string(c));
    const double sigma = std::sqrt(double(layer.run_var[c]) + kBnEps);
    out.signs[c] = gamma > 0 ? int8_t(1) : int8_t(-1);
    for (size_t t = 0; t < per; ++t) {
      const double cut = double(layer.run_mean[c]) + (boundaries[t] - layer.beta[c]) * sigma / gamma;
      double tau = gamma > 0 ? std::ceil(cut) : std::floor(cut);
      tau = std::clamp(tau, double(std::numeric_limits<int32_t>::min()),
                       double(std::numeric_limits<int32_t>::max()));
      out.thresholds[c * per + t] = int32_t(tau);
    }
  }
  return out;
}

NetworkTopology export_topology(const ShadowModel& model) {
  NetworkTopology net;
  net.name = model.name;
  net.precision = model.precision;
  net.num_classes = model.num_classes;
  const bool q2w = NetworkTopology::weights_are_q2(model.precision);
  for (size_t k = 0; k < model.layers.size(); ++k) {
    const ShadowLayer& sl = model.layers[k];
    LayerSpec l;
    l.kind = sl.kind;
    l.in_shape = sl.in_shape;
    l.out_shape = sl.out_shape;
    if (sl.kind != LayerKind::MaxPool2x2) {
      const bool conv = sl.kind == LayerKind::InputConv3x3 || sl.kind == LayerKind::BinConv3x3;
      Shape wshape = conv ? Shape{l.out_shape.dims[0], l.in_shape.dims[0], 3, 3}
                          : Shape{uint32_t(l.out_shape.elements()), uint32_t(l.in_shape.elements())};
      if (q2w) {
        std::vector<double> w(sl.weights.begin(), sl.weights.end());
        l.weights = quantize2(w, kQ2WeightDelta, std::move(wshape));
      } else {
        l.weights = binarize(std::span<const float>(sl.weights), std::move(wshape));
      }
      if (sl.kind != LayerKind::OutputDense) {
        FoldedThresholds folded = fold_batchnorm(sl, model.precision);
        l.thresholds = std::move(folded.thresholds);
        l.signs = std::move(folded.signs);
      }
    }
    net.layers.push_back(std::move(l));
  }
  net.initialized = true;
  net.validate();
  return net;
}

void write_training_log_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,train_loss,test_accuracy\n";
  for (const EpochLog& e : log) {
    out << e.epoch << ',' << e.train_loss << ',';
    if (std::isnan(e.test_accuracy))
      out << "nan";
    else
      out << e.test_accuracy;
    out << '\n';
  }
}

}  // namespace bnnfi
