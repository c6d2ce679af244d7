#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnnfi/network.hpp"

namespace bnnfi {

enum class DatasetKind : uint8_t { MNIST_IDX, CIFAR10_BIN };

// Images as raw 8-bit pixels in stored file order plus labels 0..9.
struct DatasetSource {
  DatasetKind kind = DatasetKind::MNIST_IDX;
  uint32_t channels = 1, height = 28, width = 28;
  std::vector<uint8_t> pixels;  // image i at [i * pixels_per_image, ...)
  std::vector<uint8_t> labels;

  size_t count() const { return labels.size(); }
  size_t pixels_per_image() const { return size_t(channels) * height * width; }

  // Image i widened to int32, shaped to match a network input: [C*H*W] flat
  // for dense-input networks, [C,H,W] for conv-input networks.
  IntTensor image(size_t i, bool conv_shape) const;
};

// IDX parser (big-endian magic 0x00000803 images / 0x00000801 labels).
// Enforces the MNIST geometry (28x28) and matching image/label counts.
DatasetSource load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (channel-major R,G,B planes of 32x32). Batches concatenate in argument order.
DatasetSource load_cifar10_bin(const std::vector<std::string>& batch_paths);

// Model container: magic "BNN1", version, precision, layer blocks (kind,
// in/out shape dims, threshold block, little-endian u64 weight payload), and
// a trailing CRC32 of all preceding bytes. The payload words here are the
// exact words fault bit addresses index, so the format is bit-for-bit fixed.
std::vector<uint8_t> save_model(const NetworkTopology& net);
NetworkTopology load_model(const std::vector<uint8_t>& bytes);

void save_model_file(const NetworkTopology& net, const std::string& path);
NetworkTopology load_model_file(const std::string& path);

// CRC32 (IEEE 802.3 polynomial, reflected).
uint32_t crc32(const uint8_t* data, size_t len);

}  // namespace bnnfi
