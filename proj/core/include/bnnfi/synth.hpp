#pragma once

#include <cstdint>
#include <string>

#include "bnnfi/model_io.hpp"

namespace bnnfi {

// Deterministic synthetic digit dataset: glyphs 0-9 rendered with seeded
// random affine jitter, intensity variation and pixel noise. Produces
// MNIST-geometry grayscale (28x28) or CIFAR-geometry color (32x32x3) images
// so the standard loaders and full pipeline run self-contained when the real
// datasets are not on disk. Labels cycle 0..9 in stored order.
DatasetSource make_synth_digits(DatasetKind kind, size_t count, uint64_t seed);

// Writers emitting the corresponding on-disk formats bit-exactly.
void write_idx_files(const DatasetSource& ds, const std::string& images_path,
                     const std::string& labels_path);
void write_cifar10_bin(const DatasetSource& ds, const std::string& batch_path);

}  // namespace bnnfi
