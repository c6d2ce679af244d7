#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bnnfi {

// Tensor extents. Element count is the product of all extents; every extent
// must be >= 1.
struct Shape {
  std::vector<uint32_t> dims;

  Shape() = default;
  Shape(std::initializer_list<uint32_t> d);
  explicit Shape(std::vector<uint32_t> d);

  size_t elements() const;
  size_t rank() const { return dims.size(); }
  bool operator==(const Shape& other) const { return dims == other.dims; }
};

// Bit-packed +/-1 tensor. Logical element i lives at word i/64, bit i%64
// (64-bit little-endian word packing); bit value b decodes to 2b-1, so
// 0 -> -1 and 1 -> +1. Padding bits past the last element are kept zero.
class BitTensor {
public:
  BitTensor() = default;
  explicit BitTensor(Shape shape);

  const Shape& shape() const { return shape_; }
  size_t elements() const { return shape_.elements(); }
  // Bits of susceptible payload (== element count; padding excluded).
  size_t payload_bits() const { return shape_.elements(); }

  bool get(size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(size_t i, bool v) {
    const uint64_t m = uint64_t(1) << (i & 63);
    if (v)
      words_[i >> 6] |= m;
    else
      words_[i >> 6] &= ~m;
  }
  int decode(size_t i) const { return get(i) ? 1 : -1; }

  std::span<const uint64_t> words() const { return words_; }
  std::span<uint64_t> words() { return words_; }

  bool operator==(const BitTensor& other) const {
    return shape_ == other.shape_ && words_ == other.words_;
  }

private:
  Shape shape_;
  std::vector<uint64_t> words_;
};

// 2-bit tensor: codes packed 32 per 64-bit word, little-endian (element i at
// word i/32, bits 2*(i%32)..2*(i%32)+1). Code decode table: 0 -> -3, 1 -> -1,
// 2 -> +1, 3 -> +3.
class Q2Tensor {
public:
  static constexpr int kLevels[4] = {-3, -1, 1, 3};
  static int decode_code(unsigned code) { return kLevels[code & 3]; }

  Q2Tensor() = default;
  explicit Q2Tensor(Shape shape);

  const Shape& shape() const { return shape_; }
  size_t elements() const { return shape_.elements(); }
  size_t payload_bits() const { return 2 * shape_.elements(); }

  unsigned get_code(size_t i) const { return (words_[i >> 5] >> ((i & 31) * 2)) & 3u; }
  void set_code(size_t i, unsigned code) {
    const unsigned shift = unsigned(i & 31) * 2;
    uint64_t& w = words_[i >> 5];
    w = (w & ~(uint64_t(3) << shift)) | (uint64_t(code & 3) << shift);
  }
  int decode(size_t i) const { return decode_code(get_code(i)); }

  std::span<const uint64_t> words() const { return words_; }
  std::span<uint64_t> words() { return words_; }

  bool operator==(const Q2Tensor& other) const {
    return shape_ == other.shape_ && words_ == other.words_;
  }

private:
  Shape shape_;
  std::vector<uint64_t> words_;
};

// Plain signed 32-bit tensor: accumulator sums, class scores, widened pixels.
class IntTensor {
public:
  IntTensor() = default;
  explicit IntTensor(Shape shape) : shape_(std::move(shape)), values_(shape_.elements(), 0) {}
  IntTensor(Shape shape, std::vector<int32_t> values);

  const Shape& shape() const { return shape_; }
  size_t elements() const { return values_.size(); }

  int32_t operator[](size_t i) const { return values_[i]; }
  int32_t& operator[](size_t i) { return values_[i]; }

  std::span<const int32_t> values() const { return values_; }
  std::span<int32_t> values() { return values_; }

  bool operator==(const IntTensor& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

private:
  Shape shape_;
  std::vector<int32_t> values_;
};

// Sign binarization with sign(0) = +1: element i is +1 iff x[i] >= 0.
// Rejects non-finite input.
BitTensor binarize(std::span<const double> x, Shape shape);
BitTensor binarize(std::span<const float> x, Shape shape);

// Nearest level in {-3,-1,+1,+3} of x/delta, ties rounding toward +inf.
Q2Tensor quantize2(std::span<const double> x, double delta, Shape shape);

// Exact integer dot products of decoded values. Tensor arguments must have
// matching element counts.
int32_t xnor_popcount_dot(const BitTensor& a, const BitTensor& b);
int32_t q2_dot(const Q2Tensor& a, const Q2Tensor& b);

// Row kernels used by the forward pass: dot of n elements starting at
// arbitrary (unaligned) element offsets inside packed word arrays.
int32_t xnor_popcount_span(std::span<const uint64_t> a, size_t a_bit,
                           std::span<const uint64_t> b, size_t b_bit, size_t n);
int32_t q2_dot_span(std::span<const uint64_t> a, size_t a_elem,
                    std::span<const uint64_t> b, size_t b_elem, size_t n);
// Mixed 1-bit x 2-bit dot (W1A2 layers): sum of decode(w_i) * decode(a_i).
int32_t b1q2_dot_span(std::span<const uint64_t> w, size_t w_bit,
                      std::span<const uint64_t> a, size_t a_elem, size_t n);

// Fetches 64 bits starting at an arbitrary bit position; bits past the end of
// the array read as zero.
uint64_t word_at(std::span<const uint64_t> words, size_t bit);

// Word count needed to pack `bits` bits.
inline size_t words_for_bits(size_t bits) { return (bits + 63) / 64; }

}  // namespace bnnfi
