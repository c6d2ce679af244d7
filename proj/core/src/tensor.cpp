#include "bnnfi/tensor.hpp"

#include <bit>
#include <cmath>

#include "bnnfi/error.hpp"

namespace bnnfi {

Shape::Shape(std::initializer_list<uint32_t> d) : dims(d) {
  for (uint32_t e : dims)
    if (e < 1) raise(Errc::invalid_argument, "Shape: every extent must be >= 1");
}

Shape::Shape(std::vector<uint32_t> d) : dims(std::move(d)) {
  for (uint32_t e : dims)
    if (e < 1) raise(Errc::invalid_argument, "Shape: every extent must be >= 1");
}

size_t Shape::elements() const {
  size_t n = 1;
  for (uint32_t e : dims) n *= e;
  return dims.empty() ? 0 : n;
}

BitTensor::BitTensor(Shape shape)
    : shape_(std::move(shape)), words_(words_for_bits(shape_.elements()), 0) {}

Q2Tensor::Q2Tensor(Shape shape)
    : shape_(std::move(shape)), words_(words_for_bits(2 * shape_.elements()), 0) {}

IntTensor::IntTensor(Shape shape, std::vector<int32_t> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.elements() != values_.size())
    raise(Errc::shape_mismatch, "IntTensor: value count does not match shape");
}

namespace {

template <typename T>
BitTensor binarize_impl(std::span<const T> x, Shape shape) {
  if (shape.elements() != x.size())
    raise(Errc::shape_mismatch, "binarize: input length does not match shape");
  BitTensor out(std::move(shape));
  for (size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(double(x[i]))) raise(Errc::invalid_argument, "binarize: non-finite input");
    out.set(i, x[i] >= T(0));
  }
  return out;
}

}  // namespace

BitTensor binarize(std::span<const double> x, Shape shape) { return binarize_impl(x, std::move(shape)); }
BitTensor binarize(std::span<const float> x, Shape shape) { return binarize_impl(x, std::move(shape)); }

Q2Tensor quantize2(std::span<const double> x, double delta, Shape shape) {
  if (!(delta > 0)) raise(Errc::invalid_argument, "quantize2: delta must be positive");
  if (shape.elements() != x.size())
    raise(Errc::shape_mismatch, "quantize2: input length does not match shape");
  Q2Tensor out(std::move(shape));
  for (size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) raise(Errc::invalid_argument, "quantize2: non-finite input");
    const double v = x[i] / delta;
    // Level midpoints sit at -2, 0, +2; >= makes ties round toward +inf.
    const unsigned code = unsigned(v >= -2.0) + unsigned(v >= 0.0) + unsigned(v >= 2.0);
    out.set_code(i, code);
  }
  return out;
}

uint64_t word_at(std::span<const uint64_t> words, size_t bit) {
  const size_t i = bit >> 6;
  const unsigned r = unsigned(bit & 63);
  if (i >= words.size()) return 0;
  uint64_t w = words[i] >> r;
  if (r != 0 && i + 1 < words.size()) w |= words[i + 1] << (64 - r);
  return w;
}

int32_t xnor_popcount_span(std::span<const uint64_t> a, size_t a_bit,
                           std::span<const uint64_t> b, size_t b_bit, size_t n) {
  int64_t matches = 0;
  size_t done = 0;
  while (done < n) {
    const size_t take = std::min<size_t>(64, n - done);
    uint64_t x = ~(word_at(a, a_bit + done) ^ word_at(b, b_bit + done));
    if (take < 64) x &= (uint64_t(1) << take) - 1;  // mask to n; padding never contributes
    matches += std::popcount(x);
    done += take;
  }
  return int32_t(2 * matches - int64_t(n));
}

int32_t xnor_popcount_dot(const BitTensor& a, const BitTensor& b) {
  if (a.elements() != b.elements())
    raise(Errc::shape_mismatch, "xnor_popcount_dot: length mismatch");
  return xnor_popcount_span(a.words(), 0, b.words(), 0, a.elements());
}

int32_t q2_dot_span(std::span<const uint64_t> a, size_t a_elem,
                    std::span<const uint64_t> b, size_t b_elem, size_t n) {
  // sum over (2*ca - 3)(2*cb - 3) = 4*ca*cb - 6*(ca + cb) + 9, computed from
  // the bit planes of the 2-bit codes, 32 elements per fetched word.
  int64_t sum_ab = 0, sum_a = 0, sum_b = 0;
  size_t done = 0;
  while (done < n) {
    const size_t take = std::min<size_t>(32, n - done);
    uint64_t wa = word_at(a, (a_elem + done) * 2);
    uint64_t wb = word_at(b, (b_elem + done) * 2);
    if (take < 32) {
      const uint64_t mask = (uint64_t(1) << (take * 2)) - 1;
      wa &= mask;
      wb &= mask;
    }
    const uint64_t lo_mask = 0x5555555555555555ull;
    const uint64_t a_lo = wa & lo_mask, a_hi = (wa >> 1) & lo_mask;
    const uint64_t b_lo = wb & lo_mask, b_hi = (wb >> 1) & lo_mask;
    // ca = 2*a_hi + a_lo per 2-bit lane; lanes never carry into each other
    // because each plane holds single bits.
    sum_a += 2 * std::popcount(a_hi) + std::popcount(a_lo);
    sum_b += 2 * std::popcount(b_hi) + std::popcount(b_lo);
    sum_ab += 4 * std::popcount(a_hi & b_hi) + 2 * std::popcount(a_hi & b_lo) +
              2 * std::popcount(a_lo & b_hi) + std::popcount(a_lo & b_lo);
    done += take;
  }
  return int32_t(4 * sum_ab - 6 * (sum_a + sum_b) + 9 * int64_t(n));
}

int32_t q2_dot(const Q2Tensor& a, const Q2Tensor& b) {
  if (a.elements() != b.elements()) raise(Errc::shape_mismatch, "q2_dot: length mismatch");
  return q2_dot_span(a.words(), 0, b.words(), 0, a.elements());
}

int32_t b1q2_dot_span(std::span<const uint64_t> w, size_t w_bit,
                      std::span<const uint64_t> a, size_t a_elem, size_t n) {
  // decode(w) = 2*wb - 1, decode(a) = 4*a_hi + 2*a_lo - 3 (planes of the code)
  // => sum = 2*sum(wb*da) - sum(da) with da expanded per plane.
  int64_t sum_wa = 0, sum_a = 0;
  size_t done = 0;
  while (done < n) {
    const size_t take = std::min<size_t>(32, n - done);
    uint64_t ww = word_at(w, w_bit + done);  // 32 weight bits used per round
    uint64_t wa = word_at(a, (a_elem + done) * 2);
    if (take < 32) wa &= (uint64_t(1) << (take * 2)) - 1;
    const uint64_t lo_mask = 0x5555555555555555ull;
    const uint64_t a_lo = wa & lo_mask, a_hi = (wa >> 1) & lo_mask;
    // Spread weight bits onto the even lanes to align with the code planes.
    uint64_t w_even = 0;
    for (size_t k = 0; k < take; ++k) w_even |= ((ww >> k) & 1u) << (2 * k);
    sum_a += 4 * std::popcount(a_hi) + 2 * std::popcount(a_lo) - 3 * int64_t(take);
    sum_wa += 4 * std::popcount(w_even & a_hi) + 2 * std::popcount(w_even & a_lo) -
              3 * std::popcount(w_even);
    done += take;
  }
  return int32_t(2 * sum_wa - sum_a);
}

}  // namespace bnnfi
