#include <doctest.h>

#include <cmath>
#include <vector>

#include "bnnfi/error.hpp"
#include "bnnfi/rng.hpp"
#include "bnnfi/tensor.hpp"

using namespace bnnfi;

namespace {

// Independent scalar oracle: decode both rows and multiply.
int decoded_dot(const BitTensor& a, const BitTensor& b) {
  int sum = 0;
  for (size_t i = 0; i < a.elements(); ++i) sum += a.decode(i) * b.decode(i);
  return sum;
}

BitTensor random_bits(SplitMix64& rng, size_t n) {
  BitTensor t(Shape{uint32_t(n)});
  for (size_t i = 0; i < n; ++i) t.set(i, rng.uniform_below(2) == 1);
  return t;
}

Q2Tensor random_q2(SplitMix64& rng, size_t n) {
  Q2Tensor t(Shape{uint32_t(n)});
  for (size_t i = 0; i < n; ++i) t.set_code(i, unsigned(rng.uniform_below(4)));
  return t;
}

BitTensor bits_from_value(uint64_t v, size_t n) {
  BitTensor t(Shape{uint32_t(n)});
  for (size_t i = 0; i < n; ++i) t.set(i, (v >> i) & 1);
  return t;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("shape basics and invariants") {
  CHECK((Shape{3, 4}.elements() == 12));
  CHECK(Shape{784}.elements() == 784);
  CHECK_THROWS_AS((Shape{0, 4}), Error);
}

TEST_CASE("binarize examples") {
  const std::vector<double> x = {0.5, -0.2, 0.0};
  const BitTensor t = binarize(std::span<const double>(x), Shape{3});
  CHECK(t.decode(0) == 1);
  CHECK(t.decode(1) == -1);
  CHECK(t.decode(2) == 1);  // sign(0) = +1

  const std::vector<double> neg(100, -1.0);
  const BitTensor n = binarize(std::span<const double>(neg), Shape{100});
  for (const uint64_t w : n.words()) CHECK(w == 0);

  const std::vector<double> bad = {1.0, std::nan("")};
  CHECK_THROWS_AS(binarize(std::span<const double>(bad), Shape{2}), Error);
}

TEST_CASE("binarize elementwise oracle on 1000 samples") {
  SplitMix64 rng(17);
  std::vector<double> x(1000);
  for (double& v : x) v = rng.uniform(-3.0, 3.0);
  x[42] = 0.0;
  const BitTensor t = binarize(std::span<const double>(x), Shape{1000});
  for (size_t i = 0; i < x.size(); ++i) CHECK(t.decode(i) == (x[i] >= 0 ? 1 : -1));
}

TEST_CASE("pack/decode round-trip property") {
  SplitMix64 rng(3);
  for (int round = 0; round < 20; ++round) {
    const size_t n = 1 + rng.uniform_below(200);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform_below(2) ? 1.0 : -1.0;
    const BitTensor t = binarize(std::span<const double>(v), Shape{uint32_t(n)});
    for (size_t i = 0; i < n; ++i) CHECK(double(t.decode(i)) == v[i]);
    // Padding bits beyond the last element stay zero.
    if (n % 64 != 0) CHECK((t.words().back() >> (n % 64)) == 0);
  }
}

TEST_CASE("quantize2 examples") {
  const std::vector<double> x = {-10.0, -1.0, 0.5, 10.0};
  const Q2Tensor t = quantize2(std::span<const double>(x), 1.0, Shape{4});
  CHECK(t.decode(0) == -3);
  CHECK(t.decode(1) == -1);
  CHECK(t.decode(2) == 1);
  CHECK(t.decode(3) == 3);

  const std::vector<double> zero = {0.0};
  CHECK(quantize2(std::span<const double>(zero), 2.5, Shape{1}).decode(0) == 1);  // tie rounds up

  CHECK_THROWS_AS(quantize2(std::span<const double>(zero), 0.0, Shape{1}), Error);
  CHECK_THROWS_AS(quantize2(std::span<const double>(zero), -1.0, Shape{1}), Error);
}

TEST_CASE("quantize2 matches scalar reference on 1000 uniform samples") {
  SplitMix64 rng(11);
  std::vector<double> x(1000);
  for (double& v : x) v = rng.uniform(-5.0, 5.0);
  const Q2Tensor t = quantize2(std::span<const double>(x), 1.0, Shape{1000});
  for (size_t i = 0; i < x.size(); ++i) {
    // Nearest level in {-3,-1,1,3}, ties toward +inf.
    int best = -3;
    double best_d = std::abs(x[i] - -3.0);
    for (int level : {-1, 1, 3}) {
      const double d = std::abs(x[i] - level);
      if (d < best_d || (d == best_d && level > best)) {
        best = level;
        best_d = d;
      }
    }
    CHECK(t.decode(i) == best);
  }
}

TEST_CASE("xnor_popcount_dot trivial examples") {
  SplitMix64 rng(5);
  const BitTensor a = random_bits(rng, 64);
  CHECK(xnor_popcount_dot(a, a) == 64);
  BitTensor b(Shape{64});
  for (size_t i = 0; i < 64; ++i) b.set(i, !a.get(i));
  CHECK(xnor_popcount_dot(a, b) == -64);

  const BitTensor short_row = random_bits(rng, 32);
  CHECK_THROWS_AS(xnor_popcount_dot(a, short_row), Error);
}

TEST_CASE("xnor_popcount_dot exhaustive oracle at n=8") {
  for (uint64_t va = 0; va < 256; ++va) {
    const BitTensor a = bits_from_value(va, 8);
    for (uint64_t vb = 0; vb < 256; ++vb) {
      const BitTensor b = bits_from_value(vb, 8);
      REQUIRE(xnor_popcount_dot(a, b) == decoded_dot(a, b));
    }
  }
}

TEST_CASE("xnor_popcount_dot exhaustive symmetry and parity at n<=12") {
  SplitMix64 rng(7);
  for (size_t n : {1, 3, 12}) {
    for (int round = 0; round < 200; ++round) {
      const BitTensor a = random_bits(rng, n);
      const BitTensor b = random_bits(rng, n);
      const int d = xnor_popcount_dot(a, b);
      CHECK(d == decoded_dot(a, b));
      CHECK(d == xnor_popcount_dot(b, a));
      CHECK(((d % 2) + 2) % 2 == n % 2);  // result parity equals n parity
    }
  }
}

TEST_CASE("xnor kernel crosses word boundaries (n=257)") {
  SplitMix64 rng(9);
  for (int round = 0; round < 500; ++round) {
    const BitTensor a = random_bits(rng, 257);
    const BitTensor b = random_bits(rng, 257);
    REQUIRE(xnor_popcount_dot(a, b) == decoded_dot(a, b));
  }
}

TEST_CASE("padding bits never affect the dot product") {
  SplitMix64 rng(13);
  BitTensor a = random_bits(rng, 70);
  BitTensor b = random_bits(rng, 70);
  const int clean = xnor_popcount_dot(a, b);
  // Poke garbage into the padding region of the raw words.
  a.words()[1] |= ~((uint64_t(1) << (70 - 64)) - 1);
  b.words()[1] |= uint64_t(0xABCD) << 20;
  CHECK(xnor_popcount_dot(a, b) == clean);
}

TEST_CASE("q2_dot examples and oracle") {
  Q2Tensor a(Shape{16}), b(Shape{16});
  for (size_t i = 0; i < 16; ++i) {
    a.set_code(i, 3);
    b.set_code(i, 3);
  }
  CHECK(q2_dot(a, b) == 144);  // 16 * 9

  Q2Tensor c(Shape{2}), d(Shape{2});
  c.set_code(0, 0);  // -3
  c.set_code(1, 3);  // +3
  d.set_code(0, 3);
  d.set_code(1, 0);
  CHECK(q2_dot(c, d) == -18);

  CHECK_THROWS_AS(q2_dot(a, c), Error);

  SplitMix64 rng(21);
  for (int round = 0; round < 10000; ++round) {
    const Q2Tensor x = random_q2(rng, 32);
    const Q2Tensor y = random_q2(rng, 32);
    int expected = 0;
    for (size_t i = 0; i < 32; ++i) expected += x.decode(i) * y.decode(i);
    REQUIRE(q2_dot(x, y) == expected);
    REQUIRE(q2_dot(x, y) == q2_dot(y, x));
  }
}

TEST_CASE("span kernels agree with decoded dots at arbitrary offsets") {
  SplitMix64 rng(23);
  for (int round = 0; round < 400; ++round) {
    const size_t n = 1 + rng.uniform_below(300);
    const size_t off = rng.uniform_below(100);
    const BitTensor a = random_bits(rng, n);
    const BitTensor w = random_bits(rng, off + n + 64);
    int expected = 0;
    for (size_t i = 0; i < n; ++i) expected += a.decode(i) * w.decode(off + i);
    CHECK(xnor_popcount_span(a.words(), 0, w.words(), off, n) == expected);

    const Q2Tensor qa = random_q2(rng, n);
    const Q2Tensor qw = random_q2(rng, off + n + 32);
    int q_expected = 0, m_expected = 0;
    for (size_t i = 0; i < n; ++i) {
      q_expected += qa.decode(i) * qw.decode(off + i);
      m_expected += w.decode(off + i) * qa.decode(i);
    }
    CHECK(q2_dot_span(qw.words(), off, qa.words(), 0, n) == q_expected);
    CHECK(b1q2_dot_span(w.words(), off, qa.words(), 0, n) == m_expected);
  }
}

}  // TEST_SUITE
