#include "bnnfi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bnnfi/error.hpp"
#include "bnnfi/rng.hpp"

namespace bnnfi {

namespace {

constexpr int kGlyphW = 8;
constexpr int kGlyphH = 12;

// 8x12 digit glyphs, row-major, '#' = ink.
const char* const kGlyphs[10] = {
    "..####.."
    ".##..##."
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    ".##..##."
    "..####..",

    "...##..."
    "..###..."
    ".####..."
    "...##..."
    "...##..."
    "...##..."
    "...##..."
    "...##..."
    "...##..."
    "...##..."
    "...##..."
    ".######.",

    "..####.."
    ".##..##."
    "##....##"
    "......##"
    ".....##."
    "....##.."
    "...##..."
    "..##...."
    ".##....."
    "##......"
    "##......"
    "########",

    "..####.."
    ".##..##."
    "......##"
    "......##"
    "...###.."
    "...###.."
    "......##"
    "......##"
    "......##"
    "##....##"
    ".##..##."
    "..####..",

    ".....##."
    "....###."
    "...####."
    "..##.##."
    ".##..##."
    "##...##."
    "########"
    ".....##."
    ".....##."
    ".....##."
    ".....##."
    ".....##.",

    "########"
    "##......"
    "##......"
    "##......"
    "######.."
    ".....##."
    "......##"
    "......##"
    "......##"
    "##....##"
    ".##..##."
    "..####..",

    "..####.."
    ".##..##."
    "##......"
    "##......"
    "######.."
    "###..##."
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    ".##..##."
    "..####..",

    "########"
    "......##"
    ".....##."
    ".....##."
    "....##.."
    "....##.."
    "...##..."
    "...##..."
    "..##...."
    "..##...."
    ".##....."
    ".##.....",

    "..####.."
    ".##..##."
    "##....##"
    "##....##"
    ".##..##."
    "..####.."
    ".##..##."
    "##....##"
    "##....##"
    "##....##"
    ".##..##."
    "..####..",

    "..####.."
    ".##..##."
    "##....##"
    "##....##"
    "##....##"
    ".##..###"
    "..###.##"
    "......##"
    "......##"
    "##....##"
    ".##..##."
    "..####..",
};

double glyph_sample(int digit, double gx, double gy) {
  // Bilinear sample of the glyph grid; outside reads 0.
  const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
  const double fx = gx - x0, fy = gy - y0;
  auto at = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= kGlyphW || y >= kGlyphH) return 0.0;
    return kGlyphs[digit][y * kGlyphW + x] == '#' ? 1.0 : 0.0;
  };
  return at(x0, y0) * (1 - fx) * (1 - fy) + at(x0 + 1, y0) * fx * (1 - fy) +
         at(x0, y0 + 1) * (1 - fx) * fy + at(x0 + 1, y0 + 1) * fx * fy;
}

struct Jitter {
  double dx, dy, angle, scale_x, scale_y, shear;
  double fg, bg, noise;
  double tint[3];
};

Jitter sample_jitter(SplitMix64& rng, bool hard) {
  // Most samples render cleanly; a hard subpopulation (concentrated in a few
  // classes, like real handwriting confusions) carries heavy jitter and noise
  // so the trained decision margins are uneven across the input space.
  Jitter j;
  const double amp = hard ? 3.0 : 1.0;
  j.dx = rng.uniform(-1.2 * amp, 1.2 * amp);
  j.dy = rng.uniform(-1.2 * amp, 1.2 * amp);
  j.angle = rng.uniform(-0.08 * amp, 0.08 * amp);
  j.scale_x = rng.uniform(1.0 - 0.07 * amp, 1.0 + 0.07 * amp);
  j.scale_y = rng.uniform(1.0 - 0.07 * amp, 1.0 + 0.07 * amp);
  j.shear = rng.uniform(-0.06 * amp, 0.06 * amp);
  j.fg = hard ? rng.uniform(120.0, 255.0) : rng.uniform(200.0, 255.0);
  j.bg = hard ? rng.uniform(0.0, 70.0) : rng.uniform(0.0, 15.0);
  j.noise = hard ? 55.0 : 6.0;
  for (double& t : j.tint) t = rng.uniform(0.55, 1.0);
  return j;
}

// Coverage of the transformed glyph at output pixel (u, v) of a size x size
// canvas: the output point is mapped back into glyph coordinates.
double coverage_at(int digit, const Jitter& j, double u, double v, int size) {
  const double cx = size / 2.0, cy = size / 2.0;
  const double nominal_sx = size / 14.0;  // glyph box (8x12) fills roughly 60% of the canvas
  const double nominal_sy = size / 15.5;
  double x = (u - cx - j.dx), y = (v - cy - j.dy);
  const double c = std::cos(-j.angle), s = std::sin(-j.angle);
  const double rx = c * x - s * y, ry = s * x + c * y;
  double gx = rx / (nominal_sx * j.scale_x);
  double gy = ry / (nominal_sy * j.scale_y);
  gx += j.shear * gy;
  return glyph_sample(digit, gx + kGlyphW / 2.0 - 0.5, gy + kGlyphH / 2.0 - 0.5);
}

}  // namespace

DatasetSource make_synth_digits(DatasetKind kind, size_t count, uint64_t seed) {
  DatasetSource ds;
  ds.kind = kind;
  if (kind == DatasetKind::MNIST_IDX) {
    ds.channels = 1;
    ds.height = ds.width = 28;
  } else {
    ds.channels = 3;
    ds.height = ds.width = 32;
  }
  const int size = int(ds.height);
  ds.pixels.reserve(count * ds.pixels_per_image());
  ds.labels.reserve(count);
  SplitMix64 rng(mix64(seed));
  for (size_t i = 0; i < count; ++i) {
    const int digit = int(i % 10);
    // Digits 4 and 9 carry most of the hard subpopulation.
    const double hard_p = (digit == 4 || digit == 9) ? 0.35 : 0.03;
    const bool hard = rng.next_double() < hard_p;
    const Jitter j = sample_jitter(rng, hard);
    for (uint32_t c = 0; c < ds.channels; ++c) {
      const double fg = ds.channels == 1 ? j.fg : j.fg * j.tint[c];
      const double bg = ds.channels == 1 ? j.bg : j.bg * j.tint[(c + 1) % 3];
      for (int v = 0; v < size; ++v) {
        for (int u = 0; u < size; ++u) {
          const double cov = coverage_at(digit, j, u, v, size);
          double value = bg + (fg - bg) * cov + rng.uniform(-j.noise, j.noise);
          value = std::clamp(value, 0.0, 255.0);
          ds.pixels.push_back(uint8_t(std::lround(value)));
        }
      }
    }
    ds.labels.push_back(uint8_t(digit));
  }
  return ds;
}

namespace {

void put_be32(std::ofstream& out, uint32_t v) {
  const uint8_t bytes[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_failure, "cannot write '" + path + "'");
  return out;
}

}  // namespace

void write_idx_files(const DatasetSource& ds, const std::string& images_path,
                     const std::string& labels_path) {
  if (ds.channels != 1) raise(Errc::invalid_argument, "IDX writer expects single-channel images");
  auto img = open_out(images_path);
  put_be32(img, 0x00000803u);
  put_be32(img, uint32_t(ds.count()));
  put_be32(img, ds.height);
  put_be32(img, ds.width);
  img.write(reinterpret_cast<const char*>(ds.pixels.data()), std::streamsize(ds.pixels.size()));
  if (!img) raise(Errc::io_failure, "error writing '" + images_path + "'");

  auto lab = open_out(labels_path);
  put_be32(lab, 0x00000801u);
  put_be32(lab, uint32_t(ds.count()));
  lab.write(reinterpret_cast<const char*>(ds.labels.data()), std::streamsize(ds.labels.size()));
  if (!lab) raise(Errc::io_failure, "error writing '" + labels_path + "'");
}

void write_cifar10_bin(const DatasetSource& ds, const std::string& batch_path) {
  if (ds.channels != 3 || ds.height != 32 || ds.width != 32)
    raise(Errc::invalid_argument, "CIFAR writer expects 32x32x3 images");
  auto out = open_out(batch_path);
  const size_t n = ds.pixels_per_image();
  for (size_t i = 0; i < ds.count(); ++i) {
    out.put(char(ds.labels[i]));
    out.write(reinterpret_cast<const char*>(ds.pixels.data() + i * n), std::streamsize(n));
  }
  if (!out) raise(Errc::io_failure, "error writing '" + batch_path + "'");
}

}  // namespace bnnfi
