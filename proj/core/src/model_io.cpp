#include "bnnfi/model_io.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "bnnfi/error.hpp"

namespace bnnfi {

IntTensor DatasetSource::image(size_t i, bool conv_shape) const {
  const size_t n = pixels_per_image();
  if (i >= count()) raise(Errc::out_of_range, "dataset image index out of range");
  Shape shape = conv_shape ? Shape{channels, height, width} : Shape{uint32_t(n)};
  IntTensor out(std::move(shape));
  const uint8_t* src = pixels.data() + i * n;
  for (size_t k = 0; k < n; ++k) out[k] = src[k];
  return out;
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_failure, "cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) raise(Errc::io_failure, "error reading '" + path + "'");
  return bytes;
}

uint32_t be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

}  // namespace

DatasetSource load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<uint8_t> img = read_file(images_path);
  const std::vector<uint8_t> lab = read_file(labels_path);

  if (img.size() < 16) raise(Errc::truncated, "IDX images: file shorter than header");
  if (be32(img.data()) != 0x00000803u)
    raise(Errc::bad_magic, "IDX images: bad magic (expected 0x00000803)");
  const uint32_t count = be32(img.data() + 4);
  const uint32_t rows = be32(img.data() + 8);
  const uint32_t cols = be32(img.data() + 12);
  if (rows != 28 || cols != 28)
    raise(Errc::bad_payload, "IDX images: expected 28x28 MNIST geometry, got " +
                                 std::to_string(rows) + "x" + std::to_string(cols));
  const size_t expected = 16 + size_t(count) * rows * cols;
  if (img.size() != expected)
    raise(Errc::truncated, "IDX images: expected " + std::to_string(expected) + " bytes, got " +
                               std::to_string(img.size()));

  if (lab.size() < 8) raise(Errc::truncated, "IDX labels: file shorter than header");
  if (be32(lab.data()) != 0x00000801u)
    raise(Errc::bad_magic, "IDX labels: bad magic (expected 0x00000801)");
  const uint32_t label_count = be32(lab.data() + 4);
  if (lab.size() != 8 + size_t(label_count))
    raise(Errc::truncated, "IDX labels: expected " + std::to_string(8 + size_t(label_count)) +
                               " bytes, got " + std::to_string(lab.size()));
  if (label_count != count)
    raise(Errc::count_mismatch, "IDX: " + std::to_string(count) + " images but " +
                                    std::to_string(label_count) + " labels");

  DatasetSource ds;
  ds.kind = DatasetKind::MNIST_IDX;
  ds.channels = 1;
  ds.height = rows;
  ds.width = cols;
  ds.pixels.assign(img.begin() + 16, img.end());
  ds.labels.assign(lab.begin() + 8, lab.end());
  for (uint8_t l : ds.labels)
    if (l > 9) raise(Errc::bad_payload, "IDX labels: label value out of 0..9");
  return ds;
}

DatasetSource load_cifar10_bin(const std::vector<std::string>& batch_paths) {
  constexpr size_t kRecord = 3073;
  DatasetSource ds;
  ds.kind = DatasetKind::CIFAR10_BIN;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  for (const std::string& path : batch_paths) {
    const std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() % kRecord != 0)
      raise(Errc::truncated, "CIFAR batch '" + path + "': size " + std::to_string(bytes.size()) +
                                 " is not a multiple of 3073");
    const size_t records = bytes.size() / kRecord;
    for (size_t r = 0; r < records; ++r) {
      const uint8_t* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) raise(Errc::bad_payload, "CIFAR batch '" + path + "': label out of 0..9");
      ds.labels.push_back(rec[0]);
      ds.pixels.insert(ds.pixels.end(), rec + 1, rec + kRecord);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CRC32

uint32_t crc32(const uint8_t* data, size_t len) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// ---------------------------------------------------------------------------
// Model file

namespace {

constexpr uint16_t kFormatVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

class Reader {
public:
  Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

  uint8_t u8() { return *take(1); }
  uint16_t u16() {
    const uint8_t* p = take(2);
    return uint16_t(p[0]) | uint16_t(p[1]) << 8;
  }
  uint32_t u32() {
    const uint8_t* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const uint8_t* p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
  }
  int32_t i32() { return int32_t(u32()); }
  size_t remaining() const { return size_ - pos_; }

private:
  const uint8_t* take(size_t n) {
    if (pos_ + n > size_) raise(Errc::truncated, "model file: truncated payload");
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

void put_shape(std::vector<uint8_t>& out, const Shape& s) {
  put_u32(out, uint32_t(s.dims.size()));
  for (uint32_t d : s.dims) put_u32(out, d);
}

Shape read_shape(Reader& r) {
  const uint32_t n = r.u32();
  if (n == 0 || n > 8) raise(Errc::bad_payload, "model file: bad shape rank");
  std::vector<uint32_t> dims(n);
  for (uint32_t& d : dims) {
    d = r.u32();
    if (d == 0) raise(Errc::bad_payload, "model file: zero shape extent");
  }
  return Shape(std::move(dims));
}

}  // namespace

std::vector<uint8_t> save_model(const NetworkTopology& net) {
  net.validate();
  std::vector<uint8_t> out;
  out.insert(out.end(), {'B', 'N', 'N', '1'});
  put_u16(out, kFormatVersion);
  out.push_back(uint8_t(net.precision));
  put_u16(out, uint16_t(net.layers.size()));
  for (const LayerSpec& l : net.layers) {
    out.push_back(uint8_t(l.kind));
    put_shape(out, l.in_shape);
    put_shape(out, l.out_shape);
    if (l.thresholds) {
      const uint32_t channels = uint32_t(l.fan_out());
      const uint32_t per = uint32_t(l.thresholds->elements() / channels);
      put_u32(out, channels);
      put_u32(out, per);
      for (size_t i = 0; i < l.thresholds->elements(); ++i)
        put_u32(out, uint32_t((*l.thresholds)[i]));
      for (int8_t s : l.signs) out.push_back(uint8_t(s));
    } else {
      put_u32(out, 0);
      put_u32(out, 0);
    }
    if (l.weights) {
      const auto words = std::visit([](const auto& t) { return t.words(); }, *l.weights);
      put_u64(out, words.size());
      for (uint64_t w : words) put_u64(out, w);
    } else {
      put_u64(out, 0);
    }
  }
  put_u32(out, crc32(out.data(), out.size()));
  return out;
}

NetworkTopology load_model(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "BNN1", 4) != 0)
    raise(Errc::bad_magic, "model file: bad magic (expected BNN1)");
  if (bytes.size() < 13) raise(Errc::truncated, "model file: shorter than minimal header");
  const uint32_t stored_crc = uint32_t(bytes[bytes.size() - 4]) |
                              uint32_t(bytes[bytes.size() - 3]) << 8 |
                              uint32_t(bytes[bytes.size() - 2]) << 16 |
                              uint32_t(bytes[bytes.size() - 1]) << 24;
  const uint32_t computed = crc32(bytes.data(), bytes.size() - 4);
  if (stored_crc != computed) raise(Errc::crc_mismatch, "model file: CRC32 mismatch");

  Reader r(bytes.data() + 4, bytes.size() - 8);
  const uint16_t version = r.u16();
  if (version != kFormatVersion)
    raise(Errc::bad_version, "model file: unknown format version " + std::to_string(version));
  const uint8_t precision_tag = r.u8();
  if (precision_tag > 2) raise(Errc::bad_payload, "model file: bad precision tag");
  const Precision precision = Precision(precision_tag);
  const uint16_t layer_count = r.u16();
  if (layer_count == 0) raise(Errc::bad_payload, "model file: no layers");

  NetworkTopology net;
  net.precision = precision;
  for (uint16_t k = 0; k < layer_count; ++k) {
    LayerSpec l;
    const uint8_t kind = r.u8();
    if (kind > uint8_t(LayerKind::OutputDense)) raise(Errc::bad_payload, "model file: bad layer kind");
    l.kind = LayerKind(kind);
    l.in_shape = read_shape(r);
    l.out_shape = read_shape(r);
    const uint32_t channels = r.u32();
    const uint32_t per = r.u32();
    if (channels > 0) {
      if (per != 1 && per != 3) raise(Errc::bad_payload, "model file: bad thresholds-per-channel");
      IntTensor thr(per == 1 ? Shape{channels} : Shape{channels, per});
      for (size_t i = 0; i < thr.elements(); ++i) thr[i] = r.i32();
      l.thresholds = std::move(thr);
      l.signs.resize(channels);
      for (uint32_t i = 0; i < channels; ++i) l.signs[i] = int8_t(r.u8());
    }
    const uint64_t word_count = r.u64();
    if (word_count > 0) {
      if (l.kind == LayerKind::MaxPool2x2) raise(Errc::bad_payload, "model file: pool with payload");
      Shape wshape = l.is_conv() ? Shape{l.out_shape.dims[0], l.in_shape.dims[0], 3, 3}
                                 : Shape{uint32_t(l.fan_out()), uint32_t(l.fan_in())};
      PackedWeights weights = NetworkTopology::weights_are_q2(precision)
                                  ? PackedWeights(Q2Tensor(std::move(wshape)))
                                  : PackedWeights(BitTensor(std::move(wshape)));
      auto words = std::visit([](auto& t) { return t.words(); }, weights);
      if (words.size() != word_count)
        raise(Errc::bad_payload, "model file: payload word count does not match shape arithmetic");
      for (uint64_t& w : words) w = r.u64();
      l.weights = std::move(weights);
    }
    net.layers.push_back(std::move(l));
  }
  if (r.remaining() != 0) raise(Errc::bad_payload, "model file: trailing bytes after last layer");
  net.num_classes = int(net.layers.back().out_shape.elements());
  net.name = std::string(net.layers.front().is_conv() ? "cnv" : "lfc") + to_string(net.precision);
  net.initialized = true;
  net.validate();
  return net;
}

void save_model_file(const NetworkTopology& net, const std::string& path) {
  const std::vector<uint8_t> bytes = save_model(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_failure, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) raise(Errc::io_failure, "error writing '" + path + "'");
}

NetworkTopology load_model_file(const std::string& path) { return load_model(read_file(path)); }

}  // namespace bnnfi
