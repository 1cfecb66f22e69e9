#include "dna/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "dna/error.hpp"
#include "dna/io_util.hpp"

namespace dna {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'A', 'D'};

class ByteWriter {
 public:
  explicit ByteWriter(std::size_t reserve) { out_.reserve(reserve); }

  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    out_.insert(out_.end(), p, p + n);
  }

  void u32(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
      v = byteswap32(v);
    }
    raw(&v, sizeof v);
  }

  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      raw(values.data(), values.size_bytes());
    } else {
      for (float f : values) {
        u32(std::bit_cast<std::uint32_t>(f));
      }
    }
  }

  std::vector<std::byte> take() { return std::move(out_); }

  static std::uint32_t byteswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  }

 private:
  std::vector<std::byte> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  bool has(std::size_t n) const { return remaining() >= n; }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    if constexpr (std::endian::native == std::endian::big) {
      v = ByteWriter::byteswap32(v);
    }
    return v;
  }

  void copy(void* dst, std::size_t n) {
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  void floats(std::span<float> dst) {
    copy(dst.data(), dst.size_bytes());
    if constexpr (std::endian::native == std::endian::big) {
      for (float& f : dst) {
        f = std::bit_cast<float>(ByteWriter::byteswap32(std::bit_cast<std::uint32_t>(f)));
      }
    }
  }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

void check_finite(const FeatureMatrix& m, const char* what, std::size_t layer, bool nonnegative) {
  for (float v : m.values()) {
    if (!std::isfinite(v)) {
      throw FormatError(FormatError::Kind::non_finite,
                        std::string(what) + " of layer " + std::to_string(layer) + " contain a non-finite value");
    }
    if (nonnegative && v < 0.0f) {
      throw FormatError(FormatError::Kind::invalid_shape,
                        std::string(what) + " of layer " + std::to_string(layer) + " contain a negative value");
    }
  }
}

void check_labels(std::span<const Label> labels) {
  bool has_real = false;
  bool has_fake = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) {
      throw FormatError(FormatError::Kind::invalid_labels,
                        "label " + std::to_string(i) + " is " + std::to_string(labels[i]) + ", expected 0 or 1");
    }
    has_real |= labels[i] == 0;
    has_fake |= labels[i] == 1;
  }
  if (!has_real || !has_fake) {
    throw FormatError(FormatError::Kind::invalid_labels, "labels must contain both classes");
  }
}

std::string layer_name(std::size_t zero_based) { return "layer " + std::to_string(zero_based + 1); }

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw InputError("FeatureMatrix: " + std::to_string(values_.size()) + " values for a " +
                     std::to_string(rows_) + "x" + std::to_string(cols_) + " matrix");
  }
}

FeatureMatrix FeatureMatrix::take_rows(std::span<const std::size_t> indices) const {
  FeatureMatrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) {
      throw InputError("row index " + std::to_string(indices[i]) + " out of range");
    }
    std::ranges::copy(row(indices[i]), out.row(i).begin());
  }
  return out;
}

const FeatureMatrix& ActivationDump::layer_features(LayerIndex layer) const {
  if (layer < 1 || layer > n_layers()) {
    throw InputError("layer " + std::to_string(layer) + " out of range 1.." + std::to_string(n_layers()));
  }
  return features[layer - 1];
}

const FeatureMatrix& ActivationDump::layer_attention(LayerIndex layer) const {
  if (!has_attention()) {
    throw InputError("dump carries no attention");
  }
  if (layer < 1 || layer > attention.size()) {
    throw InputError("layer " + std::to_string(layer) + " out of range 1.." + std::to_string(attention.size()));
  }
  return attention[layer - 1];
}

void validate_dump(const ActivationDump& dump) {
  using Kind = FormatError::Kind;
  if (dump.n_layers() < 1) {
    throw FormatError(Kind::invalid_shape, "dump needs at least one layer");
  }
  if (dump.n_samples() < 2) {
    throw FormatError(Kind::invalid_shape, "dump needs at least two samples");
  }
  check_labels(dump.labels);
  const std::size_t n = dump.n_samples();
  const std::size_t d = dump.feat_dim();
  if (d < 1) {
    throw FormatError(Kind::invalid_shape, "feat_dim must be positive");
  }
  for (std::size_t i = 0; i < dump.n_layers(); ++i) {
    const auto& f = dump.features[i];
    if (f.rows() != n || f.cols() != d) {
      throw FormatError(Kind::invalid_shape, "features of " + layer_name(i) + " are " + std::to_string(f.rows()) +
                                                 "x" + std::to_string(f.cols()) + ", expected " +
                                                 std::to_string(n) + "x" + std::to_string(d));
    }
    check_finite(f, "features", i + 1, false);
  }
  if (dump.has_attention()) {
    if (dump.attention.size() != dump.n_layers()) {
      throw FormatError(Kind::invalid_shape, "attention present for " + std::to_string(dump.attention.size()) +
                                                 " of " + std::to_string(dump.n_layers()) + " layers");
    }
    const std::size_t p = dump.attn_len();
    if (p < 1) {
      throw FormatError(Kind::invalid_shape, "attention present with zero length");
    }
    for (std::size_t i = 0; i < dump.n_layers(); ++i) {
      const auto& a = dump.attention[i];
      if (a.rows() != n || a.cols() != p) {
        throw FormatError(Kind::invalid_shape, "attention of " + layer_name(i) + " has inconsistent shape");
      }
      check_finite(a, "attention", i + 1, true);
    }
  }
}

std::size_t dump_byte_size(const ActivationDump& dump) {
  const std::size_t per_layer = dump.n_samples() * (dump.feat_dim() + dump.attn_len()) * sizeof(float);
  return kDumpHeaderBytes + dump.n_samples() + dump.n_layers() * per_layer;
}

std::vector<std::byte> encode_dump(const ActivationDump& dump) {
  validate_dump(dump);
  ByteWriter w(dump_byte_size(dump));
  w.raw(kMagic, sizeof kMagic);
  w.u32(kDumpVersion);
  w.u32(static_cast<std::uint32_t>(dump.n_layers()));
  w.u32(static_cast<std::uint32_t>(dump.n_samples()));
  w.u32(static_cast<std::uint32_t>(dump.feat_dim()));
  w.u32(static_cast<std::uint32_t>(dump.attn_len()));
  w.u32(dump.has_attention() ? kFlagAttention : 0u);
  w.raw(dump.labels.data(), dump.labels.size());
  for (std::size_t i = 0; i < dump.n_layers(); ++i) {
    w.floats(dump.features[i].values());
    if (dump.has_attention()) {
      w.floats(dump.attention[i].values());
    }
  }
  return w.take();
}

ActivationDump decode_dump(std::span<const std::byte> bytes) {
  using Kind = FormatError::Kind;
  ByteReader r(bytes);
  if (!r.has(kDumpHeaderBytes)) {
    throw FormatError(Kind::truncated, "file shorter than the " + std::to_string(kDumpHeaderBytes) + "-byte header");
  }
  char magic[4];
  r.copy(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError(Kind::bad_magic, "bad magic '" + std::string(magic, 4) + "', expected 'DNAD'");
  }
  const std::uint32_t version = r.u32();
  if (version != kDumpVersion) {
    throw FormatError(Kind::unsupported_version, "unsupported dump version " + std::to_string(version));
  }
  const std::uint64_t n_layers = r.u32();
  const std::uint64_t n_samples = r.u32();
  const std::uint64_t feat_dim = r.u32();
  const std::uint64_t attn_len = r.u32();
  const std::uint32_t flags = r.u32();
  if ((flags & ~kFlagAttention) != 0) {
    throw FormatError(Kind::invalid_shape, "unknown flag bits set: " + std::to_string(flags));
  }
  const bool with_attention = (flags & kFlagAttention) != 0;
  if (with_attention != (attn_len > 0)) {
    throw FormatError(Kind::invalid_shape, "attention flag disagrees with attn_len " + std::to_string(attn_len));
  }
  if (n_layers < 1 || n_samples < 2 || feat_dim < 1) {
    throw FormatError(Kind::invalid_shape, "header declares an empty dump");
  }

  std::uint64_t feature_bytes = 0;
  std::uint64_t attention_bytes = 0;
  std::uint64_t layer_bytes = 0;
  std::uint64_t expected = 0;
  if (__builtin_mul_overflow(n_samples, feat_dim * sizeof(float), &feature_bytes) ||
      __builtin_mul_overflow(n_samples, attn_len * sizeof(float), &attention_bytes) ||
      __builtin_add_overflow(feature_bytes, attention_bytes, &layer_bytes) ||
      __builtin_mul_overflow(n_layers, layer_bytes, &expected) ||
      __builtin_add_overflow(expected, kDumpHeaderBytes + n_samples, &expected)) {
    throw FormatError(Kind::size_mismatch, "header declares a dump too large to address");
  }
  if (!r.has(n_samples)) {
    throw FormatError(Kind::truncated, "file truncated in the label block");
  }

  ActivationDump dump;
  dump.labels.resize(n_samples);
  r.copy(dump.labels.data(), n_samples);
  dump.features.reserve(n_layers);
  if (with_attention) {
    dump.attention.reserve(n_layers);
  }
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    if (!r.has(feature_bytes)) {
      throw FormatError(Kind::truncated, "file truncated in the features of " + layer_name(i));
    }
    FeatureMatrix f(n_samples, feat_dim);
    r.floats(f.values());
    dump.features.push_back(std::move(f));
    if (with_attention) {
      if (!r.has(attention_bytes)) {
        throw FormatError(Kind::truncated, "file truncated in the attention of " + layer_name(i));
      }
      FeatureMatrix a(n_samples, attn_len);
      r.floats(a.values());
      dump.attention.push_back(std::move(a));
    }
  }
  if (r.remaining() != 0 || bytes.size() != expected) {
    throw FormatError(Kind::size_mismatch, "file has " + std::to_string(r.remaining()) +
                                               " trailing bytes beyond the declared " + std::to_string(expected));
  }
  validate_dump(dump);
  return dump;
}

void write_dump(const ActivationDump& dump, const std::filesystem::path& path) {
  auto bytes = encode_dump(dump);
  write_file_atomic(path, bytes);
}

ActivationDump read_dump(const std::filesystem::path& path) {
  return decode_dump(read_file_bytes(path));
}

ActivationDump slice_layers(const ActivationDump& dump, std::span<const LayerIndex> layers) {
  ActivationDump out;
  out.labels = dump.labels;
  for (LayerIndex layer : layers) {
    out.features.push_back(dump.layer_features(layer));
    if (dump.has_attention()) {
      out.attention.push_back(dump.layer_attention(layer));
    }
  }
  return out;
}

ActivationDump subset_samples(const ActivationDump& dump, std::span<const std::size_t> samples) {
  ActivationDump out;
  out.labels.reserve(samples.size());
  for (std::size_t s : samples) {
    if (s >= dump.n_samples()) {
      throw InputError("sample index " + std::to_string(s) + " out of range");
    }
    out.labels.push_back(dump.labels[s]);
  }
  for (const auto& f : dump.features) {
    out.features.push_back(f.take_rows(samples));
  }
  for (const auto& a : dump.attention) {
    out.attention.push_back(a.take_rows(samples));
  }
  return out;
}

}  // namespace dna
