#pragma once

// Activation dumps: per-layer class-token features and attention vectors for a
// labeled sample set, plus the binary file format that carries them.
//
// File layout (little-endian throughout):
//
//   magic "DNAD" | version u32 = 1 | n_layers u32 | n_samples u32
//   | feat_dim u32 | attn_len u32 | flags u32 (bit0 = attention present)
//   | labels: n_samples bytes, each 0 or 1
//   | per layer: features float32[n_samples x feat_dim] row-major,
//                then (if bit0) attention float32[n_samples x attn_len]

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dna {

using Label = std::uint8_t;  // 0 = real, 1 = fake

/// 1-based layer index, as used in every file and report.
using LayerIndex = std::uint32_t;

inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::size_t kDumpHeaderBytes = 4 + 6 * 4;
inline constexpr std::uint32_t kFlagAttention = 1u;

/// Dense row-major float32 matrix (rows = samples).
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<float> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  float operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }

  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values_).subspan(r * cols_, cols_);
  }
  std::span<float> row(std::size_t r) { return std::span<float>(values_).subspan(r * cols_, cols_); }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  /// Copy of the given rows, in the given order.
  FeatureMatrix take_rows(std::span<const std::size_t> indices) const;

  bool operator==(const FeatureMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> values_;
};

struct ActivationDump {
  std::vector<Label> labels;
  std::vector<FeatureMatrix> features;   // one N x D matrix per layer
  std::vector<FeatureMatrix> attention;  // one N x P matrix per layer, or empty

  std::size_t n_layers() const noexcept { return features.size(); }
  std::size_t n_samples() const noexcept { return labels.size(); }
  std::size_t feat_dim() const noexcept { return features.empty() ? 0 : features.front().cols(); }
  std::size_t attn_len() const noexcept { return attention.empty() ? 0 : attention.front().cols(); }
  bool has_attention() const noexcept { return !attention.empty(); }

  /// Features of a 1-based layer. Throws InputError when out of range.
  const FeatureMatrix& layer_features(LayerIndex layer) const;
  const FeatureMatrix& layer_attention(LayerIndex layer) const;

  bool operator==(const ActivationDump&) const = default;
};

/// Throws FormatError describing the first violated invariant.
void validate_dump(const ActivationDump& dump);

/// Exact number of bytes write_dump produces for this dump.
std::size_t dump_byte_size(const ActivationDump& dump);

std::vector<std::byte> encode_dump(const ActivationDump& dump);
ActivationDump decode_dump(std::span<const std::byte> bytes);

/// Validates, then writes through a temporary file and rename.
void write_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump read_dump(const std::filesystem::path& path);

/// New dump holding the given 1-based layers in the given order.
ActivationDump slice_layers(const ActivationDump& dump, std::span<const LayerIndex> layers);

/// New dump holding the given samples (0-based) in the given order.
ActivationDump subset_samples(const ActivationDump& dump, std::span<const std::size_t> samples);

}  // namespace dna
