#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "woodid/error.hpp"
#include "woodid/nn/tensor.hpp"

namespace woodid {

static_assert(std::endian::native == std::endian::little,
              "archive payloads are little-endian raw buffers");

/// Single-file container for named tensors, opaque blobs and a JSON
/// metadata document. Layout:
///
///   "WOODARC\0" | u32 container version | u64 header length | header JSON
///   | payload bytes | u32 CRC-32 of everything before it
///
/// The header lists every tensor (dtype, shape, offset, size) and blob.
class TensorArchive {
 public:
  static constexpr std::uint32_t kContainerVersion = 1;

  struct TensorEntry {
    std::string dtype;  // "f32" or "f64"
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;

    std::int64_t element_count() const {
      std::int64_t n = 1;
      for (auto d : shape) n *= d;
      return n;
    }
  };

  nlohmann::json meta = nlohmann::json::object();

  bool has_tensor(const std::string& name) const { return tensors_.contains(name); }
  bool has_blob(const std::string& name) const { return blobs_.contains(name); }
  const std::map<std::string, TensorEntry>& tensors() const { return tensors_; }
  const std::map<std::string, std::vector<std::uint8_t>>& blobs() const { return blobs_; }

  template <typename Scalar>
  void put(const std::string& name, const nn::Mat<Scalar>& m) {
    static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
    TensorEntry e;
    e.dtype = std::is_same_v<Scalar, float> ? "f32" : "f64";
    e.shape = {m.rows(), m.cols()};
    e.bytes.resize(static_cast<std::size_t>(m.size()) * sizeof(Scalar));
    std::memcpy(e.bytes.data(), m.data(), e.bytes.size());
    tensors_[name] = std::move(e);
  }

  /// Reads tensor `name` into a (rows, cols) matrix, converting dtype when
  /// needed. Any stored shape with the same leading dimension and element
  /// count is accepted, so framework layouts such as OIHW load directly.
  /// Throws ShapeMismatch.
  template <typename Scalar>
  nn::Mat<Scalar> get(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(ErrorKind::ShapeMismatch, "missing tensor " + name);
    const TensorEntry& e = it->second;
    const bool leading_ok = e.shape.empty() ? rows == 1 : (e.shape[0] == rows || rows == 1);
    if (e.element_count() != rows * cols || !leading_ok)
      throw Error(ErrorKind::ShapeMismatch, name + " has incompatible shape");
    nn::Mat<Scalar> m(rows, cols);
    if (e.dtype == "f32") {
      copy_convert<float>(e, m);
    } else if (e.dtype == "f64") {
      copy_convert<double>(e, m);
    } else {
      throw Error(ErrorKind::ShapeMismatch, name + " has unsupported dtype " + e.dtype);
    }
    return m;
  }

  void put_blob(const std::string& name, std::vector<std::uint8_t> bytes) {
    blobs_[name] = std::move(bytes);
  }
  const std::vector<std::uint8_t>& blob(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  /// Throws CorruptBundle on bad magic, truncation, or checksum mismatch.
  static TensorArchive parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  /// Throws IoError when the file cannot be read, CorruptBundle otherwise.
  static TensorArchive load(const std::filesystem::path& path);

 private:
  template <typename Stored, typename Scalar>
  static void copy_convert(const TensorEntry& e, nn::Mat<Scalar>& m) {
    if (e.bytes.size() != static_cast<std::size_t>(m.size()) * sizeof(Stored))
      throw Error(ErrorKind::CorruptBundle, "tensor byte length mismatch");
    std::vector<Stored> tmp(static_cast<std::size_t>(m.size()));
    std::memcpy(tmp.data(), e.bytes.data(), e.bytes.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(tmp[static_cast<std::size_t>(i)]);
  }

  std::map<std::string, TensorEntry> tensors_;
  std::map<std::string, std::vector<std::uint8_t>> blobs_;
};

}  // namespace woodid
