#include "woodid/archive.hpp"

#include "woodid/digest.hpp"

namespace woodid {

namespace {

constexpr char kMagic[8] = {'W', 'O', 'O', 'D', 'A', 'R', 'C', '\0'};

template <typename T>
void append_pod(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

const std::vector<std::uint8_t>& TensorArchive::blob(const std::string& name) const {
  auto it = blobs_.find(name);
  if (it == blobs_.end()) throw Error(ErrorKind::CorruptBundle, "missing blob " + name);
  return it->second;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  nlohmann::json header;
  header["meta"] = meta;
  nlohmann::json tensor_index = nlohmann::json::array();
  nlohmann::json blob_index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : tensors_) {
    tensor_index.push_back({{"name", name}, {"dtype", e.dtype}, {"shape", e.shape},
                            {"offset", offset}, {"size", e.bytes.size()}});
    offset += e.bytes.size();
  }
  for (const auto& [name, b] : blobs_) {
    blob_index.push_back({{"name", name}, {"offset", offset}, {"size", b.size()}});
    offset += b.size();
  }
  header["tensors"] = tensor_index;
  header["blobs"] = blob_index;
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 + 8 + header_text.size() + offset + 4);
  out.insert(out.end(), kMagic, kMagic + 8);
  append_pod<std::uint32_t>(out, kContainerVersion);
  append_pod<std::uint64_t>(out, header_text.size());
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (const auto& [name, e] : tensors_) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  for (const auto& [name, b] : blobs_) out.insert(out.end(), b.begin(), b.end());
  append_pod<std::uint32_t>(out, crc32(out));
  return out;
}

TensorArchive TensorArchive::parse(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kFixed = 8 + 4 + 8;
  if (bytes.size() < kFixed + 4 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw Error(ErrorKind::CorruptBundle, "not an archive (bad magic or truncated)");
  const auto body = bytes.first(bytes.size() - 4);
  if (crc32(body) != read_pod<std::uint32_t>(bytes, bytes.size() - 4))
    throw Error(ErrorKind::CorruptBundle, "checksum mismatch");
  const auto version = read_pod<std::uint32_t>(bytes, 8);
  if (version != kContainerVersion)
    throw Error(ErrorKind::VersionMismatch, "container version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(bytes, 12);
  if (header_len > body.size() - kFixed) throw Error(ErrorKind::CorruptBundle, "header overruns file");

  TensorArchive ar;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.begin() + kFixed, body.begin() + kFixed + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptBundle, std::string("header: ") + e.what());
  }
  const std::size_t payload = kFixed + header_len;
  auto slice = [&](std::uint64_t off, std::uint64_t size) {
    if (off + size > body.size() - payload) throw Error(ErrorKind::CorruptBundle, "entry overruns payload");
    const auto* begin = body.data() + payload + off;
    return std::vector<std::uint8_t>(begin, begin + size);
  };
  try {
    ar.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      TensorEntry e;
      e.dtype = t.at("dtype").get<std::string>();
      e.shape = t.at("shape").get<std::vector<std::int64_t>>();
      e.bytes = slice(t.at("offset").get<std::uint64_t>(), t.at("size").get<std::uint64_t>());
      ar.tensors_.emplace(t.at("name").get<std::string>(), std::move(e));
    }
    for (const auto& b : header.at("blobs"))
      ar.blobs_.emplace(b.at("name").get<std::string>(),
                        slice(b.at("offset").get<std::uint64_t>(), b.at("size").get<std::uint64_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptBundle, std::string("index: ") + e.what());
  }
  return ar;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  return parse(read_file_bytes(path));
}

}  // namespace woodid
