#include "woodid/bundle.hpp"

#include <cmath>

#include "woodid/digest.hpp"

namespace woodid {

namespace {

std::string media_type_of(const std::vector<std::uint8_t>& b) {
  if (b.size() >= 8 && b[0] == 0x89 && b[1] == 'P' && b[2] == 'N' && b[3] == 'G') return "image/png";
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return "image/jpeg";
  if (b.size() >= 2 && b[0] == 'P' && (b[1] == '5' || b[1] == '6')) return "image/x-portable-anymap";
  return "application/octet-stream";
}

}  // namespace

std::string DeploymentBundle::version() const {
  return std::to_string(format_version) + "-" + digest.substr(0, 12);
}

nn::Vec<float> DeploymentBundle::predict(const Image& image) const {
  return woodid::predict(*model, image, patch_spec, eval_mode);
}

void save_bundle(Classifier<float>& model, const ClassCatalog& catalog, const std::string& manifest_digest,
                 const std::filesystem::path& path, const BundleOptions& options) {
  if (static_cast<int>(catalog.size()) != model.n_classes())
    throw Error(ErrorKind::ClassListMismatch, "catalog has " + std::to_string(catalog.size()) +
                                                  " classes, head has " + std::to_string(model.n_classes()));
  options.patch_spec.validate();
  TensorArchive ar;
  nlohmann::json archetypes = nlohmann::json::object();
  if (!options.archetype_root.empty()) {
    for (const auto& cls : catalog.classes()) {
      if (cls.archetype_image.empty()) continue;
      std::filesystem::path file = cls.archetype_image;
      if (file.is_relative()) file = options.archetype_root / file;
      if (!std::filesystem::is_regular_file(file)) continue;
      auto bytes = read_file_bytes(file);
      archetypes[cls.class_label] = {{"media_type", media_type_of(bytes)}, {"sha256", sha256_hex(bytes)}};
      ar.put_blob("archetype/" + cls.class_label, std::move(bytes));
    }
  }
  ModelConfig config = model.config();
  config.backbone_weights.clear();  // the bundle carries the weights itself
  ar.meta = {{"kind", "bundle"},
             {"format_version", kBundleFormatVersion},
             {"model_config", config.to_json()},
             {"catalog", catalog.to_json()},
             {"manifest_digest", manifest_digest},
             {"patch_spec", options.patch_spec.to_json()},
             {"eval_mode", to_string(options.eval_mode)},
             {"archetypes", archetypes}};
  model.store_state(ar);
  ar.save(path);
}

DeploymentBundle parse_bundle(std::span<const std::uint8_t> bytes) {
  const TensorArchive ar = TensorArchive::parse(bytes);
  const auto& meta = ar.meta;
  if (meta.value("kind", "") != "bundle") throw Error(ErrorKind::CorruptBundle, "not a deployment bundle");
  DeploymentBundle b;
  b.format_version = meta.value("format_version", -1);
  if (b.format_version != kBundleFormatVersion)
    throw Error(ErrorKind::VersionMismatch, "bundle format version " + std::to_string(b.format_version));
  try {
    b.config = ModelConfig::from_json(meta.at("model_config"));
    b.catalog = ClassCatalog::from_json(meta.at("catalog"));
    b.manifest_digest = meta.at("manifest_digest").get<std::string>();
    b.patch_spec = PatchSpec::from_json(meta.at("patch_spec"));
    b.eval_mode = parse_sampling_mode(meta.at("eval_mode").get<std::string>());
    for (const auto& [label, info] : meta.at("archetypes").items())
      b.archetypes[label] = {info.at("media_type").get<std::string>(), ar.blob("archetype/" + label)};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptBundle, std::string("bundle metadata: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptBundle) throw;
    throw Error(ErrorKind::CorruptBundle, std::string("bundle metadata: ") + e.what());
  }
  if (static_cast<int>(b.catalog.size()) != b.config.n_classes)
    throw Error(ErrorKind::VersionMismatch, "catalog has " + std::to_string(b.catalog.size()) +
                                                " classes, head has " + std::to_string(b.config.n_classes));
  b.model = std::make_unique<Classifier<float>>(b.config);
  try {
    b.model->load_state(ar);
  } catch (const Error& e) {
    throw Error(ErrorKind::VersionMismatch, std::string("bundle weights do not fit the model: ") + e.what());
  }
  b.digest = sha256_hex(bytes);
  return b;
}

DeploymentBundle load_bundle(const std::filesystem::path& path) {
  return parse_bundle(read_file_bytes(path));
}

void self_check(const DeploymentBundle& bundle) {
  Image grey(bundle.patch_spec.source_width, bundle.patch_spec.source_height);
  for (auto& c : grey.channels) c.setConstant(128.0f);
  const nn::Vec<float> p = bundle.predict(grey);
  const bool ok = p.size() == static_cast<Eigen::Index>(bundle.catalog.size()) && p.allFinite() &&
                  (p.array() >= 0).all() && std::abs(p.sum() - 1.0f) < 1e-4f;
  if (!ok) throw Error(ErrorKind::CorruptBundle, "bundle self-check produced an invalid probability vector");
}

}  // namespace woodid
