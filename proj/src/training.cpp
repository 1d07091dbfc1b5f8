#include "woodid/training.hpp"

#include <cmath>
#include <numeric>

#include "woodid/nn/adam.hpp"

namespace woodid {

namespace {

int argmax_lowest(const Eigen::VectorXf& p) {
  int best = 0;
  for (int i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

double image_loss(const Eigen::VectorXf& p, int label) {
  return -std::log(std::max(static_cast<double>(p[label]), 1e-12));
}

std::string checkpoint_name(const EpochRecord& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-epoch%02d.ckpt", r.stage.c_str(), r.epoch);
  return buf;
}

}  // namespace

ImageLoader file_loader() {
  return [](const LabeledImage& img) { return read_image(img.file); };
}

std::vector<LabeledImage> split_images(const Registry& registry, const SplitManifest& manifest,
                                       Split split, const std::filesystem::path& image_root) {
  const ValidationReport report = validate_manifest(manifest, registry);
  if (!report.valid())
    throw Error(ErrorKind::InvalidRecord, "manifest does not validate: " + report.to_json().dump());
  std::vector<LabeledImage> out;
  for (const auto& specimen_id : manifest.members[static_cast<int>(split)]) {
    const Specimen& s = registry.specimen(specimen_id);
    const int label = static_cast<int>(*registry.catalog().index_of(s.class_label));
    for (const auto& image_id : s.images) {
      const ImageRecord& rec = registry.image(image_id);
      std::filesystem::path file = rec.file_ref;
      if (file.is_relative() && !image_root.empty()) file = image_root / file;
      out.push_back({rec.image_id, file, label});
    }
  }
  return out;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"stage", stage},           {"stage_index", stage_index}, {"epoch", epoch},
          {"train_loss", train_loss}, {"valid_loss", valid_loss},   {"valid_top1", valid_top1},
          {"final_lr", final_lr},     {"final_momentum", final_momentum}};
}

EpochRecord EpochRecord::from_json(const nlohmann::json& doc) {
  EpochRecord r;
  r.stage = doc.at("stage").get<std::string>();
  r.stage_index = doc.at("stage_index").get<int>();
  r.epoch = doc.at("epoch").get<int>();
  r.train_loss = doc.at("train_loss").get<double>();
  r.valid_loss = doc.at("valid_loss").get<double>();
  r.valid_top1 = doc.at("valid_top1").get<double>();
  r.final_lr = doc.value("final_lr", 0.0);
  r.final_momentum = doc.value("final_momentum", 0.0);
  return r;
}

long steps_per_epoch(std::size_t n_train, int batch_size) {
  if (batch_size < 1) throw Error(ErrorKind::BadConfig, "batch_size must be positive");
  const auto bs = static_cast<std::size_t>(batch_size);
  return static_cast<long>(n_train / bs + (n_train % bs >= 2 ? 1 : 0));
}

EvalSummary evaluate_images(const Model& model, std::span<const LabeledImage> images,
                            const ImageLoader& loader, const PatchSpec& spec, SamplingMode mode) {
  if (images.empty()) throw Error(ErrorKind::EmptyInput, "no images to evaluate");
  EvalSummary out;
  int correct = 0;
  for (const auto& img : images) {
    Eigen::VectorXf p = predict(model, loader(img), spec, mode);
    out.loss += image_loss(p, img.label);
    correct += argmax_lowest(p) == img.label;
    out.probabilities.push_back(std::move(p));
  }
  out.loss /= static_cast<double>(images.size());
  out.top1 = static_cast<double>(correct) / static_cast<double>(images.size());
  return out;
}

StageResult train_stage(Model& model, const TrainingData& data, const StageConfig& stage,
                        int stage_index, const TrainingSchedule& schedule,
                        const TrainOptions& options) {
  schedule.validate();
  data.patch_spec.validate();
  if (stage.epochs < 1) throw Error(ErrorKind::BadConfig, stage.name + ": epochs must be positive");
  if (data.valid.empty()) throw Error(ErrorKind::EmptyInput, "validation split is empty");
  const long spe = steps_per_epoch(data.train.size(), schedule.batch_size);
  if (spe < 1) throw Error(ErrorKind::BadConfig, "need at least two training images");
  const long total = spe * stage.epochs;
  const CycleParams cycle = CycleParams::for_stage(schedule, stage);
  const bool frozen = stage.frozen_backbone;

  std::vector<nn::Parameter<float>*> params = model.head_parameters();
  if (!frozen) {
    auto bb = model.backbone_parameters();
    params.insert(params.end(), bb.begin(), bb.end());
  }
  nn::Adam<float> adam(params, schedule.beta2, schedule.adam_eps);

  const ModelWeights<float> initial = model.capture();
  Checkpoint last_good{EpochRecord{stage.name, stage_index}, initial, {}};
  Rng dropout_rng(derive_seed(data.seed, "dropout/" + stage.name));

  // The backbone does not move in a frozen stage, so validation features
  // are computed once.
  std::vector<nn::Tensor<float>> valid_features;
  if (frozen) {
    for (const auto& img : data.valid)
      valid_features.push_back(model.infer_features(
          model.to_input(evaluation_patches(data.loader(img), data.patch_spec, data.eval_mode))));
  }

  StageResult result;
  const std::size_t n = data.train.size();
  const auto bs = static_cast<std::size_t>(schedule.batch_size);
  long step = 0;
  CycleValues last_cv{};
  for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(data.seed, "order/" + stage.name, static_cast<std::uint64_t>(epoch)));
    order_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (long s = 0; s < spe; ++s) {
      const std::size_t begin = static_cast<std::size_t>(s) * bs;
      const std::size_t end = std::min(n, begin + bs);
      std::vector<Image> patches;
      std::vector<int> labels;
      for (std::size_t k = begin; k < end; ++k) {
        const LabeledImage& img = data.train[order[k]];
        Rng patch_rng(derive_seed(data.augmentation.seed, img.image_id,
                                  static_cast<std::uint64_t>(stage_index) * 100003u + epoch));
        patches.push_back(training_patch(data.loader(img), data.patch_spec, data.augmentation, patch_rng));
        labels.push_back(img.label);
      }
      const nn::Tensor<float> x = model.to_input(patches);
      patches.clear();

      last_cv = one_cycle(step, total, cycle);
      nn::Tensor<float> features = frozen ? model.infer_features(x) : model.backbone().forward(x, true);
      const nn::Mat<float> logits = model.head().forward(features, dropout_rng);
      nn::Mat<float> dlogits;
      const double loss = nn::cross_entropy<float>(logits, labels, &dlogits);
      if (!std::isfinite(loss)) {
        throw DivergedLossError(stage.name + " epoch " + std::to_string(epoch) + " step " +
                                    std::to_string(step) + ": non-finite loss",
                                last_good);
      }
      adam.zero_grad();
      nn::Tensor<float> dfeatures = model.head().backward(dlogits);
      if (!frozen) model.backbone().backward(dfeatures);
      adam.step(last_cv.learning_rate, last_cv.momentum);

      loss_sum += loss * static_cast<double>(labels.size());
      seen += labels.size();
      ++step;
      if (options.on_step) options.on_step(step, total, loss);
    }

    EpochRecord rec{stage.name, stage_index, epoch};
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.final_lr = last_cv.learning_rate;
    rec.final_momentum = last_cv.momentum;
    if (frozen) {
      int correct = 0;
      for (std::size_t i = 0; i < data.valid.size(); ++i) {
        const nn::Mat<float> proba = nn::softmax<float>(model.head().infer(valid_features[i]));
        Eigen::VectorXf p = proba.colwise().mean().transpose();
        p /= p.sum();
        rec.valid_loss += image_loss(p, data.valid[i].label);
        correct += argmax_lowest(p) == data.valid[i].label;
      }
      rec.valid_loss /= static_cast<double>(data.valid.size());
      rec.valid_top1 = static_cast<double>(correct) / static_cast<double>(data.valid.size());
    } else {
      const EvalSummary ev = evaluate_images(model, data.valid, data.loader, data.patch_spec, data.eval_mode);
      rec.valid_loss = ev.loss;
      rec.valid_top1 = ev.top1;
    }

    Checkpoint ckpt{rec, model.capture(frozen ? &initial : nullptr), {}};
    if (!options.checkpoint_dir.empty()) {
      std::filesystem::create_directories(options.checkpoint_dir);
      ckpt.file = options.checkpoint_dir / checkpoint_name(rec);
      save_checkpoint(ckpt.file, model.config(), ckpt.weights, rec, options.manifest_digest,
                      data.patch_spec, data.eval_mode);
      if (!frozen && !options.keep_unfrozen_in_memory) ckpt.weights = {};
    }
    result.history.push_back(rec);
    result.checkpoints.push_back(ckpt);
    last_good = std::move(ckpt);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

Checkpoint select_checkpoint(std::span<const StageResult> stages) {
  const Checkpoint* best = nullptr;
  for (const auto& stage : stages) {
    for (const auto& c : stage.checkpoints) {
      if (!best || c.record.valid_top1 > best->record.valid_top1 ||
          (c.record.valid_top1 == best->record.valid_top1 &&
           c.record.valid_loss < best->record.valid_loss))
        best = &c;
    }
  }
  if (!best) throw Error(ErrorKind::NoCheckpoints, "no checkpoints to select from");
  return *best;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelWeights<float>& weights, const EpochRecord& record,
                     const std::string& manifest_digest, const PatchSpec& spec, SamplingMode eval_mode) {
  TensorArchive ar;
  ar.meta = {{"kind", "checkpoint"},
             {"format_version", kCheckpointFormatVersion},
             {"model_config", config.to_json()},
             {"record", record.to_json()},
             {"manifest_digest", manifest_digest},
             {"patch_spec", spec.to_json()},
             {"eval_mode", to_string(eval_mode)}};
  for (const auto& [name, t] : *weights.backbone) ar.put("backbone." + name, t);
  for (const auto& [name, t] : *weights.head) ar.put("head." + name, t);
  ar.save(path);
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  CheckpointFile out;
  out.state = TensorArchive::load(path);
  const auto& meta = out.state.meta;
  if (meta.value("kind", "") != "checkpoint")
    throw Error(ErrorKind::CorruptBundle, path.string() + " is not a checkpoint");
  const int version = meta.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw Error(ErrorKind::VersionMismatch, "checkpoint format version " + std::to_string(version));
  try {
    out.config = ModelConfig::from_json(meta.at("model_config"));
    out.record = EpochRecord::from_json(meta.at("record"));
    out.manifest_digest = meta.at("manifest_digest").get<std::string>();
    out.patch_spec = PatchSpec::from_json(meta.at("patch_spec"));
    out.eval_mode = parse_sampling_mode(meta.at("eval_mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptBundle, std::string("checkpoint metadata: ") + e.what());
  }
  return out;
}

std::unique_ptr<Model> model_from_checkpoint(const CheckpointFile& checkpoint) {
  auto model = std::make_unique<Model>(checkpoint.config);
  model->load_state(checkpoint.state);
  return model;
}

std::unique_ptr<Model> model_from_checkpoint(const ModelConfig& config, const Checkpoint& checkpoint) {
  if (!checkpoint.weights.head) {
    if (checkpoint.file.empty())
      throw Error(ErrorKind::NoCheckpoints, "checkpoint has neither weights nor a file");
    return model_from_checkpoint(load_checkpoint(checkpoint.file));
  }
  auto model = std::make_unique<Model>(config);
  model->restore(checkpoint.weights);
  return model;
}

}  // namespace woodid
