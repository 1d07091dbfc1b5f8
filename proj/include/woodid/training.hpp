#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "woodid/classifier.hpp"
#include "woodid/patches.hpp"
#include "woodid/registry.hpp"
#include "woodid/schedule.hpp"

namespace woodid {

using Model = Classifier<float>;

struct LabeledImage {
  std::string image_id;
  std::filesystem::path file;
  int label = 0;
};

using ImageLoader = std::function<Image(const LabeledImage&)>;
ImageLoader file_loader();

/// Split-aware patch stream: training images get random bands plus
/// augmentation, validation images deterministic evaluation bands only.
struct TrainingData {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> valid;
  ImageLoader loader = file_loader();
  PatchSpec patch_spec;
  AugmentationPolicy augmentation;
  SamplingMode eval_mode = SamplingMode::Center;
  /// Seeds data order and dropout masks.
  std::uint64_t seed = 0;
};

/// Images of the given split, labelled by catalog index. Throws
/// InvalidRecord when the manifest fails validation against the registry.
std::vector<LabeledImage> split_images(const Registry& registry, const SplitManifest& manifest,
                                       Split split, const std::filesystem::path& image_root = {});

struct EpochRecord {
  std::string stage;
  int stage_index = 0;
  int epoch = 0;  // 1-based; 0 marks the state before the stage's first step
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_top1 = 0.0;
  double final_lr = 0.0;
  double final_momentum = 0.0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& doc);
};

struct Checkpoint {
  EpochRecord record;
  /// Empty when only the on-disk copy was kept.
  ModelWeights<float> weights;
  std::filesystem::path file;
};

struct StageResult {
  std::vector<EpochRecord> history;
  std::vector<Checkpoint> checkpoints;
};

struct TrainOptions {
  /// When set, every epoch checkpoint is also written here.
  std::filesystem::path checkpoint_dir;
  /// Keep unfrozen-stage weights in memory even when written to disk.
  bool keep_unfrozen_in_memory = false;
  std::string manifest_digest;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(long step, long total, double loss)> on_step;
};

/// Optimizer steps per epoch: full batches plus a trailing partial batch
/// when it holds at least two images (BatchNorm needs a batch of two).
long steps_per_epoch(std::size_t n_train, int batch_size);

/// Non-finite training loss; carries the last good checkpoint.
class DivergedLossError : public Error {
 public:
  DivergedLossError(const std::string& detail, Checkpoint last_good)
      : Error(ErrorKind::DivergedLoss, detail), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// Runs stage.epochs x steps_per_epoch Adam steps with per-step one-cycle
/// lr and first-moment decay. A frozen stage updates head parameters only
/// and runs the backbone in inference mode, leaving it bitwise unchanged.
StageResult train_stage(Model& model, const TrainingData& data, const StageConfig& stage,
                        int stage_index, const TrainingSchedule& schedule,
                        const TrainOptions& options = {});

/// Highest validation top-1 across all stages; ties go to the lower
/// validation loss, then the earlier (stage, epoch). Throws NoCheckpoints.
Checkpoint select_checkpoint(std::span<const StageResult> stages);

/// Validation-style evaluation: mean cross-entropy of the per-image
/// probability vectors and top-1 accuracy.
struct EvalSummary {
  double loss = 0.0;
  double top1 = 0.0;
  std::vector<Eigen::VectorXf> probabilities;
};
EvalSummary evaluate_images(const Model& model, std::span<const LabeledImage> images,
                            const ImageLoader& loader, const PatchSpec& spec, SamplingMode mode);

// Checkpoint files ---------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointFile {
  ModelConfig config;
  EpochRecord record;
  std::string manifest_digest;
  PatchSpec patch_spec;
  SamplingMode eval_mode = SamplingMode::Center;
  TensorArchive state;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelWeights<float>& weights, const EpochRecord& record,
                     const std::string& manifest_digest, const PatchSpec& spec, SamplingMode eval_mode);
/// Throws CorruptBundle / VersionMismatch.
CheckpointFile load_checkpoint(const std::filesystem::path& path);
/// Materialises a classifier from a checkpoint's state.
std::unique_ptr<Model> model_from_checkpoint(const CheckpointFile& checkpoint);
/// Materialises a classifier from in-memory checkpoint weights, falling
/// back to the checkpoint file.
std::unique_ptr<Model> model_from_checkpoint(const ModelConfig& config, const Checkpoint& checkpoint);

}  // namespace woodid
