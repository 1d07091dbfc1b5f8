#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "woodid/image.hpp"

namespace woodid {

/// Procedural end-grain-like texture families. Class k uses family k % 5
/// (growth-ring bands, scattered pores, fine rays, wavy bands, banded
/// parenchyma) with a class-specific tint; per-image seeds jitter phase,
/// frequency, brightness and noise.
Image synth_texture(int class_index, int width, int height, std::uint64_t seed);

struct SynthCorpusOptions {
  int n_classes = 5;
  int images_per_class = 40;
  int images_per_specimen = 1;
  int width = 2048;
  int height = 768;
  std::uint64_t seed = 7;
};

struct SynthCorpus {
  std::filesystem::path catalog;   // catalog.json
  std::filesystem::path records;   // records.jsonl
  std::vector<std::string> class_labels;
};

/// Writes PNG images, an archetype per class, a class catalog and an ingest
/// records file under `dir`.
SynthCorpus write_synth_corpus(const std::filesystem::path& dir, const SynthCorpusOptions& options);

}  // namespace woodid
