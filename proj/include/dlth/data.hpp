#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlth/image.hpp"

namespace dlth {

enum class SourceKind { builtin, folder, cifar10 };

std::string to_string(SourceKind kind);
SourceKind parse_source(const std::string& text);

// builtin: procedural "desk-shapes" set generated in memory (path unused).
// folder:  root/<class>/<image>.ppm|.pgm, root = path/split when that exists.
// cifar10: directory holding the CIFAR-10 binary batches.
struct DatasetSpec {
  SourceKind kind = SourceKind::builtin;
  std::string path;
  std::string split = "train";
  int count = 0;  // builtin only; 0 picks 5000 (train) / 1000 (test)
  std::uint64_t seed = 2024;  // builtin only
  int limit = 0;  // keep only the first `limit` ids when > 0
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

struct DatasetHandle {
  SourceKind kind = SourceKind::builtin;
  std::string split;
  std::vector<std::string> ids;  // stable order
  std::vector<int> labels;
  std::vector<std::string> classes;
  std::vector<Image> images;
  NormStats stats;
  std::string digest;  // ids, labels and pixel bytes

  int size() const { return static_cast<int>(ids.size()); }
  int index_of(const std::string& id) const;
};

DatasetHandle open_dataset(const DatasetSpec& spec);

// Reads binary or ASCII PGM/PPM; grayscale stays single-channel.
Image read_pnm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

// One procedurally drawn image of class `label` (0..9).
Image draw_desk_shape(int label, std::uint64_t seed, int size = 32);
const std::vector<std::string>& desk_shape_classes();

struct Augment {
  bool flip = false;
  int dy = 0;  // crop shift in [-pad, pad]; 0 keeps the image in place
  int dx = 0;
};

struct BatchOptions {
  int batch_size = 64;
  bool shuffle = true;
  bool augment = false;
  bool crop = true;  // the trainer turns this off: shifted pixels would misalign fixed masks
  int pad = 4;
};

struct BatchPlan {
  std::vector<int> indices;
  std::vector<Augment> augment;
};

// Order and augmentation draws are a function of (seed, epoch) only.
std::vector<BatchPlan> batches(const DatasetHandle& data, std::uint64_t seed, int epoch, const BatchOptions& options);

// Flip then pad-crop; identity for a default Augment.
Image apply_augment(const Image& image, const Augment& augment, int pad);

}  // namespace dlth
