#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afp/codec.hpp"
#include "afp/tensor.hpp"

namespace afp {

struct Sample {
  Tensor image;  // (1, 3, H, W), values in [0, 1]
  std::vector<GroundTruth> gts;
  std::string id;
};

struct SynthConfig {
  int image_size = 128;
  int min_blobs = 0;
  int max_blobs = 3;
  double min_radius = 6.0;
  double max_radius = 22.0;
  double texture_amplitude = 0.08;
  std::uint64_t seed = 7;

  void validate() const;
};

struct AnnotationRecord {
  std::string image;
  std::vector<GroundTruth> gts;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct DetectionRecord {
  std::string image;
  std::vector<Detection> detections;
};

namespace data {

// Pure function of (config.seed, index): textured background plus up to
// max_blobs smooth elliptical bright blobs with non-overlapping boxes.
Sample synth_sample(const SynthConfig& config, std::uint64_t index);

std::vector<Sample> synth_dataset(const SynthConfig& config,
                                  std::uint64_t first_index, int count);

// One JSON object per line: {"image": "...", "boxes": [[x1,y1,x2,y2], ...]}.
// Blank lines are skipped.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       std::span<const AnnotationRecord> records);

// Binary P6 PPM, maxval <= 65535, decoded to [0, 1].
Tensor load_image_ppm(const std::filesystem::path& path);
void write_image_ppm(const std::filesystem::path& path, const Tensor& image);

// Loads every record's image (relative paths resolve against the annotation
// file's directory) and checks that boxes lie inside the image.
std::vector<Sample> load_dataset(const std::filesystem::path& annotations);

// Throws naming `id` if any box is empty or leaves the image.
void validate_boxes(const std::vector<GroundTruth>& gts, int width, int height,
                    const std::string& id);

// {"image": "...", "detections": [{"box": [...], "score": s}, ...]}
std::vector<DetectionRecord> load_detections(const std::filesystem::path& path);
std::string detections_jsonl(std::span<const DetectionRecord> records);
void write_detections(const std::filesystem::path& path,
                      std::span<const DetectionRecord> records);

Sample flip_horizontal(const Sample& sample);
Sample flip_vertical(const Sample& sample);

// Fisher-Yates permutation of [0, n) that depends only on (seed, epoch).
std::vector<int> shuffled_order(int n, std::uint64_t seed, std::uint64_t epoch);

}  // namespace data
}  // namespace afp
