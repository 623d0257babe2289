#pragma once

// Synthetic spurious-correlation dataset: class-coded sinusoidal gratings on
// 32×32 images, optionally stamped with an 8×8 block-digit glyph in the
// top-left corner whose class either tracks the image class (Correlated) or is
// drawn uniformly (Random).  Plus an IDX parser for real MNIST glyph sources.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "distillab/rng.hpp"
#include "distillab/tensor.hpp"

namespace distillab {

constexpr int kImageSide = 32;
constexpr int kImagePixels = kImageSide * kImageSide;
constexpr int kPatchSide = 8;
constexpr int kFullClasses = 10;
constexpr int kArtifactClasses = 5;
constexpr double kDefaultSigmaNoise = 0.25;

enum class ContMode { Correlated, Random };

struct ContaminationPolicy {
    double rho = 0.0;
    ContMode mode = ContMode::Correlated;
    std::array<int, kArtifactClasses> mapping = {0, 1, 2, 3, 4};  // class -> glyph (Correlated)
};

struct LabeledImage {
    std::array<float, kImagePixels> pixels{};  // row-major, single channel, [0,1]
    int class_label = 0;
    int artifact_label = -1;
    bool contaminated = false;
};

enum class SplitRole { Train, Validation, Test };

struct DatasetSplit {
    std::vector<LabeledImage> samples;
    ContaminationPolicy policy;
    uint64_t seed = 0;
    SplitRole role = SplitRole::Train;
};

// (fx, fy) integer cycle counts of each class's grating over the 32-pixel span.
const std::array<std::array<int, 2>, kFullClasses>& class_frequency_table();

// 8 row-bitmasks per glyph, MSB = leftmost pixel.
const std::array<uint8_t, kPatchSide>& glyph_bitmap(int artifact_class);

LabeledImage generate_base_image(int class_label, Rng& rng, double sigma_noise = kDefaultSigmaNoise);

void stamp_artifact(LabeledImage& img, int artifact_class);

DatasetSplit build_split(int n, SplitRole role, const ContaminationPolicy& policy,
                         const std::vector<int>& class_set, uint64_t seed,
                         double sigma_noise = kDefaultSigmaNoise);

// 20% oracle holdout: the held-out images keep their contamination mask but
// their glyph classes are redrawn uniformly (stamps are replacements, so no
// clean original is needed).  Deterministic in `seed`.
std::pair<DatasetSplit, DatasetSplit> make_oracle_validation(const DatasetSplit& train, uint64_t seed);

// Batch tensor [n,1,32,32] from a contiguous index range of a split.
Tensor<float> batch_pixels(const DatasetSplit& split, const std::vector<int>& indices);
std::vector<int> batch_labels(const DatasetSplit& split, const std::vector<int>& indices);

double mean_pixel(const DatasetSplit& split);

// CSV manifest (index,class_label,artifact_label,contaminated,seed) + pixel
// tensor read/write against the DSTL container.
void write_manifest_csv(const DatasetSplit& split, const std::string& path);
Tensor<float> split_pixels_tensor(const DatasetSplit& split);

// ---- IDX (real-MNIST glyph source) ----
struct IdxData {
    std::vector<int> dims;
    std::vector<uint8_t> payload;
};
IdxData load_idx(const std::string& path);
void write_idx(const IdxData& data, uint32_t magic, const std::string& path);

// 28×28 u8 image -> 8×8 binary glyph rows (3.5×3.5 box average, threshold 0.5).
std::array<uint8_t, kPatchSide> downscale_mnist_glyph(const uint8_t* img28);

}  // namespace distillab
