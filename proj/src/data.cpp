#include "distillab/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace distillab {

const std::array<std::array<int, 2>, kFullClasses>& class_frequency_table() {
    // Integer cycle counts so a 2-D DFT localizes each class exactly; all ten
    // pairs are distinct under the conjugate symmetry (fx,fy) ~ (-fx,-fy).
    static const std::array<std::array<int, 2>, kFullClasses> table = {{
        {2, 0}, {0, 2}, {2, 2}, {4, 0}, {0, 4}, {4, 2}, {2, 4}, {5, 1}, {1, 5}, {3, 3},
    }};
    return table;
}

const std::array<uint8_t, kPatchSide>& glyph_bitmap(int artifact_class) {
    // Block digits "0".."4"; MSB of each byte is the leftmost pixel.
    static const std::array<std::array<uint8_t, kPatchSide>, kArtifactClasses> glyphs = {{
        {0x7E, 0x42, 0x42, 0x42, 0x42, 0x42, 0x42, 0x7E},  // 0
        {0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x18, 0x3C},  // 1
        {0x7E, 0x02, 0x02, 0x7E, 0x40, 0x40, 0x40, 0x7E},  // 2
        {0x7E, 0x02, 0x02, 0x3E, 0x02, 0x02, 0x02, 0x7E},  // 3
        {0x42, 0x42, 0x42, 0x7E, 0x02, 0x02, 0x02, 0x02},  // 4
    }};
    if (artifact_class < 0 || artifact_class >= kArtifactClasses)
        throw std::invalid_argument("glyph_bitmap: artifact class out of range");
    return glyphs[static_cast<size_t>(artifact_class)];
}

LabeledImage generate_base_image(int class_label, Rng& rng, double sigma_noise) {
    if (class_label < 0 || class_label >= kFullClasses)
        throw std::invalid_argument("generate_base_image: class out of range");
    const auto& freq = class_frequency_table()[static_cast<size_t>(class_label)];
    double phase = rng.next_double() * 2.0 * std::numbers::pi;
    LabeledImage img;
    img.class_label = class_label;
    const double w = 2.0 * std::numbers::pi / kImageSide;
    for (int y = 0; y < kImageSide; ++y)
        for (int x = 0; x < kImageSide; ++x) {
            double v = 0.5 + 0.35 * std::sin(w * (freq[0] * x + freq[1] * y) + phase);
            if (sigma_noise > 0.0) v += sigma_noise * rng.next_gaussian();
            img.pixels[static_cast<size_t>(y) * kImageSide + x] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    return img;
}

void stamp_artifact(LabeledImage& img, int artifact_class) {
    const auto& rows = glyph_bitmap(artifact_class);
    for (int y = 0; y < kPatchSide; ++y)
        for (int x = 0; x < kPatchSide; ++x)
            img.pixels[static_cast<size_t>(y) * kImageSide + x] =
                (rows[static_cast<size_t>(y)] >> (7 - x)) & 1 ? 1.0f : 0.0f;
    img.artifact_label = artifact_class;
    img.contaminated = true;
}

DatasetSplit build_split(int n, SplitRole role, const ContaminationPolicy& policy,
                         const std::vector<int>& class_set, uint64_t seed, double sigma_noise) {
    if (class_set.empty()) throw std::invalid_argument("build_split: empty class set");
    if (policy.rho < 0.0 || policy.rho > 1.0) throw std::invalid_argument("build_split: rho outside [0,1]");
    for (int c : class_set)
        if (c < 0 || c >= kFullClasses) throw std::invalid_argument("build_split: class out of range");

    DatasetSplit split;
    split.policy = policy;
    split.seed = seed;
    split.role = role;
    split.samples.reserve(static_cast<size_t>(n));
    Rng root(seed);
    for (int i = 0; i < n; ++i) {
        // One independent stream per sample: split generation parallelizes and
        // stays byte-identical regardless of evaluation order.
        Rng s = root.fork(static_cast<uint64_t>(i));
        int cls = class_set[s.next_below(class_set.size())];
        LabeledImage img = generate_base_image(cls, s, sigma_noise);
        // Only subtask-class images ever carry a glyph.
        if (cls < kArtifactClasses && s.next_bernoulli(policy.rho)) {
            int glyph = policy.mode == ContMode::Correlated
                            ? policy.mapping[static_cast<size_t>(cls)]
                            : static_cast<int>(s.next_below(kArtifactClasses));
            stamp_artifact(img, glyph);
        }
        split.samples.push_back(img);
    }
    return split;
}

std::pair<DatasetSplit, DatasetSplit> make_oracle_validation(const DatasetSplit& train, uint64_t seed) {
    size_t n = train.samples.size();
    if (n < 50) throw std::invalid_argument("make_oracle_validation: split too small (< 50 samples)");
    size_t n_val = n / 5;

    // Seeded shuffle picks the held-out 20%.
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng(seed).fork(0x6F7261636CULL);  // independent of data-generation streams
    for (size_t i = n; i > 1; --i) {
        size_t j = rng.next_below(i);
        std::swap(order[i - 1], order[j]);
    }

    DatasetSplit tr, val;
    tr.policy = train.policy;
    tr.seed = train.seed;
    tr.role = SplitRole::Train;
    val.policy = train.policy;
    val.policy.mode = ContMode::Random;
    val.seed = train.seed;
    val.role = SplitRole::Validation;
    tr.samples.reserve(n - n_val);
    val.samples.reserve(n_val);
    for (size_t i = 0; i < n; ++i) {
        const LabeledImage& img = train.samples[order[i]];
        if (i < n_val) {
            LabeledImage copy = img;
            if (copy.contaminated) stamp_artifact(copy, static_cast<int>(rng.next_below(kArtifactClasses)));
            val.samples.push_back(copy);
        } else {
            tr.samples.push_back(img);
        }
    }
    return {std::move(tr), std::move(val)};
}

Tensor<float> batch_pixels(const DatasetSplit& split, const std::vector<int>& indices) {
    int b = static_cast<int>(indices.size());
    Tensor<float> t = Tensor<float>::zeros({b, 1, kImageSide, kImageSide});
    for (int i = 0; i < b; ++i) {
        const auto& img = split.samples.at(static_cast<size_t>(indices[static_cast<size_t>(i)]));
        std::memcpy(t.data() + static_cast<size_t>(i) * kImagePixels, img.pixels.data(),
                    sizeof(float) * kImagePixels);
    }
    return t;
}

std::vector<int> batch_labels(const DatasetSplit& split, const std::vector<int>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(split.samples.at(static_cast<size_t>(i)).class_label);
    return out;
}

double mean_pixel(const DatasetSplit& split) {
    double acc = 0.0;
    for (const auto& img : split.samples)
        for (float v : img.pixels) acc += v;
    return acc / (static_cast<double>(split.samples.size()) * kImagePixels);
}

void write_manifest_csv(const DatasetSplit& split, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_manifest_csv: cannot open " + path);
    os << "index,class_label,artifact_label,contaminated,seed\n";
    for (size_t i = 0; i < split.samples.size(); ++i) {
        const auto& s = split.samples[i];
        os << i << ',' << s.class_label << ',' << s.artifact_label << ',' << (s.contaminated ? 1 : 0)
           << ',' << split.seed << '\n';
    }
    if (!os) throw std::runtime_error("write_manifest_csv: write failed for " + path);
}

Tensor<float> split_pixels_tensor(const DatasetSplit& split) {
    int n = static_cast<int>(split.samples.size());
    Tensor<float> t = Tensor<float>::zeros({n, 1, kImageSide, kImageSide});
    for (int i = 0; i < n; ++i)
        std::memcpy(t.data() + static_cast<size_t>(i) * kImagePixels,
                    split.samples[static_cast<size_t>(i)].pixels.data(), sizeof(float) * kImagePixels);
    return t;
}

// ---- IDX ----

namespace {
uint32_t read_be32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}
void write_be32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
}  // namespace

IdxData load_idx(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_idx: cannot open " + path);
    uint32_t magic = read_be32(is);
    if (!is) throw std::runtime_error("load_idx: truncated header in " + path);
    int ndim;
    if (magic == 0x00000803)
        ndim = 3;
    else if (magic == 0x00000801)
        ndim = 1;
    else
        throw std::runtime_error("load_idx: bad magic in " + path);
    IdxData out;
    size_t total = 1;
    for (int i = 0; i < ndim; ++i) {
        uint32_t d = read_be32(is);
        if (!is) throw std::runtime_error("load_idx: truncated dims in " + path);
        out.dims.push_back(static_cast<int>(d));
        total *= d;
    }
    if (magic == 0x00000803 && (out.dims[1] != 28 || out.dims[2] != 28))
        throw std::runtime_error("load_idx: expected 28x28 images in " + path);
    out.payload.resize(total);
    is.read(reinterpret_cast<char*>(out.payload.data()), static_cast<std::streamsize>(total));
    if (static_cast<size_t>(is.gcount()) != total)
        throw std::runtime_error("load_idx: truncated payload in " + path);
    return out;
}

void write_idx(const IdxData& data, uint32_t magic, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_idx: cannot open " + path);
    write_be32(os, magic);
    for (int d : data.dims) write_be32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(data.payload.data()),
             static_cast<std::streamsize>(data.payload.size()));
    if (!os) throw std::runtime_error("write_idx: write failed for " + path);
}

std::array<uint8_t, kPatchSide> downscale_mnist_glyph(const uint8_t* img28) {
    // 28 = 8 × 3.5: each output cell box-averages a 3.5×3.5 region, splitting
    // the boundary pixel's weight between neighbors.
    std::array<uint8_t, kPatchSide> out{};
    auto weight = [](int cell, int pix) -> double {
        double lo = cell * 3.5, hi = lo + 3.5;
        double a = std::max(lo, static_cast<double>(pix));
        double b = std::min(hi, static_cast<double>(pix) + 1.0);
        return std::max(0.0, b - a);
    };
    for (int cy = 0; cy < kPatchSide; ++cy)
        for (int cx = 0; cx < kPatchSide; ++cx) {
            double acc = 0.0;
            for (int py = static_cast<int>(cy * 3.5); py < std::min(28, static_cast<int>(cy * 3.5 + 4.5)); ++py)
                for (int px = static_cast<int>(cx * 3.5); px < std::min(28, static_cast<int>(cx * 3.5 + 4.5)); ++px)
                    acc += weight(cy, py) * weight(cx, px) * (img28[py * 28 + px] / 255.0);
            if (acc / (3.5 * 3.5) >= 0.5) out[static_cast<size_t>(cy)] |= static_cast<uint8_t>(1u << (7 - cx));
        }
    return out;
}

}  // namespace distillab
