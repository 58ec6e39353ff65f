#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uaed/random.hpp"

/// Environment transformations and benchmark dataset construction.
namespace uaed::data {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ImageShape {
    int channels = 1;
    int height = 28;
    int width = 28;

    int size() const { return channels * height * width; }
    bool operator==(const ImageShape&) const = default;
};

/// N samples stored row-wise, channel-major within a row. `groups` is
/// optional and only filled for datasets with annotated groups.
struct Batch {
    Matrix x;
    ImageShape shape;
    std::vector<int> labels;
    std::vector<int> groups;

    std::size_t size() const { return labels.size(); }

    /// Throws ConfigError unless N >= 1, shapes agree and values lie in [0, 1]
    /// (the range check is skipped when `images` is false).
    void validate(bool images = true) const;

    Batch rows(std::span<const std::size_t> index) const;
};

using ImageBatch = Batch;

enum class Split { train, val, test };

const char* to_string(Split split);

// ---------------------------------------------------------------------------
// IDX ingestion

struct IdxTensor {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> raw;

    std::size_t element_count() const;
    /// Payload rescaled from [0, 255] to [0, 1].
    std::vector<float> scaled() const;
};

/// Decodes an unsigned-byte IDX stream (magic 0x00000801 or 0x00000803).
IdxTensor parse_idx(std::span<const std::uint8_t> bytes);

bool is_gzip(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes);

/// Reads a file, transparently decompressing gzip content.
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

struct MnistSplit {
    Matrix images; ///< N x 784, values in [0, 1]
    std::vector<int> digits;

    std::size_t size() const { return digits.size(); }
    MnistSplit slice(std::size_t begin, std::size_t count) const;
};

/// Canonical MNIST file stem for a split, e.g. "train-images-idx3-ubyte".
std::string mnist_image_file(bool train);
std::string mnist_label_file(bool train);

/// Loads the train (`train == true`) or t10k split from `dir`. Accepts raw
/// or `.gz` files.
MnistSplit load_mnist(const std::filesystem::path& dir, bool train);

// ---------------------------------------------------------------------------
// Transformations

enum class TransformFamily { color_correlation, rotation, group_shift };

const char* to_string(TransformFamily family);

inline constexpr std::array<double, 5> kRotationDegrees{0.0, 45.0, 90.0, 135.0, 180.0};

/// Parameter value meaning "leave the batch untouched" for families whose
/// parameter is a probability.
inline constexpr double kIdentityEnv = -1.0;

struct EnvTransform {
    TransformFamily family = TransformFamily::color_correlation;
    double param = 0.0;

    void validate() const;
};

/// Binary label 1[digit >= 5].
std::vector<int> binarize_digits(const std::vector<int>& digits);

/// Single-channel batch -> two-channel batch. Labels are flipped with
/// probability `label_noise`; the colour bit is the (noisy) label flipped
/// with probability `gamma`, and the digit is written to that channel.
Batch apply_color_transform(const Batch& batch, double gamma, double label_noise, Rng& rng);

/// Rotates every channel about the image centre by kRotationDegrees[index]
/// with bilinear interpolation and zero padding.
Batch apply_rotation(const Batch& batch, int angle_index);
Batch rotate_degrees(const Batch& batch, double degrees);

/// Average pooling with a square window of `factor` pixels.
Batch downsample(const Batch& batch, int factor);

/// Resamples rows (with replacement) so that the spurious bit agrees with the
/// label with probability `correlation`. Requires `groups`.
Batch apply_group_shift(const Batch& batch, double correlation, Rng& rng);

Batch apply(const EnvTransform& transform, const Batch& batch, Rng& rng, double label_noise = 0.0);

// ---------------------------------------------------------------------------
// Datasets

struct EnvDescriptor {
    TransformFamily family = TransformFamily::color_correlation;
    double value = 0.0;

    std::string label() const;
};

struct EnvDataset {
    Batch data;
    EnvDescriptor descriptor;
    Split split = Split::train;
    std::vector<std::size_t> group_sizes;
};

struct ColoredMnistOptions {
    double label_noise = 0.25;
    int downsample = 1;
    Split split = Split::train;
};

EnvDataset build_colored_mnist(const MnistSplit& raw, double e, Rng& rng, const ColoredMnistOptions& options = {});

struct RotatedMnistOptions {
    int downsample = 1;
    Split split = Split::train;
};

std::vector<EnvDataset> build_rotated_mnist(const MnistSplit& raw, const std::vector<int>& angle_indices,
                                            const RotatedMnistOptions& options = {});

/// Two Gaussian core features predictive of y plus one spurious feature whose
/// sign agrees with y with probability `spurious_corr`. Group id = 2*y + s.
EnvDataset build_synthetic_groups(std::size_t n, double spurious_corr, Rng& rng, Split split = Split::train);

/// One dataset per non-empty group, descriptor value = group id.
std::vector<EnvDataset> split_by_group(const EnvDataset& dataset);

/// Grayscale binary-label batch from raw MNIST, optionally pooled.
Batch grayscale_batch(const MnistSplit& raw, int downsample_factor);

// ---------------------------------------------------------------------------
// Transformation families bound to a base sample, used by the trainer to
// materialise environment views of a minibatch.

class EnvFamily {
public:
    virtual ~EnvFamily() = default;

    virtual TransformFamily family() const = 0;
    virtual std::size_t size() const = 0;
    /// Number of discrete environments; 0 for continuous families.
    virtual std::size_t atom_count() const { return 0; }
    /// Builds the environment view of the given base rows. For discrete
    /// families `param` is the atom index.
    virtual Batch view(std::span<const std::size_t> rows, double param, Rng& rng) const = 0;
    virtual ImageShape view_shape() const = 0;
};

std::unique_ptr<EnvFamily> make_color_family(Batch grayscale, double label_noise);
std::unique_ptr<EnvFamily> make_rotation_family(const MnistSplit& raw, int downsample_factor);
std::unique_ptr<EnvFamily> make_group_shift_family(Batch base);

} // namespace uaed::data
