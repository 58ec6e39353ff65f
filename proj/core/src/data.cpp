#include "uaed/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/random/normal_distribution.hpp>

#include "uaed/error.hpp"

namespace uaed::data {

void Batch::validate(bool images) const {
    if (labels.empty()) {
        throw ConfigError("batch must contain at least one sample");
    }
    if (static_cast<std::size_t>(x.rows()) != labels.size()) {
        throw ConfigError("batch rows and labels differ in length");
    }
    if (x.cols() != shape.size()) {
        throw ConfigError("batch width does not match its image shape");
    }
    if (!groups.empty() && groups.size() != labels.size()) {
        throw ConfigError("batch groups and labels differ in length");
    }
    if (images && x.size() > 0 && (x.minCoeff() < 0.0f || x.maxCoeff() > 1.0f)) {
        throw ConfigError("pixel values must lie in [0, 1]");
    }
}

Batch Batch::rows(std::span<const std::size_t> index) const {
    Batch out;
    out.shape = shape;
    out.x.resize(static_cast<Eigen::Index>(index.size()), x.cols());
    out.labels.reserve(index.size());
    if (!groups.empty()) {
        out.groups.reserve(index.size());
    }
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(index[i]);
        out.x.row(static_cast<Eigen::Index>(i)) = x.row(r);
        out.labels.push_back(labels[index[i]]);
        if (!groups.empty()) {
            out.groups.push_back(groups[index[i]]);
        }
    }
    return out;
}

const char* to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

const char* to_string(TransformFamily family) {
    switch (family) {
    case TransformFamily::color_correlation: return "color_correlation";
    case TransformFamily::rotation: return "rotation";
    case TransformFamily::group_shift: return "group_shift";
    }
    return "?";
}

void EnvTransform::validate() const {
    switch (family) {
    case TransformFamily::color_correlation:
        if (!(param >= 0.0 && param <= 1.0)) {
            throw ConfigError("color correlation gamma must lie in [0, 1]");
        }
        break;
    case TransformFamily::rotation:
        if (param < 0.0 || param >= static_cast<double>(kRotationDegrees.size()) || param != std::floor(param)) {
            throw ConfigError("rotation angle index must be one of 0..4");
        }
        break;
    case TransformFamily::group_shift:
        if (param != kIdentityEnv && !(param >= 0.0 && param <= 1.0)) {
            throw ConfigError("group shift correlation must lie in [0, 1]");
        }
        break;
    }
}

std::vector<int> binarize_digits(const std::vector<int>& digits) {
    std::vector<int> out(digits.size());
    std::transform(digits.begin(), digits.end(), out.begin(), [](int d) { return d >= 5 ? 1 : 0; });
    return out;
}

Batch apply_color_transform(const Batch& batch, double gamma, double label_noise, Rng& rng) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw ConfigError("color correlation gamma must lie in [0, 1], got " + std::to_string(gamma));
    }
    if (!(label_noise >= 0.0 && label_noise <= 1.0)) {
        throw ConfigError("label noise must lie in [0, 1]");
    }
    if (batch.shape.channels != 1) {
        throw ConfigError("color transform expects a single-channel batch");
    }
    const Eigen::Index plane = batch.shape.height * batch.shape.width;
    Batch out;
    out.shape = {2, batch.shape.height, batch.shape.width};
    out.x = Matrix::Zero(batch.x.rows(), 2 * plane);
    out.labels.resize(batch.size());
    out.groups = batch.groups;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const int noisy = batch.labels[i] ^ static_cast<int>(bernoulli(rng, label_noise));
        const int color = noisy ^ static_cast<int>(bernoulli(rng, gamma));
        const auto r = static_cast<Eigen::Index>(i);
        out.x.row(r).segment(color * plane, plane) = batch.x.row(r);
        out.labels[i] = noisy;
    }
    return out;
}

Batch rotate_degrees(const Batch& batch, double degrees) {
    const int h = batch.shape.height;
    const int w = batch.shape.width;
    const double turns = degrees / 90.0;
    double c = std::cos(degrees * std::numbers::pi / 180.0);
    double s = std::sin(degrees * std::numbers::pi / 180.0);
    if (turns == std::round(turns)) {
        // Exact trigonometry for quarter turns keeps those paths lossless.
        const int q = ((static_cast<int>(std::round(turns)) % 4) + 4) % 4;
        constexpr int cs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
        c = cs[q][0];
        s = cs[q][1];
    }
    const double cy = (h - 1) / 2.0;
    const double cx = (w - 1) / 2.0;

    // Precompute the bilinear stencil once; it is shared by every row and channel.
    struct Tap {
        int src[4];
        float weight[4];
    };
    std::vector<Tap> taps(static_cast<std::size_t>(h * w));
    for (int r = 0; r < h; ++r) {
        for (int col = 0; col < w; ++col) {
            const double dx = col - cx;
            const double dy = r - cy;
            const double sx = c * dx + s * dy + cx;
            const double sy = -s * dx + c * dy + cy;
            const double fx0 = std::floor(sx);
            const double fy0 = std::floor(sy);
            const double fx = sx - fx0;
            const double fy = sy - fy0;
            const int x0 = static_cast<int>(fx0);
            const int y0 = static_cast<int>(fy0);
            Tap& t = taps[static_cast<std::size_t>(r * w + col)];
            const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
            const double ws[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            for (int k = 0; k < 4; ++k) {
                const bool inside = xs[k] >= 0 && xs[k] < w && ys[k] >= 0 && ys[k] < h && ws[k] != 0.0;
                t.src[k] = inside ? ys[k] * w + xs[k] : -1;
                t.weight[k] = inside ? static_cast<float>(ws[k]) : 0.0f;
            }
        }
    }

    Batch out = batch;
    const int plane = h * w;
    for (Eigen::Index i = 0; i < batch.x.rows(); ++i) {
        const float* src_row = batch.x.row(i).data();
        float* dst_row = out.x.row(i).data();
        for (int ch = 0; ch < batch.shape.channels; ++ch) {
            const float* src = src_row + ch * plane;
            float* dst = dst_row + ch * plane;
            for (int p = 0; p < plane; ++p) {
                const Tap& t = taps[static_cast<std::size_t>(p)];
                float v = 0.0f;
                for (int k = 0; k < 4; ++k) {
                    if (t.src[k] >= 0) {
                        v += t.weight[k] * src[t.src[k]];
                    }
                }
                dst[p] = v;
            }
        }
    }
    return out;
}

Batch apply_rotation(const Batch& batch, int angle_index) {
    if (angle_index < 0 || angle_index >= static_cast<int>(kRotationDegrees.size())) {
        throw ConfigError("rotation angle index " + std::to_string(angle_index) + " out of range 0..4");
    }
    if (angle_index == 0) {
        return batch;
    }
    return rotate_degrees(batch, kRotationDegrees[static_cast<std::size_t>(angle_index)]);
}

Batch downsample(const Batch& batch, int factor) {
    if (factor < 1) {
        throw ConfigError("downsample factor must be at least 1");
    }
    if (factor == 1) {
        return batch;
    }
    const int h = batch.shape.height / factor;
    const int w = batch.shape.width / factor;
    if (h * factor != batch.shape.height || w * factor != batch.shape.width) {
        throw ConfigError("image size is not divisible by the downsample factor");
    }
    Batch out;
    out.shape = {batch.shape.channels, h, w};
    out.labels = batch.labels;
    out.groups = batch.groups;
    out.x = Matrix::Zero(batch.x.rows(), out.shape.size());
    const float scale = 1.0f / static_cast<float>(factor * factor);
    const int in_plane = batch.shape.height * batch.shape.width;
    for (Eigen::Index i = 0; i < batch.x.rows(); ++i) {
        for (int ch = 0; ch < batch.shape.channels; ++ch) {
            for (int r = 0; r < batch.shape.height; ++r) {
                for (int c = 0; c < batch.shape.width; ++c) {
                    out.x(i, ch * h * w + (r / factor) * w + c / factor) +=
                        batch.x(i, ch * in_plane + r * batch.shape.width + c);
                }
            }
        }
    }
    out.x *= scale;
    return out;
}

Batch apply_group_shift(const Batch& batch, double correlation, Rng& rng) {
    if (correlation == kIdentityEnv) {
        return batch;
    }
    if (!(correlation >= 0.0 && correlation <= 1.0)) {
        throw ConfigError("group shift correlation must lie in [0, 1]");
    }
    if (batch.groups.size() != batch.size()) {
        throw ConfigError("group shift needs group annotations");
    }
    std::vector<std::size_t> agree;
    std::vector<std::size_t> disagree;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        // group = 2 * y + s, so the spurious bit agrees with y when s == y.
        const int s = batch.groups[i] % 2;
        (s == batch.labels[i] ? agree : disagree).push_back(i);
    }
    std::vector<std::size_t> picks(batch.size());
    for (auto& p : picks) {
        const bool want_agree = bernoulli(rng, correlation);
        const auto& pool = (want_agree && !agree.empty()) || disagree.empty() ? agree : disagree;
        p = pool[uniform_index(rng, pool.size())];
    }
    return batch.rows(picks);
}

Batch apply(const EnvTransform& transform, const Batch& batch, Rng& rng, double label_noise) {
    transform.validate();
    switch (transform.family) {
    case TransformFamily::color_correlation: return apply_color_transform(batch, transform.param, label_noise, rng);
    case TransformFamily::rotation: return apply_rotation(batch, static_cast<int>(transform.param));
    case TransformFamily::group_shift: return apply_group_shift(batch, transform.param, rng);
    }
    return batch;
}

// ---------------------------------------------------------------------------

std::string EnvDescriptor::label() const {
    std::ostringstream os;
    switch (family) {
    case TransformFamily::color_correlation: os << "e=" << value; break;
    case TransformFamily::rotation: os << value << "deg"; break;
    case TransformFamily::group_shift: os << "group" << value; break;
    }
    return os.str();
}

Batch grayscale_batch(const MnistSplit& raw, int downsample_factor) {
    if (raw.size() == 0) {
        throw ConfigError("MNIST split is empty");
    }
    Batch b;
    b.x = raw.images;
    b.shape = {1, 28, 28};
    b.labels = binarize_digits(raw.digits);
    return downsample(b, downsample_factor);
}

EnvDataset build_colored_mnist(const MnistSplit& raw, double e, Rng& rng, const ColoredMnistOptions& options) {
    EnvDataset ds;
    ds.data = apply_color_transform(grayscale_batch(raw, options.downsample), e, options.label_noise, rng);
    ds.descriptor = {TransformFamily::color_correlation, e};
    ds.split = options.split;
    return ds;
}

std::vector<EnvDataset> build_rotated_mnist(const MnistSplit& raw, const std::vector<int>& angle_indices,
                                            const RotatedMnistOptions& options) {
    if (angle_indices.empty()) {
        throw ConfigError("rotated MNIST needs at least one angle");
    }
    Batch base;
    base.x = raw.images;
    base.shape = {1, 28, 28};
    base.labels = binarize_digits(raw.digits);
    std::vector<EnvDataset> out;
    for (int idx : angle_indices) {
        EnvDataset ds;
        ds.data = downsample(apply_rotation(base, idx), options.downsample);
        ds.descriptor = {TransformFamily::rotation, kRotationDegrees[static_cast<std::size_t>(idx)]};
        ds.split = options.split;
        out.push_back(std::move(ds));
    }
    return out;
}

EnvDataset build_synthetic_groups(std::size_t n, double spurious_corr, Rng& rng, Split split) {
    if (n < 4) {
        throw ConfigError("synthetic group dataset needs n >= 4");
    }
    if (!(spurious_corr >= 0.0 && spurious_corr <= 1.0)) {
        throw ConfigError("spurious correlation must lie in [0, 1]");
    }
    constexpr double kCoreMargin = 1.0;
    constexpr double kSpuriousNoise = 0.1;
    const double along = kCoreMargin / std::sqrt(2.0);
    boost::random::normal_distribution<double> normal(0.0, 1.0);

    EnvDataset ds;
    ds.split = split;
    ds.descriptor = {TransformFamily::group_shift, spurious_corr};
    Batch& b = ds.data;
    b.shape = {1, 1, 3};
    b.x.resize(static_cast<Eigen::Index>(n), 3);
    b.labels.resize(n);
    b.groups.resize(n);
    ds.group_sizes.assign(4, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = bernoulli(rng, 0.5) ? 1 : 0;
        const int s = bernoulli(rng, spurious_corr) ? y : 1 - y;
        const double sign_y = 2.0 * y - 1.0;
        const auto r = static_cast<Eigen::Index>(i);
        b.x(r, 0) = static_cast<float>(sign_y * along + normal(rng));
        b.x(r, 1) = static_cast<float>(sign_y * along + normal(rng));
        b.x(r, 2) = static_cast<float>((2.0 * s - 1.0) + kSpuriousNoise * normal(rng));
        b.labels[i] = y;
        b.groups[i] = 2 * y + s;
        ++ds.group_sizes[static_cast<std::size_t>(b.groups[i])];
    }
    return ds;
}

std::vector<EnvDataset> split_by_group(const EnvDataset& dataset) {
    if (dataset.data.groups.size() != dataset.data.size()) {
        throw ConfigError("dataset has no group annotations");
    }
    std::vector<EnvDataset> out;
    for (int g = 0; g < 4; ++g) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < dataset.data.size(); ++i) {
            if (dataset.data.groups[i] == g) {
                rows.push_back(i);
            }
        }
        if (rows.empty()) {
            continue;
        }
        EnvDataset ds;
        ds.data = dataset.data.rows(rows);
        ds.descriptor = {TransformFamily::group_shift, static_cast<double>(g)};
        ds.split = dataset.split;
        ds.group_sizes = {rows.size()};
        out.push_back(std::move(ds));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

class ColorFamily final : public EnvFamily {
public:
    ColorFamily(Batch base, double label_noise) : base_(std::move(base)), label_noise_(label_noise) {}

    TransformFamily family() const override { return TransformFamily::color_correlation; }
    std::size_t size() const override { return base_.size(); }
    ImageShape view_shape() const override { return {2, base_.shape.height, base_.shape.width}; }

    Batch view(std::span<const std::size_t> rows, double param, Rng& rng) const override {
        return apply_color_transform(base_.rows(rows), param, label_noise_, rng);
    }

private:
    Batch base_;
    double label_noise_;
};

class RotationFamily final : public EnvFamily {
public:
    RotationFamily(const MnistSplit& raw, int factor) {
        std::vector<int> all(kRotationDegrees.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            all[i] = static_cast<int>(i);
        }
        for (auto& ds : build_rotated_mnist(raw, all, {factor, Split::train})) {
            rotated_.push_back(std::move(ds.data));
        }
    }

    TransformFamily family() const override { return TransformFamily::rotation; }
    std::size_t size() const override { return rotated_.front().size(); }
    std::size_t atom_count() const override { return rotated_.size(); }
    ImageShape view_shape() const override { return rotated_.front().shape; }

    Batch view(std::span<const std::size_t> rows, double param, Rng&) const override {
        const auto idx = static_cast<std::size_t>(param);
        if (param < 0.0 || idx >= rotated_.size()) {
            throw ConfigError("rotation atom index out of range");
        }
        return rotated_[idx].rows(rows);
    }

private:
    std::vector<Batch> rotated_;
};

class GroupShiftFamily final : public EnvFamily {
public:
    explicit GroupShiftFamily(Batch base) : base_(std::move(base)) {}

    TransformFamily family() const override { return TransformFamily::group_shift; }
    std::size_t size() const override { return base_.size(); }
    ImageShape view_shape() const override { return base_.shape; }

    Batch view(std::span<const std::size_t> rows, double param, Rng& rng) const override {
        return apply_group_shift(base_.rows(rows), param, rng);
    }

private:
    Batch base_;
};

} // namespace

std::unique_ptr<EnvFamily> make_color_family(Batch grayscale, double label_noise) {
    grayscale.validate();
    return std::make_unique<ColorFamily>(std::move(grayscale), label_noise);
}

std::unique_ptr<EnvFamily> make_rotation_family(const MnistSplit& raw, int downsample_factor) {
    return std::make_unique<RotationFamily>(raw, downsample_factor);
}

std::unique_ptr<EnvFamily> make_group_shift_family(Batch base) {
    base.validate(false);
    if (base.groups.size() != base.size()) {
        throw ConfigError("group shift family needs group annotations");
    }
    return std::make_unique<GroupShiftFamily>(std::move(base));
}

} // namespace uaed::data
