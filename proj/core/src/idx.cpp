#include <fstream>
#include <iterator>
#include <string>

#include <zlib.h>

#include "uaed/data.hpp"
#include "uaed/error.hpp"

namespace uaed::data {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

} // namespace

std::size_t IdxTensor::element_count() const {
    std::size_t n = dims.empty() ? 0 : 1;
    for (auto d : dims) {
        n *= d;
    }
    return n;
}

std::vector<float> IdxTensor::scaled() const {
    std::vector<float> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = static_cast<float>(raw[i]) / 255.0f;
    }
    return out;
}

IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) {
        throw FormatError("IDX stream too short for a magic number");
    }
    if (bytes[0] != 0 || bytes[1] != 0) {
        throw FormatError("bad IDX magic: leading bytes must be zero");
    }
    if (bytes[2] != 0x08) {
        throw FormatError("unsupported IDX element type " + std::to_string(bytes[2]) + " (only unsigned byte)");
    }
    const std::size_t ndim = bytes[3];
    if (ndim != 1 && ndim != 3) {
        throw FormatError("unsupported IDX rank " + std::to_string(ndim) + " (expected 1 or 3)");
    }
    const std::size_t header = 4 + 4 * ndim;
    if (bytes.size() < header) {
        throw FormatError("IDX header truncated");
    }
    IdxTensor t;
    for (std::size_t d = 0; d < ndim; ++d) {
        t.dims.push_back(read_be32(bytes, 4 + 4 * d));
    }
    const std::size_t n = t.element_count();
    if (bytes.size() - header < n) {
        throw FormatError("IDX payload truncated: expected " + std::to_string(n) + " bytes, found " +
                          std::to_string(bytes.size() - header));
    }
    t.raw.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                 bytes.begin() + static_cast<std::ptrdiff_t>(header + n));
    return t;
}

bool is_gzip(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) {
        throw FormatError("zlib initialisation failed");
    }
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 20);
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("corrupt gzip stream");
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw FormatError("truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (is_gzip(bytes)) {
        return gunzip(bytes);
    }
    return bytes;
}

std::string mnist_image_file(bool train) { return train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte"; }
std::string mnist_label_file(bool train) { return train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte"; }

namespace {

std::filesystem::path locate(const std::filesystem::path& dir, const std::string& stem) {
    const auto raw = dir / stem;
    if (std::filesystem::exists(raw)) {
        return raw;
    }
    const auto gz = dir / (stem + ".gz");
    if (std::filesystem::exists(gz)) {
        return gz;
    }
    throw FormatError("missing MNIST file " + raw.string() + " (run `uaed fetch`)");
}

} // namespace

MnistSplit load_mnist(const std::filesystem::path& dir, bool train) {
    const IdxTensor images = parse_idx(read_bytes(locate(dir, mnist_image_file(train))));
    const IdxTensor labels = parse_idx(read_bytes(locate(dir, mnist_label_file(train))));
    if (images.dims.size() != 3 || labels.dims.size() != 1) {
        throw FormatError("unexpected MNIST tensor ranks");
    }
    if (images.dims[0] != labels.dims[0]) {
        throw FormatError("MNIST image and label counts differ");
    }
    const auto n = static_cast<Eigen::Index>(images.dims[0]);
    const auto pixels = static_cast<Eigen::Index>(images.dims[1] * images.dims[2]);
    MnistSplit out;
    out.images.resize(n, pixels);
    for (Eigen::Index i = 0; i < n * pixels; ++i) {
        out.images.data()[i] = static_cast<float>(images.raw[static_cast<std::size_t>(i)]) / 255.0f;
    }
    out.digits.assign(labels.raw.begin(), labels.raw.end());
    return out;
}

MnistSplit MnistSplit::slice(std::size_t begin, std::size_t count) const {
    if (begin + count > size()) {
        throw ConfigError("MNIST slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") exceeds split size " + std::to_string(size()));
    }
    MnistSplit out;
    out.images = images.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
    out.digits.assign(digits.begin() + static_cast<std::ptrdiff_t>(begin),
                      digits.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return out;
}

} // namespace uaed::data
