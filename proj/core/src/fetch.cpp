#include "uaed/fetch.hpp"

#include <fstream>

#include "uaed/checksum.hpp"
#include "uaed/data.hpp"
#include "uaed/error.hpp"

namespace uaed::fetch {

const std::vector<MnistFile>& mnist_files() {
    static const std::vector<MnistFile> files = {
        {"train-images-idx3-ubyte", "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"},
        {"train-labels-idx1-ubyte", "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"},
        {"t10k-images-idx3-ubyte", "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"},
        {"t10k-labels-idx1-ubyte", "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"},
    };
    return files;
}

FileStatus check_file(const std::filesystem::path& dir, const MnistFile& file) {
    const auto path = dir / file.stem;
    if (!std::filesystem::exists(path)) {
        return FileStatus::missing;
    }
    return sha256_file(path) == file.sha256 ? FileStatus::valid : FileStatus::corrupt;
}

void verify_mnist(const std::filesystem::path& dir) {
    for (const auto& f : mnist_files()) {
        switch (check_file(dir, f)) {
        case FileStatus::valid: break;
        case FileStatus::missing: throw FormatError("missing MNIST file " + (dir / f.stem).string());
        case FileStatus::corrupt: throw ChecksumError(f.stem, "SHA-256 does not match the published digest");
        }
    }
}

void install(std::span<const std::uint8_t> bytes, const std::filesystem::path& dir, const MnistFile& file) {
    std::vector<std::uint8_t> raw;
    if (data::is_gzip(bytes)) {
        raw = data::gunzip(bytes);
    } else {
        raw.assign(bytes.begin(), bytes.end());
    }
    const std::string digest = sha256_hex(std::span<const std::uint8_t>(raw));
    if (digest != file.sha256) {
        throw ChecksumError(file.stem, "expected " + file.sha256 + ", got " + digest);
    }
    std::filesystem::create_directories(dir);
    const auto tmp = dir / (file.stem + ".part");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    }
    std::filesystem::rename(tmp, dir / file.stem);
}

} // namespace uaed::fetch
