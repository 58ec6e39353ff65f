#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

/// Integrity checks and installation of the MNIST IDX files. Downloading
/// itself lives in the command-line tool; this part never touches the network.
namespace uaed::fetch {

struct MnistFile {
    std::string stem;   ///< e.g. "train-images-idx3-ubyte"
    std::string sha256; ///< digest of the uncompressed file
};

const std::vector<MnistFile>& mnist_files();

enum class FileStatus { valid, missing, corrupt };

/// Status of the uncompressed file `dir/stem`.
FileStatus check_file(const std::filesystem::path& dir, const MnistFile& file);

/// Throws ChecksumError naming the first corrupt file, FormatError if one is missing.
void verify_mnist(const std::filesystem::path& dir);

/// Decompresses `bytes` if gzipped, checks the digest and writes `dir/stem`.
/// Throws ChecksumError (naming the file) on mismatch without writing.
void install(std::span<const std::uint8_t> bytes, const std::filesystem::path& dir, const MnistFile& file);

} // namespace uaed::fetch
