#pragma once

// Raw little-endian array files: 16-byte magic, u64 rank, u64 extents, then
// the elements. The element type is implied by the file's role.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "famae/tensor.hpp"

namespace famae {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

class BlobError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kBlobMagic[16] = {'F', 'A', 'M', 'A', 'E', '-', 'T', 'E', 'N', 'S', 'O', 'R', 0, 0, 0, 0};

template <class T>
struct Blob {
    Shape shape;
    std::vector<T> values;
};

template <class T>
void write_blob(const std::filesystem::path& path, const Shape& shape, std::span<const T> values) {
    if (numel_of(shape) != values.size()) throw BlobError("write_blob: shape does not match value count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BlobError("cannot write " + path.string());
    out.write(kBlobMagic, sizeof kBlobMagic);
    const std::uint64_t rank = shape.size();
    out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
    for (std::size_t e : shape) {
        const std::uint64_t v = e;
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
    if (!out) throw BlobError("write failed for " + path.string());
}

/// `what` names the blob in error messages.
template <class T>
Blob<T> read_blob(const std::filesystem::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BlobError(what + ": cannot open " + path.string());
    const auto file_size = std::filesystem::file_size(path);
    char magic[16];
    std::uint64_t rank = 0;
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kBlobMagic, sizeof magic) != 0) {
        throw BlobError(what + ": bad magic in " + path.string());
    }
    if (!in.read(reinterpret_cast<char*>(&rank), sizeof rank) || rank > 8) {
        throw BlobError(what + ": bad header in " + path.string());
    }
    Blob<T> blob;
    for (std::uint64_t i = 0; i < rank; ++i) {
        std::uint64_t e = 0;
        if (!in.read(reinterpret_cast<char*>(&e), sizeof e)) throw BlobError(what + ": truncated header in " + path.string());
        blob.shape.push_back(static_cast<std::size_t>(e));
    }
    const std::size_t header = sizeof magic + sizeof rank + rank * sizeof(std::uint64_t);
    const std::size_t n = numel_of(blob.shape);
    if (file_size != header + n * sizeof(T)) {
        throw BlobError("size mismatch in " + what + ": header " + shape_str(blob.shape) + " needs " +
                        std::to_string(header + n * sizeof(T)) + " bytes, file has " + std::to_string(file_size));
    }
    blob.values.resize(n);
    in.read(reinterpret_cast<char*>(blob.values.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw BlobError(what + ": read failed for " + path.string());
    return blob;
}

} // namespace famae
