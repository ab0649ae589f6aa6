#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sosuq {

// Binary tensor container:
//   bytes 0..3   magic "SQTN"
//   bytes 4..7   u32 format version (currently 1)
//   byte  8      u8 dtype tag: 0 = float32, 1 = float64
//   byte  9      u8 rank
//   bytes 10..11 u16 reserved (0)
//   then rank x u64 dims, then the row-major little-endian payload,
//   then a trailing u32 CRC-32 over everything before it.
// float32 is the tag used for data exports (maps, measurements);
// float64 is used by checkpoints, where bit-exact round-trips of model
// parameters are required.

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct Tensor {
    Dtype dtype = Dtype::f32;
    std::vector<std::uint64_t> dims;
    std::vector<double> values; // canonical in-memory representation

    Tensor() = default;
    Tensor(Dtype dt, std::vector<std::uint64_t> d) : dtype(dt), dims(std::move(d)) {
        values.resize(static_cast<size_t>(element_count()));
    }

    std::uint64_t element_count() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

std::string tensor_to_bytes(const Tensor& t);
Tensor tensor_from_bytes(const std::string& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

} // namespace sosuq
