#include "sosuq/tensor.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "sosuq/errors.hpp"

static_assert(std::endian::native == std::endian::little, "container i/o assumes a little-endian host");

namespace sosuq {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320U ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

template <typename T>
void append(std::string& out, const T& v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw IoError("tensor container truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed) {
    static const auto table = make_crc_table();
    std::uint32_t c = seed ^ 0xffffffffU;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xffU] ^ (c >> 8);
    return c ^ 0xffffffffU;
}

std::string tensor_to_bytes(const Tensor& t) {
    if (t.values.size() != t.element_count()) throw IoError("tensor dims/values mismatch");
    std::string out;
    out.append(kMagic, 4);
    append(out, kVersion);
    append(out, static_cast<std::uint8_t>(t.dtype));
    append(out, static_cast<std::uint8_t>(t.dims.size()));
    append(out, static_cast<std::uint16_t>(0));
    for (auto d : t.dims) append(out, d);
    if (t.dtype == Dtype::f32) {
        for (double v : t.values) append(out, static_cast<float>(v));
    } else {
        for (double v : t.values) append(out, v);
    }
    const std::uint32_t c = crc32(out.data(), out.size());
    append(out, c);
    return out;
}

Tensor tensor_from_bytes(const std::string& bytes) {
    if (bytes.size() < 16) throw IoError("tensor container truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("bad tensor magic");
    const std::uint32_t stored_crc = [&] {
        std::uint32_t c;
        std::memcpy(&c, bytes.data() + bytes.size() - 4, 4);
        return c;
    }();
    if (crc32(bytes.data(), bytes.size() - 4) != stored_crc) throw IoError("tensor checksum mismatch");

    size_t pos = 4;
    const auto version = take<std::uint32_t>(bytes, pos);
    if (version != kVersion) throw IoError("unsupported tensor container version");
    const auto dtype = take<std::uint8_t>(bytes, pos);
    const auto rank = take<std::uint8_t>(bytes, pos);
    (void)take<std::uint16_t>(bytes, pos);
    if (dtype > 1) throw IoError("unknown tensor dtype tag");

    Tensor t;
    t.dtype = static_cast<Dtype>(dtype);
    t.dims.resize(rank);
    for (int i = 0; i < rank; ++i) t.dims[i] = take<std::uint64_t>(bytes, pos);
    const std::uint64_t n = t.element_count();
    const size_t elem = t.dtype == Dtype::f32 ? 4 : 8;
    if (pos + n * elem + 4 != bytes.size()) throw IoError("tensor payload size mismatch");
    t.values.resize(static_cast<size_t>(n));
    if (t.dtype == Dtype::f32) {
        for (std::uint64_t i = 0; i < n; ++i) t.values[i] = take<float>(bytes, pos);
    } else {
        for (std::uint64_t i = 0; i < n; ++i) t.values[i] = take<double>(bytes, pos);
    }
    return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    const std::string bytes = tensor_to_bytes(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return tensor_from_bytes(bytes);
}

} // namespace sosuq
