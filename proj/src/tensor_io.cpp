#include "unihand/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace unihand {

namespace {

constexpr char kMagic[4] = {'U', 'H', 'N', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw IoError("truncated tensor file: " + path);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

} // namespace

void save_raw(const std::string& path, const Shape& shape, const std::vector<double>& data,
              Dtype dtype) {
    if (shape_numel(shape) != int64_t(data.size()))
        throw DimensionError("save_raw: shape " + shape_str(shape) + " vs " +
                             std::to_string(data.size()) + " values");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    unsigned char dt = static_cast<unsigned char>(dtype);
    os.write(reinterpret_cast<const char*>(&dt), 1);
    put_u32(os, uint32_t(shape.size()));
    for (int d : shape) put_u32(os, uint32_t(d));
    // Little-endian hosts write payload directly.
    if (dtype == Dtype::f64) {
        os.write(reinterpret_cast<const char*>(data.data()),
                 std::streamsize(data.size() * sizeof(double)));
    } else {
        std::vector<float> f(data.begin(), data.end());
        os.write(reinterpret_cast<const char*>(f.data()),
                 std::streamsize(f.size() * sizeof(float)));
    }
    if (!os) throw IoError("write failed: " + path);
}

std::pair<Shape, std::vector<double>> load_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad magic in tensor file: " + path);
    uint32_t version = get_u32(is, path);
    if (version != kVersion)
        throw IoError("unsupported tensor file version " + std::to_string(version) + ": " + path);
    unsigned char dt = 0;
    if (!is.read(reinterpret_cast<char*>(&dt), 1)) throw IoError("truncated tensor file: " + path);
    if (dt > 1) throw IoError("unknown dtype code " + std::to_string(int(dt)) + ": " + path);
    uint32_t ndim = get_u32(is, path);
    if (ndim > 8) throw IoError("implausible ndim " + std::to_string(ndim) + ": " + path);
    Shape shape(ndim);
    for (auto& d : shape) d = int(get_u32(is, path));
    size_t n = size_t(shape_numel(shape));
    std::vector<double> data(n);
    if (dt == uint8_t(Dtype::f64)) {
        if (!is.read(reinterpret_cast<char*>(data.data()), std::streamsize(n * sizeof(double))))
            throw IoError("truncated payload: " + path);
    } else {
        std::vector<float> f(n);
        if (!is.read(reinterpret_cast<char*>(f.data()), std::streamsize(n * sizeof(float))))
            throw IoError("truncated payload: " + path);
        for (size_t i = 0; i < n; ++i) data[i] = double(f[i]);
    }
    return {std::move(shape), std::move(data)};
}

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype) {
    save_raw(path, t.shape(), t.values(), dtype);
}

Tensor load_tensor(const std::string& path) {
    auto [shape, data] = load_raw(path);
    return Tensor::from_data(std::move(shape), std::move(data));
}

} // namespace unihand
