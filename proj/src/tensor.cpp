#include "v2vlc/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace v2vlc {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape))
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

double& Tensor::operator()(int i, int j) {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
}
double Tensor::operator()(int i, int j) const {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
}
double& Tensor::operator()(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
}
double Tensor::operator()(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<char*>(b), 4);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write("V2VT", 4);
    put_u16(os, 1);
    put_u16(os, static_cast<std::uint16_t>(t.rank()));
    for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor read_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "V2VT", 4) != 0)
        throw std::runtime_error("bad magic in tensor file: " + path);
    std::uint16_t version = get_u16(is);
    if (version != 1) throw std::runtime_error("unsupported tensor file version");
    std::uint16_t rank = get_u16(is);
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) shape[i] = static_cast<int>(get_u32(is));
    Tensor t(shape);
    for (auto& v : t.data) {
        std::uint32_t bits = get_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
    if (!is) throw std::runtime_error("truncated tensor file: " + path);
    return t;
}

}  // namespace v2vlc
