#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2vlc {

// Thrown when tensor shapes don't line up; message names both shapes.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense row-major tensor. Values are kept in double precision; the on-disk
// format stores 32-bit floats.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v);
    static Tensor identity(int n);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t size() const { return data.size(); }

    double& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
    double operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
    double& operator()(int i, int j);
    double operator()(int i, int j) const;
    double& operator()(int i, int j, int k);
    double operator()(int i, int j, int k) const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::size_t shape_size(const Shape& s);

// Binary tensor file format: magic "V2VT", u16 version, u16 rank,
// little-endian u32 dims, then row-major little-endian f32 values.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

}  // namespace v2vlc
