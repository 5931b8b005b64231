#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpad {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

/// Dense multi-dimensional array of 64-bit reals, row-major.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    }

    Tensor(Shape s, double fill) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    }

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        validate_shape();
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    static Tensor row(std::vector<double> v) {
        auto n = static_cast<std::int64_t>(v.size());
        return Tensor(Shape{n}, std::move(v));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::size_t rank() const { return shape.size(); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Value of a one-element tensor.
    double item() const {
        if (numel() != 1) {
            throw std::logic_error("Tensor::item on tensor of shape " + shape_str(shape));
        }
        return data[0];
    }

private:
    void validate_shape() const {
        for (auto e : shape) {
            if (e <= 0) {
                throw std::invalid_argument("Tensor: nonpositive extent in shape " + shape_str(shape));
            }
        }
    }
};

}  // namespace lpad
