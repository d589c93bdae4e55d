#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "magicstyle/errors.hpp"

namespace magicstyle {

struct LatentShape {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const { return channels * height * width; }
    std::size_t plane() const { return height * width; }

    friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

inline std::string to_string(const LatentShape& s) {
    return "(1, " + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
           std::to_string(s.width) + ")";
}

// Rank-4 latent with the batch axis fixed at 1, stored channel-major (C, H, W).
class Latent {
public:
    Latent() = default;
    explicit Latent(LatentShape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
    Latent(LatentShape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw ShapeError("latent data has " + std::to_string(data_.size()) + " values, shape " +
                             to_string(shape_) + " needs " + std::to_string(shape_.size()));
        }
    }

    const LatentShape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t channels() const { return shape_.channels; }
    std::size_t height() const { return shape_.height; }
    std::size_t width() const { return shape_.width; }

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_.height + y) * shape_.width + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_.height + y) * shape_.width + x];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    friend bool operator==(const Latent&, const Latent&) = default;

private:
    LatentShape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Latent& a, const Latent& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

// out = a * x + b * y
inline Latent axpby(double a, const Latent& x, double b, const Latent& y) {
    require_same_shape(x, y, "axpby");
    Latent out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

inline Latent scaled(const Latent& x, double a) {
    Latent out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i];
    return out;
}

inline double l2_norm(const Latent& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
    return std::sqrt(s);
}

// ||a - b|| / ||b||; falls back to the absolute distance when b is zero.
inline double relative_l2(const Latent& a, const Latent& b) {
    require_same_shape(a, b, "relative_l2");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        num += d * d;
        den += b[i] * b[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace magicstyle
