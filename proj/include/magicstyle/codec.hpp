#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "magicstyle/errors.hpp"
#include "magicstyle/latent.hpp"

namespace magicstyle {

// height x width x 3, interleaved RGB, values in [0, 1].
class ImageBuffer {
public:
    ImageBuffer() = default;
    ImageBuffer(std::size_t height, std::size_t width, double fill = 0.0)
        : height_(height), width_(width), pixels_(height * width * 3, fill) {}

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return pixels_.size(); }

    double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels_[(y * width_ + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels_[(y * width_ + x) * 3 + c]; }
    double& operator[](std::size_t i) { return pixels_[i]; }
    double operator[](std::size_t i) const { return pixels_[i]; }

    const std::vector<double>& values() const { return pixels_; }

    bool same_shape(const ImageBuffer& o) const { return height_ == o.height_ && width_ == o.width_; }

    friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> pixels_;
};

// Image <-> latent transform standing in for the autoencoder.
class Codec {
public:
    virtual ~Codec() = default;
    virtual Latent encode(const ImageBuffer& image) const = 0;
    virtual ImageBuffer decode(const Latent& latent) const = 0;
    virtual LatentShape latent_shape_for(std::size_t height, std::size_t width) const = 0;
    virtual double latent_scale() const { return 1.0; }
};

// Lossless space-to-depth: each p x p pixel block becomes 3*p*p channels at
// one latent position. Channel index is (c * p + dy) * p + dx.
class SpaceToDepthCodec final : public Codec {
public:
    explicit SpaceToDepthCodec(std::size_t factor = 8) : p_(factor) {
        if (p_ == 0) throw ParameterError("space-to-depth factor must be positive");
    }

    std::size_t factor() const { return p_; }

    LatentShape latent_shape_for(std::size_t height, std::size_t width) const override {
        if (height == 0 || width == 0 || height % p_ != 0 || width % p_ != 0) {
            throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                             " is not divisible by codec factor " + std::to_string(p_));
        }
        return {3 * p_ * p_, height / p_, width / p_};
    }

    Latent encode(const ImageBuffer& image) const override {
        Latent z(latent_shape_for(image.height(), image.width()));
        for (std::size_t y = 0; y < image.height(); ++y)
            for (std::size_t x = 0; x < image.width(); ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    z.at(channel(c, y % p_, x % p_), y / p_, x / p_) = image.at(y, x, c);
        return z;
    }

    // Values are clamped to [0, 1]; encode() output round-trips untouched.
    ImageBuffer decode(const Latent& z) const override {
        if (z.channels() != 3 * p_ * p_) {
            throw ShapeError("latent has " + std::to_string(z.channels()) + " channels, codec expects " +
                             std::to_string(3 * p_ * p_));
        }
        ImageBuffer image(z.height() * p_, z.width() * p_);
        for (std::size_t y = 0; y < image.height(); ++y)
            for (std::size_t x = 0; x < image.width(); ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    image.at(y, x, c) = std::clamp(z.at(channel(c, y % p_, x % p_), y / p_, x / p_), 0.0, 1.0);
        return image;
    }

private:
    std::size_t channel(std::size_t c, std::size_t dy, std::size_t dx) const { return (c * p_ + dy) * p_ + dx; }

    std::size_t p_;
};

// Largest centred square crop followed by a bilinear resize to size x size.
inline ImageBuffer center_crop_resize(const ImageBuffer& src, std::size_t size) {
    if (src.height() == 0 || src.width() == 0) throw ShapeError("empty image");
    if (size == 0) throw ParameterError("target size must be positive");
    const std::size_t side = std::min(src.height(), src.width());
    const std::size_t y0 = (src.height() - side) / 2;
    const std::size_t x0 = (src.width() - side) / 2;
    if (side == size) {
        ImageBuffer out(size, size);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y0 + y, x0 + x, c);
        return out;
    }
    ImageBuffer out(size, size);
    const double scale = static_cast<double>(side) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        const double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
        const auto iy = static_cast<std::size_t>(sy);
        const std::size_t iy1 = std::min(iy + 1, side - 1);
        const double fy = sy - static_cast<double>(iy);
        for (std::size_t x = 0; x < size; ++x) {
            const double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
            const auto ix = static_cast<std::size_t>(sx);
            const std::size_t ix1 = std::min(ix + 1, side - 1);
            const double fx = sx - static_cast<double>(ix);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1 - fx) * src.at(y0 + iy, x0 + ix, c) + fx * src.at(y0 + iy, x0 + ix1, c);
                const double bot = (1 - fx) * src.at(y0 + iy1, x0 + ix, c) + fx * src.at(y0 + iy1, x0 + ix1, c);
                out.at(y, x, c) = (1 - fy) * top + fy * bot;
            }
        }
    }
    return out;
}

}  // namespace magicstyle
