#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include <png.h>

#include "magicstyle/codec.hpp"
#include "magicstyle/errors.hpp"

namespace magicstyle {

inline ImageBuffer read_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    ImageBuffer out(img.height, img.width);
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / 255.0;
    return out;
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_png(const std::filesystem::path& path, const ImageBuffer& image) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> raw(image.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(image[i]);
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, raw.data(), 0, nullptr)) {
        throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
    }
}

}  // namespace magicstyle
