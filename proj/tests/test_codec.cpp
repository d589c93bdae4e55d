#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "magicstyle/codec.hpp"
#include "magicstyle/png_io.hpp"
#include "test_util.hpp"

namespace magicstyle {
namespace {

ImageBuffer random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageBuffer im(h, w);
    for (std::size_t i = 0; i < im.size(); ++i) im[i] = u(rng);
    return im;
}

TEST(SpaceToDepth, FactorOneIsChannelFirst) {
    std::mt19937_64 rng(1);
    const ImageBuffer im = random_image(3, 5, rng);
    const Latent z = SpaceToDepthCodec(1).encode(im);
    ASSERT_EQ(z.shape(), (LatentShape{3, 3, 5}));
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z.at(c, y, x), im.at(y, x, c));
}

TEST(SpaceToDepth, FourByFourWithFactorTwo) {
    std::mt19937_64 rng(2);
    const SpaceToDepthCodec codec(2);
    const ImageBuffer im = random_image(4, 4, rng);
    const Latent z = codec.encode(im);
    ASSERT_EQ(z.shape(), (LatentShape{12, 2, 2}));
    // pixel (3, 2) channel 1 -> block (1, 1), offset (1, 0) -> channel (1*2+1)*2+0 = 6
    EXPECT_EQ(z.at(6, 1, 1), im.at(3, 2, 1));
    EXPECT_EQ(codec.decode(z), im);
}

TEST(SpaceToDepth, BijectionBothWays) {
    std::mt19937_64 rng(3);
    const SpaceToDepthCodec codec(8);
    const ImageBuffer im = random_image(64, 32, rng);
    EXPECT_EQ(codec.decode(codec.encode(im)), im);
    Latent z(codec.latent_shape_for(64, 32));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = u(rng);
    EXPECT_EQ(codec.encode(codec.decode(z)), z);
}

TEST(SpaceToDepth, ShapeErrors) {
    const SpaceToDepthCodec codec(2);
    EXPECT_THROW(codec.encode(ImageBuffer(5, 5)), ShapeError);
    EXPECT_THROW(codec.decode(Latent({11, 2, 2})), ShapeError);
    EXPECT_THROW(SpaceToDepthCodec(0), ParameterError);
}

TEST(SpaceToDepth, ZeroLatentDecodesToBlack) {
    const ImageBuffer im = SpaceToDepthCodec(2).decode(Latent({12, 3, 3}));
    ASSERT_EQ(im.height(), 6u);
    for (double v : im.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpaceToDepth, DecodeClampsToUnitRange) {
    Latent z({3, 1, 1});
    z[0] = -0.3;
    z[1] = 0.4;
    z[2] = 1.7;
    const ImageBuffer im = SpaceToDepthCodec(1).decode(z);
    EXPECT_EQ(im.at(0, 0, 0), 0.0);
    EXPECT_EQ(im.at(0, 0, 1), 0.4);
    EXPECT_EQ(im.at(0, 0, 2), 1.0);
}

TEST(CenterCropResize, CropsThenScales) {
    ImageBuffer im(4, 6, 0.0);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 1; x < 5; ++x)
            for (std::size_t c = 0; c < 3; ++c) im.at(y, x, c) = 1.0;
    const ImageBuffer same = center_crop_resize(im, 4);
    for (double v : same.values()) EXPECT_EQ(v, 1.0);
    const ImageBuffer up = center_crop_resize(im, 8);
    EXPECT_EQ(up.height(), 8u);
    for (double v : up.values()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Png, EightBitRoundTripIsExact) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> b(0, 255);
    ImageBuffer im(7, 9);
    for (std::size_t i = 0; i < im.size(); ++i) im[i] = b(rng) / 255.0;
    const auto path = test::temp_path("rt.png");
    write_png(path, im);
    const ImageBuffer back = read_png(path);
    std::filesystem::remove(path);
    ASSERT_TRUE(back.same_shape(im));
    for (std::size_t i = 0; i < im.size(); ++i) EXPECT_EQ(back[i], im[i]);
}

TEST(Png, MissingFileIsAnIoError) { EXPECT_THROW(read_png(test::temp_path("missing.png")), IoError); }

}  // namespace
}  // namespace magicstyle
