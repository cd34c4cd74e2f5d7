#include <gtest/gtest.h>

#include <png.h>

#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "mmnet/dataio.hpp"
#include "mmnet/error.hpp"
#include "test_util.hpp"

using namespace mmnet;
namespace fs = std::filesystem;
using testutil::TempDir;

namespace {

GrayImage gradient_image(int w, int h)
{
    GrayImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<std::uint8_t>((3 * x + 7 * y) % 256);
    return img;
}

SequenceRecord tiny_sequence()
{
    SequenceRecord s;
    s.name = "tiny";
    s.class_id = 3;
    s.domain = Domain::grayscale;
    for (int i = 0; i < 3; ++i) {
        s.frames.push_back(gradient_image(20, 16));
        s.boxes.push_back({1.5 + i, 2.25, 5.125, 4.0 / 3.0});
    }
    return s;
}

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream out(p);
    out << text;
}

} // namespace

TEST(Numbers, ShortestRoundTrip)
{
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0, 0.0, 1e22})
        EXPECT_EQ(parse_double(format_double(v)), v) << format_double(v);
    EXPECT_EQ(format_double(0.5), "0.5");
    EXPECT_THROW(parse_double("1.5x"), FormatError);
    EXPECT_THROW(parse_double(""), FormatError);
}

TEST(Images, PgmRoundTrip)
{
    TempDir dir("pgm");
    const auto img = gradient_image(13, 9);
    write_pgm(img, dir.path / "a.pgm");
    EXPECT_EQ(read_image(dir.path / "a.pgm"), img);
}

TEST(Images, TruncatedPgmIsAFormatError)
{
    TempDir dir("pgm-bad");
    write_text(dir.path / "bad.pgm", "P5\n4 4\n255\nabc");
    EXPECT_THROW(read_image(dir.path / "bad.pgm"), FormatError);
    write_text(dir.path / "text.pgm", "P2\n1 1\n255\n0\n");
    EXPECT_THROW(read_image(dir.path / "text.pgm"), FormatError);
    EXPECT_THROW(read_image(dir.path / "missing.pgm"), IoError);
}

TEST(Images, RgbPngIsConvertedToLuminance)
{
    TempDir dir("png");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = 2;
    image.height = 1;
    image.format = PNG_FORMAT_RGB;
    const std::uint8_t rgb[6] = {255, 0, 0, 10, 200, 30};
    const auto file = (dir.path / "c.png").string();
    ASSERT_TRUE(png_image_write_to_file(&image, file.c_str(), 0, rgb, 0, nullptr));
    const auto img = read_image(file);
    ASSERT_EQ(img.width, 2);
    EXPECT_EQ(img.at(0, 0), static_cast<int>(std::lround(0.299 * 255)));
    EXPECT_EQ(img.at(1, 0), static_cast<int>(std::lround(0.299 * 10 + 0.587 * 200 + 0.114 * 30)));
}

TEST(Sequence, SaveLoadRoundTrip)
{
    TempDir dir("seq");
    const auto s = tiny_sequence();
    save_sequence(s, dir.path / "tiny");
    EXPECT_TRUE(fs::exists(dir.path / "tiny" / "frames" / "00000001.pgm"));
    EXPECT_EQ(load_sequence(dir.path / "tiny"), s);
}

TEST(Sequence, MissingGroundTruthLineNamesTheLine)
{
    TempDir dir("seq-gt");
    save_sequence(tiny_sequence(), dir.path / "s");
    write_text(dir.path / "s" / "groundtruth.txt", "1,2,3,4\n1,2,3,4\n");
    try {
        load_sequence(dir.path / "s");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(Sequence, RejectsGapsAndUnknownMetaKeys)
{
    TempDir dir("seq-bad");
    save_sequence(tiny_sequence(), dir.path / "s");
    fs::rename(dir.path / "s" / "frames" / "00000002.pgm", dir.path / "s" / "frames" / "00000009.pgm");
    EXPECT_THROW(load_sequence(dir.path / "s"), FormatError);

    save_sequence(tiny_sequence(), dir.path / "t");
    write_text(dir.path / "t" / "meta.txt", "class_id=1\ncolor=red\n");
    EXPECT_THROW(load_sequence(dir.path / "t"), FormatError);
    EXPECT_THROW(load_sequence(dir.path / "none"), IoError);
}

TEST(Crop, AlignedCropCopiesPixels)
{
    const auto img = gradient_image(40, 30);
    // Side equal to output size and an integer corner: one sample per pixel.
    const auto t = crop_square(img, 5 + 8, 4 + 8, 16, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) EXPECT_FLOAT_EQ(t(0, 0, i, j) * 255.0f, img.at(5 + j, 4 + i));
}

TEST(Crop, OutsideTheFrameUsesTheMean)
{
    GrayImage img(10, 10, 100);
    img.at(0, 0) = 200;
    const auto t = crop_square(img, -50, -50, 16, 8);
    EXPECT_NEAR(t(0, 0, 3, 3) * 255.0, img.mean(), 1e-3);
    EXPECT_THROW(crop_square(img, 5, 5, 16, 4), InputError);
    EXPECT_THROW(crop_patch(img, Box{1, 1, 0, 3}, 0.5, 16), InputError);
}

TEST(Crop, ContextSide)
{
    EXPECT_DOUBLE_EQ(context_side({0, 0, 20, 20}, 0.5), 40.0);
    EXPECT_DOUBLE_EQ(context_side({0, 0, 10, 30}, 0.0), std::sqrt(300.0));
}

TEST(Pairs, JitterBecomesDisplacementInCells)
{
    SynthSpec spec;
    spec.frames = 10;
    const auto seq = synth_sequence(spec, 4);
    const auto p = make_pair(seq, 0, 5, 8, -16);
    EXPECT_EQ(p.exemplar.shape(), (Shape{1, 1, 127, 127}));
    EXPECT_EQ(p.search.shape(), (Shape{1, 1, 255, 255}));
    EXPECT_DOUBLE_EQ(p.disp_x, -1.0);
    EXPECT_DOUBLE_EQ(p.disp_y, 2.0);
    EXPECT_THROW(make_pair(seq, 0, 10, 0, 0), InputError);
}

TEST(Pairs, SamplingIsSeededAndRespectsTheGap)
{
    SynthSpec spec;
    spec.frames = 30;
    const std::vector<SequenceRecord> data{synth_sequence(spec, 1)};
    SamplerConfig cfg;
    cfg.max_gap = 3;
    Rng a(5), b(5);
    for (int i = 0; i < 5; ++i) {
        const auto p = sample_pair(data, a, cfg);
        const auto q = sample_pair(data, b, cfg);
        EXPECT_EQ(p.search, q.search);
        EXPECT_EQ(p.disp_x, q.disp_x);
        EXPECT_LE(std::abs(p.disp_x), 1.0);
    }
    EXPECT_THROW(sample_pair({}, a, cfg), InputError);
}

TEST(Pairs, MixedStreamFallsBackToTheNonEmptyDomain)
{
    SynthSpec spec;
    spec.frames = 5;
    spec.class_id = 4;
    const std::vector<SequenceRecord> tir{synth_sequence(spec, 2)}, none;
    Rng rng(1);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(sample_mixed(none, tir, 0.9, rng).class_id, 4);
    EXPECT_THROW(sample_mixed(none, none, 0.5, rng), InputError);

    MixedPairStream stream(&tir, &tir, 1.0, 3.0, 8);
    int first = 0;
    for (int i = 0; i < 4000; ++i) first += stream.next_domain() == 0;
    EXPECT_NEAR(first / 4000.0, 0.25, 0.03);
}

TEST(Synth, DeterministicAndWellFormed)
{
    SynthSpec spec;
    spec.frames = 40;
    spec.n_distractors = 3;
    spec.noise_std = 5;
    const auto a = synth_sequence(spec, 21);
    EXPECT_EQ(a, synth_sequence(spec, 21));
    EXPECT_NE(a.frames, synth_sequence(spec, 22).frames);
    ASSERT_EQ(a.frames.size(), 40u);
    for (const auto& b : a.boxes) {
        EXPECT_DOUBLE_EQ(b.w, spec.target_size);
        EXPECT_GE(b.cx(), 1.5 * spec.target_size - 1e-9);
        EXPECT_LE(b.cx(), spec.size - 1.5 * spec.target_size + 1e-9);
    }
    // Target interior is bright, far background is dark.
    const auto& b0 = a.boxes[0];
    EXPECT_GT(a.frames[0].at(static_cast<int>(b0.cx()), static_cast<int>(b0.cy())), 150);
    EXPECT_THROW(synth_sequence(SynthSpec{.frames = 1}, 1), InputError);
}

TEST(Synth, MotionReflectsIntoTheBand)
{
    Motion m;
    m.x0 = 90;
    m.vx = 5;
    m.y0 = 4;
    const auto [x, y] = motion_center(m, 4, 10, 100);
    EXPECT_DOUBLE_EQ(x, 90.0);  // 110 reflected at 100
    EXPECT_DOUBLE_EQ(y, 16.0);  // 4 reflected at 10
}

TEST(Synth, IouHelper)
{
    EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {1, 0, 2, 2}), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(box_iou({0, 0, 1, 1}, {5, 5, 1, 1}), 0.0);
}

TEST(Queue, PreservesOrderAcrossThreads)
{
    BoundedQueue<int> q(3);
    std::thread producer([&] {
        for (int i = 0; i < 100; ++i) q.push(i);
        q.close();
    });
    int expect = 0;
    while (auto v = q.pop()) {
        EXPECT_EQ(*v, expect++);
        EXPECT_LE(q.size(), 3u);
    }
    producer.join();
    EXPECT_EQ(expect, 100);
    EXPECT_FALSE(q.push(1));
}
