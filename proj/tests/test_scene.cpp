#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "somdepth/scene.hpp"
#include "test_util.hpp"

using namespace somdepth;
using testutil::max_abs_diff;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("somdepth_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(GenerateScene, DeterministicPerFamilySeed) {
    for (SceneFamily f : kAllFamilies) {
        SceneSample a = generate_scene(f, 42, 32, 64);
        SceneSample b = generate_scene(f, 42, 32, 64);
        EXPECT_EQ(max_abs_diff(a.rgb, b.rgb), 0.0) << family_name(f);
        EXPECT_EQ(max_abs_diff(a.depth, b.depth), 0.0) << family_name(f);
        SceneSample c = generate_scene(f, 43, 32, 64);
        EXPECT_GT(max_abs_diff(a.depth, c.depth) + max_abs_diff(a.rgb, c.rgb), 1e-9)
            << family_name(f);
    }
}

TEST(GenerateScene, RangesAndFiniteness) {
    for (SceneFamily f : kAllFamilies) {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            SceneSample s = generate_scene(f, seed, 64, 64);
            EXPECT_TRUE(s.rgb.all_finite());
            EXPECT_TRUE(s.depth.all_finite());
            for (double v : s.rgb.values()) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
            for (double v : s.depth.values()) {
                EXPECT_GE(v, kDepthMin);
                EXPECT_LE(v, kDepthMax);
            }
        }
    }
}

TEST(GenerateScene, RejectsIndivisibleDims) {
    EXPECT_THROW(generate_scene(SceneFamily::kBoxes, 1, 48, 64), std::invalid_argument);
    EXPECT_THROW(generate_scene(SceneFamily::kBoxes, 1, 64, 63), std::invalid_argument);
}

TEST(GenerateScene, CorridorDepthMonotoneTowardVanishing) {
    SceneSample s = generate_scene(SceneFamily::kCorridor, 7, 64, 64);
    const int W = 64;
    for (int h : {8, 32, 55}) {
        for (int w = 0; w + 1 <= W / 2 - 1; ++w) {
            EXPECT_GE(s.depth.at(0, 0, h, w + 1), s.depth.at(0, 0, h, w) - 1e-12);
        }
        for (int w = W - 1; w - 1 >= W / 2; --w) {
            EXPECT_GE(s.depth.at(0, 0, h, w - 1), s.depth.at(0, 0, h, w) - 1e-12);
        }
    }
}

TEST(GenerateScene, FacadeDepthMirrorSymmetric) {
    for (std::uint64_t seed : {3u, 11u, 19u}) {
        SceneSample s = generate_scene(SceneFamily::kFacade, seed, 64, 64);
        double worst = 0.0;
        for (int h = 0; h < 64; ++h) {
            for (int w = 0; w < 32; ++w) {
                worst = std::max(worst,
                                 std::fabs(s.depth.at(0, 0, h, w) - s.depth.at(0, 0, h, 63 - w)));
            }
        }
        EXPECT_LT(worst, 1e-9);
    }
}

TEST(GenerateScene, StairsDescendTopToBottom) {
    SceneSample s = generate_scene(SceneFamily::kStairs, 5, 64, 64);
    for (int w : {5, 31, 60}) {
        for (int h = 0; h + 1 < 64; ++h) {
            EXPECT_GE(s.depth.at(0, 0, h, w), s.depth.at(0, 0, h + 1, w) - 1e-12);
        }
    }
    // piecewise constant bands: few distinct values
    std::set<double> distinct;
    for (int h = 0; h < 64; ++h) distinct.insert(s.depth.at(0, 0, h, 10));
    EXPECT_LE(distinct.size(), 8u);
    EXPECT_GE(distinct.size(), 4u);
}

TEST(Augment, FlipIsInvolution) {
    SceneSample s = generate_scene(SceneFamily::kBoxes, 9, 32, 32);
    SceneSample ff = hflip(hflip(s));
    EXPECT_EQ(max_abs_diff(ff.rgb, s.rgb), 0.0);
    EXPECT_EQ(max_abs_diff(ff.depth, s.depth), 0.0);
}

TEST(Augment, ZoomDividesDepth) {
    SceneSample s = generate_scene(SceneFamily::kStairs, 13, 32, 32);
    std::fill(s.depth.values().begin(), s.depth.values().end(), 5.0);
    SceneSample z = zoom_scale(s, 1.25);
    for (double v : z.depth.values()) EXPECT_DOUBLE_EQ(v, 4.0);

    // interior law on a non-constant map: target pixel equals nearest source
    // sample divided by the factor
    SceneSample t = generate_scene(SceneFamily::kBoxes, 14, 32, 32);
    const double sf = 1.25;
    SceneSample zt = zoom_scale(t, sf);
    const double cx = 15.5, cy = 15.5;
    for (int h = 4; h < 28; ++h) {
        for (int w = 4; w < 28; ++w) {
            const int su = static_cast<int>(std::lround(cx + (w - cx) / sf));
            const int sv = static_cast<int>(std::lround(cy + (h - cy) / sf));
            EXPECT_DOUBLE_EQ(zt.depth.at(0, 0, h, w), t.depth.at(0, 0, sv, su) / sf);
        }
    }
}

TEST(Augment, JitterLeavesDepthUntouched) {
    SceneSample s = generate_scene(SceneFamily::kFacade, 17, 32, 32);
    AugmentConfig cfg;
    cfg.crop_frac_max = 0.0;
    cfg.scale_min = cfg.scale_max = 1.0;
    cfg.flip_prob = 0.0;
    cfg.rotate_deg_max = 0.0;
    Rng rng(99);
    SceneSample a = augment(s, cfg, rng);
    EXPECT_EQ(max_abs_diff(a.depth, s.depth), 0.0);
    EXPECT_GT(max_abs_diff(a.rgb, s.rgb), 0.0);  // jitter did something
}

TEST(Augment, MarkerStaysColocated) {
    // plant a bright marker in both maps and check the geometric ops move
    // them identically (nearest interpolation for both channels)
    SceneSample s;
    s.rgb = Tensor::zeros(Shape(1, 3, 32, 32));
    s.depth = Tensor::full(Shape(1, 1, 32, 32), 1.0);
    s.rgb.at(0, 0, 20, 9) = 1.0;
    s.depth.at(0, 0, 20, 9) = 9.0;

    const auto locate_rgb = [](const Tensor& t) {
        int best_h = -1, best_w = -1;
        double best = -1;
        for (int h = 0; h < 32; ++h) {
            for (int w = 0; w < 32; ++w) {
                if (t.at(0, 0, h, w) > best) {
                    best = t.at(0, 0, h, w);
                    best_h = h;
                    best_w = w;
                }
            }
        }
        return std::pair<int, int>{best_h, best_w};
    };
    const auto locate_depth = [](const Tensor& t) {
        int best_h = -1, best_w = -1;
        double best = -1;
        for (int h = 0; h < 32; ++h) {
            for (int w = 0; w < 32; ++w) {
                if (t.at(0, 0, h, w) > best) {
                    best = t.at(0, 0, h, w);
                    best_h = h;
                    best_w = w;
                }
            }
        }
        return std::pair<int, int>{best_h, best_w};
    };

    SceneSample r = rotate(s, 8.0, Interp::kNearest);
    EXPECT_EQ(locate_rgb(r.rgb), locate_depth(r.depth));
    SceneSample fl = hflip(s);
    EXPECT_EQ(locate_rgb(fl.rgb), locate_depth(fl.depth));
    EXPECT_EQ(locate_depth(fl.depth), (std::pair<int, int>{20, 22}));
    SceneSample cr = crop_resize(s, 2.0, 1.0, 28.0, 29.0);
    EXPECT_EQ(locate_rgb(cr.rgb), locate_depth(cr.depth));
}

TEST(Augment, DeterministicGivenRngState) {
    SceneSample s = generate_scene(SceneFamily::kCorridor, 21, 32, 32);
    AugmentConfig cfg;
    Rng r1(7), r2(7);
    SceneSample a = augment(s, cfg, r1);
    SceneSample b = augment(s, cfg, r2);
    EXPECT_EQ(max_abs_diff(a.rgb, b.rgb), 0.0);
    EXPECT_EQ(max_abs_diff(a.depth, b.depth), 0.0);
}

TEST(Augment, OutputsStayInRange) {
    AugmentConfig cfg;
    Rng rng(31);
    for (SceneFamily f : kAllFamilies) {
        SceneSample s = generate_scene(f, 23, 32, 32);
        for (int it = 0; it < 5; ++it) {
            SceneSample a = augment(s, cfg, rng);
            for (double v : a.rgb.values()) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
            for (double v : a.depth.values()) {
                EXPECT_GE(v, kDepthMin);
                EXPECT_LE(v, kDepthMax);
            }
        }
    }
}

TEST(ImageIo, PfmHeaderExact) {
    const auto dir = temp_dir("pfm_header");
    const std::string path = (dir / "d.pfm").string();
    write_pfm(path, Tensor::full(Shape(1, 1, 48, 64), 1.0));
    std::ifstream in(path, std::ios::binary);
    std::string header(14, '\0');
    in.read(header.data(), 14);
    EXPECT_EQ(header, "Pf\n64 48\n-1.0\n");
}

TEST(ImageIo, PfmRoundTrip) {
    const auto dir = temp_dir("pfm_rt");
    const std::string path = (dir / "d.pfm").string();

    Tensor constant = Tensor::full(Shape(1, 1, 4, 6), 2.5);
    write_pfm(path, constant);
    Tensor back = read_pfm(path);
    EXPECT_EQ(max_abs_diff(back, constant), 0.0);  // 2.5 exact in float32

    Rng rng(3);
    Tensor random = testutil::random_tensor(Shape(1, 1, 8, 5), rng, kDepthMin, kDepthMax);
    write_pfm(path, random);
    back = read_pfm(path);
    for (std::size_t i = 0; i < random.values().size(); ++i) {
        EXPECT_DOUBLE_EQ(back.values()[i], static_cast<double>(static_cast<float>(random.values()[i])));
    }
}

TEST(ImageIo, PpmQuantization) {
    const auto dir = temp_dir("ppm_q");
    const std::string path = (dir / "im.ppm").string();
    Tensor rgb = Tensor::full(Shape(1, 3, 2, 2), 0.5);
    write_ppm(path, rgb);
    Tensor back = read_ppm(path);
    for (double v : back.values()) EXPECT_DOUBLE_EQ(v, 128.0 / 255.0);

    Rng rng(5);
    Tensor rnd = testutil::random_tensor(Shape(1, 3, 6, 7), rng, 0.0, 1.0);
    write_ppm(path, rnd);
    back = read_ppm(path);
    for (std::size_t i = 0; i < rnd.values().size(); ++i) {
        EXPECT_LE(std::fabs(back.values()[i] - rnd.values()[i]), 0.5 / 255.0 + 1e-12);
    }
}

TEST(ImageIo, DistinctDiagnostics) {
    const auto dir = temp_dir("io_err");

    const std::string bad_magic = (dir / "bad_magic.pfm").string();
    std::ofstream(bad_magic, std::ios::binary) << "Xx\n2 2\n-1.0\n";
    try {
        read_pfm(bad_magic);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }

    const std::string malformed = (dir / "malformed.pfm").string();
    std::ofstream(malformed, std::ios::binary) << "Pf\nAB CD\n-1.0\n";
    try {
        read_pfm(malformed);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("header"), std::string::npos);
    }

    const std::string truncated = (dir / "trunc.pfm").string();
    {
        std::ofstream out(truncated, std::ios::binary);
        out << "Pf\n4 4\n-1.0\n";
        out << "only-a-few-bytes";
    }
    try {
        read_pfm(truncated);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }

    const std::string bad_ppm = (dir / "bad.ppm").string();
    std::ofstream(bad_ppm, std::ios::binary) << "P5\n2 2\n255\n";
    try {
        read_ppm(bad_ppm);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }

    const std::string trunc_ppm = (dir / "trunc.ppm").string();
    std::ofstream(trunc_ppm, std::ios::binary) << "P6\n8 8\n255\nxyz";
    try {
        read_ppm(trunc_ppm);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
}

TEST(MakeDataset, DeterministicBalancedDisjoint) {
    DatasetSplit a = make_dataset(8, 4, 7);
    DatasetSplit b = make_dataset(8, 4, 7);
    ASSERT_EQ(a.train.size(), 8u);
    ASSERT_EQ(a.val.size(), 4u);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].seed, b.train[i].seed);
        EXPECT_EQ(a.train[i].family, b.train[i].family);
    }

    std::set<std::uint64_t> train_seeds, val_seeds;
    for (const auto& e : a.train) train_seeds.insert(e.seed);
    for (const auto& e : a.val) val_seeds.insert(e.seed);
    EXPECT_EQ(train_seeds.size(), 8u);
    for (std::uint64_t s : val_seeds) EXPECT_EQ(train_seeds.count(s), 0u);

    std::array<int, 4> counts{0, 0, 0, 0};
    for (const auto& e : a.train) counts[static_cast<int>(e.family)]++;
    for (int c : counts) EXPECT_EQ(c, 2);

    // family balance within one for a non-multiple count
    DatasetSplit odd = make_dataset(10, 3, 1);
    counts = {0, 0, 0, 0};
    for (const auto& e : odd.train) counts[static_cast<int>(e.family)]++;
    const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
    EXPECT_LE(*mx - *mn, 1);
}

TEST(MakeDataset, WriteReadLoadRoundTrip) {
    const auto dir = temp_dir("dataset");
    DatasetSplit split = write_dataset(dir.string(), 4, 2, 11, 32, 32);
    ASSERT_EQ(split.train.size(), 4u);

    auto entries = read_manifest((dir / "train.manifest").string());
    ASSERT_EQ(entries.size(), 4u);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        EXPECT_EQ(entries[i].family, split.train[i].family);
        EXPECT_EQ(entries[i].seed, split.train[i].seed);
        EXPECT_EQ(entries[i].rgb_path, split.train[i].rgb_path);
    }

    SceneSample loaded = load_sample(entries[0]);
    SceneSample regenerated = generate_scene(entries[0].family, entries[0].seed, 32, 32);
    // depth survives to float32 precision, rgb to quantization
    for (std::size_t i = 0; i < loaded.depth.values().size(); ++i) {
        EXPECT_DOUBLE_EQ(loaded.depth.values()[i],
                         static_cast<double>(static_cast<float>(regenerated.depth.values()[i])));
    }
    EXPECT_LE(max_abs_diff(loaded.rgb, regenerated.rgb), 0.5 / 255.0 + 1e-12);
}
