#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "somdepth/image_io.hpp"
#include "somdepth/losses.hpp"
#include "somdepth/rng.hpp"
#include "somdepth/tensor.hpp"

namespace somdepth {

enum class SceneFamily { kCorridor, kBoxes, kStairs, kFacade };

inline constexpr std::array<SceneFamily, 4> kAllFamilies{
    SceneFamily::kCorridor, SceneFamily::kBoxes, SceneFamily::kStairs, SceneFamily::kFacade};

inline const char* family_name(SceneFamily f) {
    switch (f) {
        case SceneFamily::kCorridor: return "corridor";
        case SceneFamily::kBoxes: return "boxes";
        case SceneFamily::kStairs: return "stairs";
        case SceneFamily::kFacade: return "facade";
    }
    throw std::invalid_argument("family_name: bad enum value");
}

inline SceneFamily family_from_name(const std::string& name) {
    for (SceneFamily f : kAllFamilies) {
        if (name == family_name(f)) return f;
    }
    throw std::invalid_argument("unknown scene family '" + name + "'");
}

struct SceneSample {
    Tensor rgb;    // [1,3,H,W] in [0,1]
    Tensor depth;  // [1,1,H,W] in [kDepthMin, kDepthMax] meters
    SceneFamily family = SceneFamily::kCorridor;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Procedural generator. Fixed pinhole intrinsics: focal = W pixels,
// principal point centered. Depth is the z-coordinate of the first analytic
// surface hit along the pixel ray; rgb is Lambertian shading from the
// depth-derived normals times a family-specific repetitive albedo, plus
// seeded Gaussian noise (sigma 0.01).
// ---------------------------------------------------------------------------

inline SceneSample generate_scene(SceneFamily family, std::uint64_t seed, int H, int W) {
    if (H % 32 != 0 || W % 32 != 0) {
        throw std::invalid_argument("generate_scene: " + std::to_string(H) + "x" +
                                    std::to_string(W) + " not divisible by 32");
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(family)));
    const double f = static_cast<double>(W);
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;

    std::vector<double> depth(static_cast<std::size_t>(H) * W, 0.0);
    std::vector<double> albedo(static_cast<std::size_t>(H) * W * 3, 0.0);
    const auto set_albedo = [&](int h, int w, double r, double g, double b) {
        const std::size_t i = (static_cast<std::size_t>(h) * W + w) * 3;
        albedo[i] = r;
        albedo[i + 1] = g;
        albedo[i + 2] = b;
    };

    switch (family) {
        case SceneFamily::kCorridor: {
            const double halfw = rng.uniform(0.8, 1.6);
            const double zback = rng.uniform(6.0, 9.0);
            const double stripe_period = rng.uniform(0.6, 1.2);
            const double wall_tone = rng.uniform(0.45, 0.75);
            const double back_tone = rng.uniform(0.3, 0.6);
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    const double dx = (w - cx) / f;
                    const double zwall = std::fabs(dx) > 1e-9 ? halfw / std::fabs(dx) : zback;
                    const double z = std::min(zwall, zback);
                    depth[h * W + w] = z;
                    if (zwall < zback) {
                        // repetitive stripes along the corridor axis
                        const double phase = std::fmod(z, stripe_period) / stripe_period;
                        const double tone = phase < 0.5 ? wall_tone : wall_tone * 0.6;
                        if (dx < 0) {
                            set_albedo(h, w, tone, tone * 0.9, tone * 0.7);
                        } else {
                            set_albedo(h, w, tone * 0.7, tone * 0.9, tone);
                        }
                    } else {
                        set_albedo(h, w, back_tone, back_tone, back_tone * 1.1);
                    }
                }
            }
            break;
        }
        case SceneFamily::kBoxes: {
            const double zback = rng.uniform(7.0, 9.5);
            const int nbox = static_cast<int>(rng.uniform_int(3, 6));
            struct Box {
                double u0, u1, v0, v1, z, r, g, b;
            };
            std::vector<Box> boxes;
            for (int i = 0; i < nbox; ++i) {
                Box bx;
                const double cu = rng.uniform(0.15, 0.85) * W;
                const double cv = rng.uniform(0.2, 0.85) * H;
                const double hu = rng.uniform(0.06, 0.2) * W;
                const double hv = rng.uniform(0.06, 0.2) * H;
                bx.u0 = cu - hu;
                bx.u1 = cu + hu;
                bx.v0 = cv - hv;
                bx.v1 = cv + hv;
                bx.z = rng.uniform(1.5, 6.0);
                bx.r = rng.uniform(0.3, 0.9);
                bx.g = rng.uniform(0.3, 0.9);
                bx.b = rng.uniform(0.3, 0.9);
                boxes.push_back(bx);
            }
            const int checker = std::max(4, W / 8);
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    double z = zback;
                    const Box* hit = nullptr;
                    for (const Box& bx : boxes) {
                        if (w >= bx.u0 && w <= bx.u1 && h >= bx.v0 && h <= bx.v1 && bx.z < z) {
                            z = bx.z;
                            hit = &bx;
                        }
                    }
                    depth[h * W + w] = z;
                    if (hit != nullptr) {
                        set_albedo(h, w, hit->r, hit->g, hit->b);
                    } else {
                        const bool on = ((h / checker) + (w / checker)) % 2 == 0;
                        const double tone = on ? 0.55 : 0.4;
                        set_albedo(h, w, tone, tone, tone);
                    }
                }
            }
            break;
        }
        case SceneFamily::kStairs: {
            const int nsteps = static_cast<int>(rng.uniform_int(4, 8));
            const double znear = rng.uniform(1.5, 3.0);
            const double dz = rng.uniform(0.6, 1.1);
            const double tone_a = rng.uniform(0.5, 0.8);
            const double tone_b = rng.uniform(0.25, 0.45);
            const int ustripe = std::max(4, W / 10);
            for (int h = 0; h < H; ++h) {
                const int band = std::min(nsteps - 1, h * nsteps / H);
                const double z = znear + (nsteps - 1 - band) * dz;  // top rows farther
                for (int w = 0; w < W; ++w) {
                    depth[h * W + w] = z;
                    const double tone = band % 2 == 0 ? tone_a : tone_b;
                    const double edge = (w / ustripe) % 2 == 0 ? 1.0 : 0.85;
                    set_albedo(h, w, tone * edge, tone * 0.95 * edge, tone * 0.8 * edge);
                }
            }
            break;
        }
        case SceneFamily::kFacade: {
            const double zwall = rng.uniform(3.0, 6.0);
            const double recess = rng.uniform(0.3, 0.8);
            const int ncols = static_cast<int>(rng.uniform_int(2, 4));
            const int nrows = static_cast<int>(rng.uniform_int(2, 3));
            const double brick = rng.uniform(0.5, 0.8);
            const int vstripe = std::max(3, H / 12);
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    // window membership depends on |w - cx| only: exact mirror symmetry
                    const double sx = std::fabs(w - cx) / (W / 2.0);
                    const double sy = static_cast<double>(h) / H;
                    const double colpos = sx * ncols;
                    const double rowpos = sy * nrows;
                    const double cf = colpos - std::floor(colpos);
                    const double rf = rowpos - std::floor(rowpos);
                    const bool window = cf > 0.2 && cf < 0.65 && rf > 0.25 && rf < 0.7;
                    depth[h * W + w] = window ? zwall + recess : zwall;
                    if (window) {
                        set_albedo(h, w, 0.15, 0.18, 0.25);
                    } else {
                        const double band = (h / vstripe) % 2 == 0 ? 1.0 : 0.9;
                        set_albedo(h, w, brick * band, brick * 0.8 * band, brick * 0.65 * band);
                    }
                }
            }
            break;
        }
    }

    for (double& z : depth) z = std::min(std::max(z, kDepthMin), kDepthMax);

    // Lambertian shading from screen-space depth slopes
    const double lx = 0.4, ly = 0.35, lz = 0.85;
    const double ln = std::sqrt(lx * lx + ly * ly + lz * lz);
    const double gain = 4.0;
    SceneSample sample;
    sample.family = family;
    sample.seed = seed;
    sample.depth = Tensor::from_values(Shape(1, 1, H, W), depth);
    sample.rgb = Tensor::zeros(Shape(1, 3, H, W));
    const auto at = [&](int h, int w) {
        return depth[static_cast<std::size_t>(std::min(std::max(h, 0), H - 1)) * W +
                     std::min(std::max(w, 0), W - 1)];
    };
    std::vector<double> shade(static_cast<std::size_t>(H) * W);
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            const double dzdu = (at(h, w + 1) - at(h, w - 1)) / 2.0;
            const double dzdv = (at(h + 1, w) - at(h - 1, w)) / 2.0;
            const double nx = -gain * dzdu, ny = -gain * dzdv, nz = 1.0;
            const double nn = std::sqrt(nx * nx + ny * ny + nz * nz);
            const double lambert = std::max(0.0, (nx * lx + ny * ly + nz * lz) / (nn * ln));
            shade[h * W + w] = 0.25 + 0.75 * lambert;
        }
    }
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            for (int c = 0; c < 3; ++c) {
                const double v = albedo[(static_cast<std::size_t>(h) * W + w) * 3 + c] *
                                     shade[h * W + w] +
                                 0.01 * rng.normal();
                sample.rgb.at(0, c, h, w) = std::min(std::max(v, 0.0), 1.0);
            }
        }
    }
    return sample;
}

// ---------------------------------------------------------------------------
// Augmentation. Geometric operations share one inverse mapping applied to
// rgb (bilinear, edge-clamped) and depth (nearest-valid); appearance jitter
// touches rgb only.
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double crop_frac_max = 0.10;
    double scale_min = 0.75;
    double scale_max = 1.25;
    double flip_prob = 0.5;
    double rotate_deg_max = 10.0;
    double brightness_delta = 10.0 / 255.0;
    double contrast_min = 0.5;
    double contrast_max = 2.0;
    double sat_hue_delta = 20.0 / 255.0;

    void validate() const {
        if (crop_frac_max < 0 || crop_frac_max >= 1) {
            throw std::invalid_argument("AugmentConfig: bad crop_frac_max");
        }
        if (scale_min > scale_max || scale_min <= 0) {
            throw std::invalid_argument("AugmentConfig: bad scale range");
        }
        if (contrast_min > contrast_max || contrast_min <= 0) {
            throw std::invalid_argument("AugmentConfig: bad contrast range");
        }
    }
};

enum class Interp { kBilinear, kNearest };

namespace detail {

// inverse-mapped warp with edge-clamped sampling
template <typename MapFn>
Tensor warp(const Tensor& img, MapFn map, Interp interp) {
    const Shape& s = img.shape();
    const int C = s.channels(), H = s.height(), W = s.width();
    Tensor out = Tensor::zeros(s);
    const auto cl = [](double v, int n) {
        return std::min(std::max(v, 0.0), static_cast<double>(n - 1));
    };
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            auto [su, sv] = map(static_cast<double>(w), static_cast<double>(h));
            su = cl(su, W);
            sv = cl(sv, H);
            if (interp == Interp::kNearest) {
                const int iu = static_cast<int>(std::lround(su));
                const int iv = static_cast<int>(std::lround(sv));
                for (int c = 0; c < C; ++c) out.at(0, c, h, w) = img.at(0, c, iv, iu);
            } else {
                const int u0 = static_cast<int>(std::floor(su));
                const int v0 = static_cast<int>(std::floor(sv));
                const int u1 = std::min(u0 + 1, W - 1);
                const int v1 = std::min(v0 + 1, H - 1);
                const double fu = su - u0, fv = sv - v0;
                for (int c = 0; c < C; ++c) {
                    const double a = img.at(0, c, v0, u0) * (1 - fu) + img.at(0, c, v0, u1) * fu;
                    const double b = img.at(0, c, v1, u0) * (1 - fu) + img.at(0, c, v1, u1) * fu;
                    out.at(0, c, h, w) = a * (1 - fv) + b * fv;
                }
            }
        }
    }
    return out;
}

inline void clamp_depth(Tensor& depth) {
    for (double& v : depth.values()) v = std::min(std::max(v, kDepthMin), kDepthMax);
}

}  // namespace detail

// Crop a window and resize back to the full frame. u0/v0 are the window
// origin, cw/ch its size, all in pixels.
inline SceneSample crop_resize(const SceneSample& s, double u0, double v0, double cw, double ch) {
    const int H = s.depth.shape().height(), W = s.depth.shape().width();
    const auto map = [&](double u, double v) {
        return std::pair<double, double>{u0 + (u + 0.5) * cw / W - 0.5,
                                         v0 + (v + 0.5) * ch / H - 0.5};
    };
    SceneSample out = s;
    out.rgb = detail::warp(s.rgb, map, Interp::kBilinear);
    out.depth = detail::warp(s.depth, map, Interp::kNearest);
    detail::clamp_depth(out.depth);
    return out;
}

// Zoom about the image center by factor sf; depth divides by sf (moving the
// camera closer is equivalent to enlarging the image).
inline SceneSample zoom_scale(const SceneSample& s, double sf) {
    const int H = s.depth.shape().height(), W = s.depth.shape().width();
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    const auto map = [&](double u, double v) {
        return std::pair<double, double>{cx + (u - cx) / sf, cy + (v - cy) / sf};
    };
    SceneSample out = s;
    out.rgb = detail::warp(s.rgb, map, Interp::kBilinear);
    out.depth = detail::warp(s.depth, map, Interp::kNearest);
    for (double& v : out.depth.values()) v /= sf;
    detail::clamp_depth(out.depth);
    return out;
}

// Exact horizontal mirror (pure index remap, an involution).
inline SceneSample hflip(const SceneSample& s) {
    SceneSample out = s;
    out.rgb = Tensor::zeros(s.rgb.shape());
    out.depth = Tensor::zeros(s.depth.shape());
    const int H = s.depth.shape().height(), W = s.depth.shape().width();
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            for (int c = 0; c < 3; ++c) out.rgb.at(0, c, h, w) = s.rgb.at(0, c, h, W - 1 - w);
            out.depth.at(0, 0, h, w) = s.depth.at(0, 0, h, W - 1 - w);
        }
    }
    return out;
}

inline SceneSample rotate(const SceneSample& s, double degrees,
                          Interp rgb_interp = Interp::kBilinear) {
    const int H = s.depth.shape().height(), W = s.depth.shape().width();
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    const double th = degrees * M_PI / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    const auto map = [&](double u, double v) {
        const double du = u - cx, dv = v - cy;
        return std::pair<double, double>{cx + c * du + sn * dv, cy - sn * du + c * dv};
    };
    SceneSample out = s;
    out.rgb = detail::warp(s.rgb, map, rgb_interp);
    out.depth = detail::warp(s.depth, map, Interp::kNearest);
    detail::clamp_depth(out.depth);
    return out;
}

// brightness shift, contrast about the image mean, saturation about the
// per-pixel gray, hue as a rotation of the color vector around the gray axis
inline Tensor color_jitter(const Tensor& rgb, double brightness, double contrast,
                           double saturation, double hue) {
    Tensor out = rgb.clone();
    auto& v = out.values();
    for (double& x : v) x += brightness;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double& x : v) x = (x - mean) * contrast + mean;

    const int H = rgb.shape().height(), W = rgb.shape().width();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const double phi = hue * 2.0 * M_PI;
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    // Rodrigues rotation about (1,1,1)/sqrt(3)
    const double a = cphi + (1.0 - cphi) / 3.0;
    const double b = (1.0 - cphi) / 3.0 - sphi / std::sqrt(3.0);
    const double d = (1.0 - cphi) / 3.0 + sphi / std::sqrt(3.0);
    for (std::size_t i = 0; i < plane; ++i) {
        double r = v[i], g = v[plane + i], bl = v[2 * plane + i];
        const double gray = (r + g + bl) / 3.0;
        r = gray + (1.0 + saturation) * (r - gray);
        g = gray + (1.0 + saturation) * (g - gray);
        bl = gray + (1.0 + saturation) * (bl - gray);
        const double nr = a * r + b * g + d * bl;
        const double ng = d * r + a * g + b * bl;
        const double nb = b * r + d * g + a * bl;
        v[i] = nr;
        v[plane + i] = ng;
        v[2 * plane + i] = nb;
    }
    for (double& x : v) x = std::min(std::max(x, 0.0), 1.0);
    return out;
}

namespace detail {

inline SceneSample augment_impl(const SceneSample& s, const AugmentConfig& cfg, Rng& rng,
                                bool with_jitter) {
    cfg.validate();
    const int H = s.depth.shape().height(), W = s.depth.shape().width();

    const double fx = rng.uniform(0.0, cfg.crop_frac_max);
    const double fy = rng.uniform(0.0, cfg.crop_frac_max);
    const double ou = rng.uniform(0.0, 1.0);
    const double ov = rng.uniform(0.0, 1.0);
    const double sf = rng.uniform(cfg.scale_min, cfg.scale_max);
    const bool flip = rng.bernoulli(cfg.flip_prob);
    const double deg = rng.uniform(-cfg.rotate_deg_max, cfg.rotate_deg_max);

    SceneSample out = crop_resize(s, ou * fx * W, ov * fy * H, (1.0 - fx) * W, (1.0 - fy) * H);
    if (sf != 1.0) out = zoom_scale(out, sf);
    if (flip) out = hflip(out);
    if (deg != 0.0) out = rotate(out, deg);
    if (with_jitter) {
        const double brightness = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
        const double contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
        const double saturation = rng.uniform(-cfg.sat_hue_delta, cfg.sat_hue_delta);
        const double hue = rng.uniform(-cfg.sat_hue_delta, cfg.sat_hue_delta);
        out.rgb = color_jitter(out.rgb, brightness, contrast, saturation, hue);
    }
    return out;
}

}  // namespace detail

// Full pipeline: crop -> scale -> flip -> rotate -> color jitter. Geometric
// parameters are applied identically to rgb and depth; jitter leaves depth
// untouched. Draw order from the rng is fixed.
inline SceneSample augment(const SceneSample& s, const AugmentConfig& cfg, Rng& rng) {
    return detail::augment_impl(s, cfg, rng, true);
}

// Geometric-only variant for the depth-only training stage.
inline SceneSample augment_geometric(const SceneSample& s, const AugmentConfig& cfg, Rng& rng) {
    return detail::augment_impl(s, cfg, rng, false);
}

// ---------------------------------------------------------------------------
// Dataset assembly and on-disk manifests
// ---------------------------------------------------------------------------

struct ManifestEntry {
    SceneFamily family = SceneFamily::kCorridor;
    std::uint64_t seed = 0;
    std::string rgb_path;
    std::string depth_path;
};

struct DatasetSplit {
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> val;
};

// Deterministic assignment: families round-robin (balanced within one), train
// seeds even offsets from the dataset seed, validation seeds odd offsets, so
// the two seed sets are disjoint by parity.
inline DatasetSplit make_dataset(int n_train, int n_val, std::uint64_t seed) {
    if (n_train < 1 || n_val < 1) {
        throw std::invalid_argument("make_dataset: splits must be non-empty");
    }
    DatasetSplit split;
    for (int i = 0; i < n_train; ++i) {
        ManifestEntry e;
        e.family = kAllFamilies[i % 4];
        e.seed = seed + 2ULL * static_cast<std::uint64_t>(i);
        split.train.push_back(e);
    }
    for (int j = 0; j < n_val; ++j) {
        ManifestEntry e;
        e.family = kAllFamilies[j % 4];
        e.seed = seed + 2ULL * static_cast<std::uint64_t>(n_train + j) + 1ULL;
        split.val.push_back(e);
    }
    return split;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    for (const ManifestEntry& e : entries) {
        out << family_name(e.family) << "," << e.seed << "," << e.rgb_path << "," << e.depth_path
            << "\n";
    }
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open for reading");
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string fam, seed_s, rgb_p, depth_p;
        if (!std::getline(ls, fam, ',') || !std::getline(ls, seed_s, ',') ||
            !std::getline(ls, rgb_p, ',') || !std::getline(ls, depth_p)) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed manifest line");
        }
        ManifestEntry e;
        e.family = family_from_name(fam);
        e.seed = std::stoull(seed_s);
        e.rgb_path = rgb_p;
        e.depth_path = depth_p;
        entries.push_back(e);
    }
    return entries;
}

// Generates every sample and writes PPM/PFM pairs plus train/val manifests
// under dir. Paths in the returned split are absolute.
inline DatasetSplit write_dataset(const std::string& dir, int n_train, int n_val,
                                  std::uint64_t seed, int H, int W) {
    namespace fs = std::filesystem;
    DatasetSplit split = make_dataset(n_train, n_val, seed);
    fs::create_directories(fs::path(dir) / "train");
    fs::create_directories(fs::path(dir) / "val");
    const auto emit = [&](std::vector<ManifestEntry>& entries, const std::string& sub) {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            ManifestEntry& e = entries[i];
            SceneSample s = generate_scene(e.family, e.seed, H, W);
            std::ostringstream base;
            base << sub << "_" << i << "_" << family_name(e.family);
            e.rgb_path = (fs::path(dir) / sub / (base.str() + ".ppm")).string();
            e.depth_path = (fs::path(dir) / sub / (base.str() + ".pfm")).string();
            write_ppm(e.rgb_path, s.rgb);
            write_pfm(e.depth_path, s.depth);
        }
        write_manifest((fs::path(dir) / (sub + ".manifest")).string(), entries);
    };
    emit(split.train, "train");
    emit(split.val, "val");
    return split;
}

inline SceneSample load_sample(const ManifestEntry& e) {
    SceneSample s;
    s.family = e.family;
    s.seed = e.seed;
    s.rgb = read_ppm(e.rgb_path);
    s.depth = read_pfm(e.depth_path);
    return s;
}

}  // namespace somdepth
