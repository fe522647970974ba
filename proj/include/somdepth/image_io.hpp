#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "somdepth/tensor.hpp"

namespace somdepth {

// Binary PPM (P6, maxval 255) for rgb in [0,1] and PFM ("Pf", scale -1.0,
// little-endian 32-bit floats, rows bottom-to-top) for depth maps.

namespace detail {

inline void skip_ppm_whitespace(std::istream& in) {
    int c = in.peek();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
        } else {
            in.get();
        }
        c = in.peek();
    }
}

inline long read_header_int(std::istream& in, const std::string& path) {
    skip_ppm_whitespace(in);
    long v = 0;
    if (!(in >> v) || v <= 0) {
        throw std::runtime_error(path + ": malformed header (expected positive integer)");
    }
    return v;
}

}  // namespace detail

inline void write_ppm(const std::string& path, const Tensor& rgb) {
    const Shape& s = rgb.shape();
    if (s.batch() != 1 || s.channels() != 3) {
        throw std::invalid_argument("write_ppm: expected [1,3,H,W], got " + s.str());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    const int H = s.height(), W = s.width();
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(W) * 3);
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::min(std::max(rgb.at(0, c, h, w), 0.0), 1.0);
                row[w * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open for reading");
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P' || m1 != '6') {
        throw std::runtime_error(path + ": bad magic (expected P6)");
    }
    const long W = detail::read_header_int(in, path);
    const long H = detail::read_header_int(in, path);
    const long maxval = detail::read_header_int(in, path);
    if (maxval != 255) {
        throw std::runtime_error(path + ": malformed header (maxval must be 255, got " +
                                 std::to_string(maxval) + ")");
    }
    in.get();  // single whitespace byte after maxval
    std::vector<unsigned char> payload(static_cast<std::size_t>(W) * H * 3);
    in.read(reinterpret_cast<char*>(payload.data()), payload.size());
    if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
        throw std::runtime_error(path + ": truncated payload");
    }
    Tensor rgb = Tensor::zeros(Shape(1, 3, static_cast<int>(H), static_cast<int>(W)));
    for (long h = 0; h < H; ++h) {
        for (long w = 0; w < W; ++w) {
            for (int c = 0; c < 3; ++c) {
                rgb.at(0, c, static_cast<int>(h), static_cast<int>(w)) =
                    payload[(h * W + w) * 3 + c] / 255.0;
            }
        }
    }
    return rgb;
}

inline void write_pfm(const std::string& path, const Tensor& depth) {
    const Shape& s = depth.shape();
    if (s.batch() != 1 || s.channels() != 1) {
        throw std::invalid_argument("write_pfm: expected [1,1,H,W], got " + s.str());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    const int H = s.height(), W = s.width();
    out << "Pf\n" << W << " " << H << "\n-1.0\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(W) * 4);
    for (int h = H - 1; h >= 0; --h) {  // bottom-to-top
        for (int w = 0; w < W; ++w) {
            const float f = static_cast<float>(depth.at(0, 0, h, w));
            std::uint32_t bits = 0;
            static_assert(sizeof(bits) == sizeof(f));
            std::memcpy(&bits, &f, 4);
            row[w * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
            row[w * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
            row[w * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
            row[w * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

inline Tensor read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open for reading");
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P' || m1 != 'f') {
        if (m0 == 'P' && m1 == 'F') {
            throw std::runtime_error(path + ": bad magic (color PF unsupported, expected Pf)");
        }
        throw std::runtime_error(path + ": bad magic (expected Pf)");
    }
    const long W = detail::read_header_int(in, path);
    const long H = detail::read_header_int(in, path);
    detail::skip_ppm_whitespace(in);
    double scale = 0.0;
    if (!(in >> scale) || scale == 0.0) {
        throw std::runtime_error(path + ": malformed header (bad scale)");
    }
    if (scale > 0.0) {
        throw std::runtime_error(path + ": big-endian PFM unsupported");
    }
    in.get();  // newline after scale
    std::vector<unsigned char> payload(static_cast<std::size_t>(W) * H * 4);
    in.read(reinterpret_cast<char*>(payload.data()), payload.size());
    if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
        throw std::runtime_error(path + ": truncated payload");
    }
    Tensor depth = Tensor::zeros(Shape(1, 1, static_cast<int>(H), static_cast<int>(W)));
    const double unit = -scale;  // magnitude of the scale is a unit factor
    std::size_t idx = 0;
    for (long h = H - 1; h >= 0; --h) {
        for (long w = 0; w < W; ++w) {
            const std::uint32_t bits = static_cast<std::uint32_t>(payload[idx]) |
                                       (static_cast<std::uint32_t>(payload[idx + 1]) << 8) |
                                       (static_cast<std::uint32_t>(payload[idx + 2]) << 16) |
                                       (static_cast<std::uint32_t>(payload[idx + 3]) << 24);
            idx += 4;
            float f = 0.0f;
            std::memcpy(&f, &bits, 4);
            depth.at(0, 0, static_cast<int>(h), static_cast<int>(w)) = unit * static_cast<double>(f);
        }
    }
    return depth;
}

}  // namespace somdepth
