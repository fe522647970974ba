#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "somdepth/tensor.hpp"

namespace somdepth {

// Binary container: magic "SAMN", version u32, tensor count u32, then per
// tensor a u16 name length, the UTF-8 name, rank u8, dims as u32s, and the
// payload as little-endian 64-bit floats. Round-trips bitwise.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;

    bool has(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return true;
        }
        return false;
    }

    const Tensor& get(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return t;
        }
        throw std::invalid_argument("checkpoint: no tensor named '" + name + "'");
    }

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return &t;
        }
        return nullptr;
    }

    void add(const std::string& name, const Tensor& t) {
        if (has(name)) throw std::invalid_argument("checkpoint: duplicate name '" + name + "'");
        tensors.emplace_back(name, t);
    }

    double scalar(const std::string& name) const { return get(name).value(); }
};

inline constexpr char kCheckpointMagic[4] = {'S', 'A', 'M', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double d) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    ByteReader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(byte()); }

    std::uint16_t u16() {
        const auto a = static_cast<std::uint16_t>(byte());
        const auto b = static_cast<std::uint16_t>(byte());
        return static_cast<std::uint16_t>(a | (b << 8));
    }

    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }

    double f64() {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(byte()) << (8 * i);
        double d = 0.0;
        std::memcpy(&d, &bits, 8);
        return d;
    }

    std::string bytes(std::size_t n) {
        if (pos_ + n > data_.size()) fail();
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool exhausted() const { return pos_ == data_.size(); }

private:
    unsigned char byte() {
        if (pos_ >= data_.size()) fail();
        return static_cast<unsigned char>(data_[pos_++]);
    }
    [[noreturn]] void fail() const {
        throw std::runtime_error(path_ + ": truncated checkpoint");
    }

    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string buf;
    buf.append(kCheckpointMagic, 4);
    detail::put_u32(buf, kCheckpointVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > 0xffff) {
            throw std::invalid_argument("save_checkpoint: name too long: " + name);
        }
        detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
        buf.append(name);
        buf.push_back(static_cast<char>(4));  // rank
        for (int i = 0; i < 4; ++i) {
            detail::put_u32(buf, static_cast<std::uint32_t>(t.shape().dim(i)));
        }
        for (double v : t.values()) detail::put_f64(buf, v);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open for reading");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::ByteReader r(std::move(data), path);
    const std::string magic = r.bytes(4);
    if (magic != std::string(kCheckpointMagic, 4)) {
        throw std::runtime_error(path + ": bad magic (not a checkpoint)");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    Checkpoint ckpt;
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.bytes(name_len);
        if (!seen.insert(name).second) {
            throw std::runtime_error(path + ": duplicate tensor name '" + name + "'");
        }
        const std::uint8_t rank = r.u8();
        if (rank != 4) {
            throw std::runtime_error(path + ": unsupported tensor rank " + std::to_string(rank));
        }
        int dims[4];
        for (int d = 0; d < 4; ++d) dims[d] = static_cast<int>(r.u32());
        const Shape shape(dims[0], dims[1], dims[2], dims[3]);
        std::vector<double> values(static_cast<std::size_t>(shape.elements()));
        for (double& v : values) v = r.f64();
        ckpt.tensors.emplace_back(name, Tensor::from_values(shape, std::move(values)));
    }
    if (!r.exhausted()) {
        throw std::runtime_error(path + ": trailing bytes after last tensor");
    }
    return ckpt;
}

}  // namespace somdepth
