#pragma once

// Checkpoint container: named parameter tensors at full 64-bit precision
// plus a flat string-to-string config manifest, so a saved model carries
// the settings it was built with.
//
// Layout ("UMCK" container, all integers little endian): magic "UMCK", one
// version byte (1), uint32 config entry count, per entry uint32 key length
// + key bytes + uint32 value length + value bytes, uint32 tensor count, per
// tensor uint32 name length + name bytes + uint32 rows + uint32 cols +
// rows*cols float64 bit patterns in row-major order. Doubles round-trip
// exactly because their bit patterns are stored verbatim.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "unimse/common.hpp"
#include "unimse/tensor.hpp"

namespace unimse::checkpoint {

using numcore::Tensor;

struct Checkpoint {
    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, Tensor>> tensors; // file order preserved
};

namespace detail {

constexpr char kMagic[4] = {'U', 'M', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double d) {
    std::uint64_t v = 0;
    std::memcpy(&v, &d, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

// Cursor over the loaded file; every read checks the remaining length so a
// truncated file fails with a message instead of walking off the buffer.
struct Reader {
    const std::string& buf;
    const std::string& path;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (buf.size() - pos < n)
            fail("read_checkpoint: ", path, " truncated inside ", what, " (offset ", pos, ")");
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    double f64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        double d = 0.0;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string str(const char* what) {
        const std::uint32_t len = u32(what);
        if (len > 1'000'000u) fail("read_checkpoint: ", path, " has implausible ", what,
                                   " length ", len);
        need(len, what);
        std::string s = buf.substr(pos, len);
        pos += len;
        return s;
    }
};

} // namespace detail

inline void write_checkpoint(const std::string& path,
                             const std::vector<std::pair<std::string, Tensor>>& tensors,
                             const std::map<std::string, std::string>& config) {
    std::string buf;
    buf.append(detail::kMagic, 4);
    buf.push_back(static_cast<char>(detail::kVersion));
    detail::put_u32(buf, static_cast<std::uint32_t>(config.size()));
    for (const auto& [key, value] : config) {
        if (key.empty()) fail("write_checkpoint: empty config key for ", path);
        detail::put_str(buf, key);
        detail::put_str(buf, value);
    }
    detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.empty()) fail("write_checkpoint: unnamed tensor for ", path);
        if (!t.defined()) fail("write_checkpoint: tensor ", name, " is undefined");
        detail::put_str(buf, name);
        detail::put_u32(buf, static_cast<std::uint32_t>(t.rows()));
        detail::put_u32(buf, static_cast<std::uint32_t>(t.cols()));
        for (double v : t.data()) {
            if (!std::isfinite(v)) fail("write_checkpoint: tensor ", name, " has non-finite value");
            detail::put_f64(buf, v);
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("write_checkpoint: cannot open ", path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail("write_checkpoint: write failed for ", path);
}

// Loaded tensors are trainable leaves, ready to drop into a parameter store.
inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("read_checkpoint: cannot open ", path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 5) fail("read_checkpoint: ", path, " truncated before header");
    if (std::memcmp(buf.data(), detail::kMagic, 4) != 0)
        fail("read_checkpoint: ", path, " has wrong magic (not a checkpoint file)");
    const auto version = static_cast<std::uint8_t>(buf[4]);
    if (version != detail::kVersion)
        fail("read_checkpoint: ", path, " has unsupported version ", static_cast<int>(version));

    detail::Reader r{buf, path, 5};
    Checkpoint ck;
    const std::uint32_t n_config = r.u32("config count");
    for (std::uint32_t i = 0; i < n_config; ++i) {
        std::string key = r.str("config key");
        std::string value = r.str("config value");
        if (!ck.config.emplace(std::move(key), std::move(value)).second)
            fail("read_checkpoint: ", path, " repeats config key");
    }
    const std::uint32_t n_tensors = r.u32("tensor count");
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str("tensor name");
        if (!seen.insert(name).second)
            fail("read_checkpoint: ", path, " repeats tensor name ", name);
        const std::uint32_t rows = r.u32("tensor rows");
        const std::uint32_t cols = r.u32("tensor cols");
        if (rows == 0 || cols == 0 || rows > 10'000'000u || cols > 10'000'000u)
            fail("read_checkpoint: ", path, " tensor ", name, " has implausible shape ", rows,
                 "x", cols);
        std::vector<double> data(static_cast<std::size_t>(rows) * cols);
        for (auto& v : data) {
            v = r.f64("tensor values");
            if (!std::isfinite(v))
                fail("read_checkpoint: ", path, " tensor ", name, " has non-finite value");
        }
        ck.tensors.emplace_back(name, Tensor::leaf(static_cast<int>(rows), static_cast<int>(cols),
                                                   std::move(data), true, name));
    }
    if (r.pos != buf.size())
        fail("read_checkpoint: ", path, " has ", buf.size() - r.pos, " trailing byte(s)");
    return ck;
}

} // namespace unimse::checkpoint
