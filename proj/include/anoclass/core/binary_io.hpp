#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "anoclass/core/errors.hpp"

namespace anoclass::binio {

// Little-endian encoders independent of host byte order.

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw LoadError("cannot open for writing: " + path.string());
    }

    void magic(std::string_view m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }

    void u32(std::uint32_t v) {
        std::array<char, 4> b{};
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
        out_.write(b.data(), 4);
    }

    void u64(std::uint64_t v) {
        std::array<char, 8> b{};
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
        out_.write(b.data(), 8);
    }

    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

    template <typename T>
    void f32_array(std::span<const T> values) {
        std::vector<char> buf(values.size() * 4);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
            for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xFFu);
        }
        out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }

    void close() {
        out_.close();
        if (!out_) throw LoadError("write failed: " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw LoadError("cannot open: " + path.string());
    }

    void expect_magic(std::string_view m) {
        std::string got(m.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(m.size()));
        if (!in_ || got != m) throw LoadError("bad magic in " + path_.string() + " (expected " + std::string(m) + ")");
    }

    std::uint32_t u32() {
        std::array<unsigned char, 4> b{};
        read_raw(b.data(), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        std::array<unsigned char, 8> b{};
        read_raw(b.data(), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        read_raw(s.data(), n);
        return s;
    }

    std::vector<float> f32_array(std::size_t n) {
        std::vector<unsigned char> buf(n * 4);
        read_raw(buf.data(), buf.size());
        std::vector<float> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = 0;
            for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[i * 4 + k]) << (8 * k);
            out[i] = std::bit_cast<float>(bits);
        }
        return out;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    void read_raw(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw LoadError("truncated file: " + path_.string());
    }

    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace anoclass::binio
