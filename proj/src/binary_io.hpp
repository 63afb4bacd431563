#pragma once

// Little-endian byte buffers for the dataset and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "scl/errors.hpp"

namespace scl::io {

class Writer {
public:
    Writer(const std::filesystem::path& path, std::string label)
        : out_(path, std::ios::binary | std::ios::trunc), label_(std::move(label)) {
        if (!out_) throw FormatError(label_ + ": cannot open " + path.string() + " for writing");
    }
    template <class T>
    void put(T v) {
        static_assert(std::is_integral_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i)
            buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
    }
    void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
    void put_f64(double f) { put(std::bit_cast<std::uint64_t>(f)); }
    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void flush() {
        out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        out_.flush();
        if (!out_) throw FormatError(label_ + ": write failed");
    }

private:
    std::ofstream out_;
    std::string label_;
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(const std::filesystem::path& path, std::string label) : label_(std::move(label)) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError(label_ + ": cannot open " + path.string());
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }
    float get_f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
    double get_f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }
    void need(std::size_t n, const char* what) const {
        if (n > buf_.size() - pos_) {
            throw FormatError(label_ + ": truncated file reading " + std::string(what) + " at offset " +
                              std::to_string(pos_));
        }
    }
    // Consumes `magic` or throws naming offset 0.
    void expect_magic(const char* magic, std::size_t n) {
        need(n, "magic");
        if (std::memcmp(buf_.data() + pos_, magic, n) != 0) {
            throw FormatError(label_ + ": bad magic at offset " + std::to_string(pos_) + " (expected \"" +
                              std::string(magic, n) + "\")");
        }
        pos_ += n;
    }
    std::string get_string(std::size_t n, const char* what) {
        need(n, what);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t offset() const { return pos_; }
    std::size_t size() const { return buf_.size(); }
    const std::string& label() const { return label_; }

private:
    std::vector<char> buf_;
    std::size_t pos_ = 0;
    std::string label_;
};

}  // namespace scl::io
