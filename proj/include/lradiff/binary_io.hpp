// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lradiff {

/// Malformed, truncated or mismatched binary stream.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
public:
    void magic(std::string_view tag) {
        bytes_.insert(bytes_.end(), tag.begin(), tag.end());
    }
    template <typename T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        std::array<std::uint8_t, sizeof(T)> raw{};
        std::memcpy(raw.data(), &value, sizeof(T));
        bytes_.insert(bytes_.end(), raw.begin(), raw.end());
    }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(v); }
    void f64s(std::span<const double> v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
        bytes_.insert(bytes_.end(), p, p + v.size_bytes());
    }
    void raw(std::span<const std::uint8_t> v) { bytes_.insert(bytes_.end(), v.begin(), v.end()); }

    const Bytes& bytes() const noexcept { return bytes_; }
    Bytes take() noexcept { return std::move(bytes_); }

private:
    Bytes bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void expect_magic(std::string_view tag, std::string_view what) {
        need(tag.size(), what);
        if (std::memcmp(bytes_.data() + pos_, tag.data(), tag.size()) != 0)
            throw FormatError(std::string(what) + ": bad magic, expected \"" + std::string(tag) +
                              "\"");
        pos_ += tag.size();
    }
    bool peek_magic(std::string_view tag) const {
        return remaining() >= tag.size() &&
               std::memcmp(bytes_.data() + pos_, tag.data(), tag.size()) == 0;
    }
    template <typename T>
    T get(std::string_view what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    std::uint32_t u32(std::string_view what) { return get<std::uint32_t>(what); }
    std::uint64_t u64(std::string_view what) { return get<std::uint64_t>(what); }
    double f64(std::string_view what) { return get<double>(what); }
    void f64s(std::span<double> out, std::string_view what) {
        need(out.size_bytes(), what);
        std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
    }
    std::span<const std::uint8_t> take(std::size_t n, std::string_view what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }

private:
    void need(std::size_t n, std::string_view what) const {
        if (remaining() < n)
            throw FormatError(std::string(what) + ": truncated stream");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace lradiff
