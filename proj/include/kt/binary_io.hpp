#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "kt/error.hpp"

namespace kt {

static_assert(std::endian::native == std::endian::little,
              "binary artifact formats assume a little-endian host");

/// Append-only little-endian byte buffer.
class ByteWriter {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    void put_magic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }

    void put_string(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put_vector(std::span<const T> values) {
        put<std::uint64_t>(values.size());
        const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
        bytes_.insert(bytes_.end(), p, p + values.size_bytes());
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put_vector(const std::vector<T>& values) {
        put_vector(std::span<const T>(values));
    }

    void put_bytes(std::span<const std::uint8_t> raw) {
        put<std::uint64_t>(raw.size());
        bytes_.insert(bytes_.end(), raw.begin(), raw.end());
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> release() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader over a byte span.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void expect_magic(std::string_view magic) {
        need(magic.size());
        if (std::string_view(reinterpret_cast<const char*>(bytes_.data() + pos_), magic.size()) != magic) {
            throw ValidationError("bad magic: expected '" + std::string(magic) + "'");
        }
        pos_ += magic.size();
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    std::vector<T> get_vector() {
        const auto n = get<std::uint64_t>();
        if (n > (bytes_.size() - pos_) / sizeof(T)) throw ValidationError("truncated binary payload");
        std::vector<T> values(n);
        std::memcpy(values.data(), bytes_.data() + pos_, n * sizeof(T));
        pos_ += n * sizeof(T);
        return values;
    }

    std::vector<std::uint8_t> get_bytes() {
        const auto n = get<std::uint64_t>();
        need(n);
        std::vector<std::uint8_t> raw(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
        pos_ += n;
        return raw;
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) throw ValidationError("truncated binary payload");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace kt
