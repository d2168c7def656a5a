// Copyright 2026 the uth authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian byte cursor helpers shared by the file formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "uth/error.hpp"

namespace uth::detail {

class ByteWriter {
public:
    void
    magic(std::string_view m) {
        buf_.insert(buf_.end(), m.begin(), m.end());
    }

    void
    u8(std::uint8_t v) {
        buf_.push_back(v);
    }

    void
    u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void
    u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void
    u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void
    f32(float v) {
        u32(std::bit_cast<std::uint32_t>(v));
    }

    void
    f64(double v) {
        u64(std::bit_cast<std::uint64_t>(v));
    }

    void
    bytes(const std::uint8_t* p, std::size_t n) {
        buf_.insert(buf_.end(), p, p + n);
    }

    void
    str16(const std::string& s) {
        if (s.size() > UINT16_MAX) {
            throw ArgumentError("id longer than 65535 bytes: " + s.substr(0, 32) + "...");
        }
        u16(static_cast<std::uint16_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void
    flush_to(std::ostream& out) const {
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) {
            throw Error("write failed");
        }
    }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::istream& in)
        : buf_(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()) {}

    std::size_t
    offset() const noexcept {
        return pos_;
    }

    std::size_t
    remaining() const noexcept {
        return buf_.size() - pos_;
    }

    void
    expect_magic(std::string_view m) {
        need(m.size(), "magic");
        if (std::string_view(buf_.data() + pos_, m.size()) != m) {
            throw FormatError("bad magic, expected \"" + std::string(m) + "\"", pos_);
        }
        pos_ += m.size();
    }

    std::uint8_t
    u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    std::uint16_t
    u16(const char* what) {
        return static_cast<std::uint16_t>(le(2, what));
    }

    std::uint32_t
    u32(const char* what) {
        return static_cast<std::uint32_t>(le(4, what));
    }

    std::uint64_t
    u64(const char* what) {
        return le(8, what);
    }

    float
    f32(const char* what) {
        return std::bit_cast<float>(u32(what));
    }

    double
    f64(const char* what) {
        return std::bit_cast<double>(u64(what));
    }

    void
    bytes(std::uint8_t* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::string
    str16(const char* what) {
        const std::uint16_t len = u16(what);
        need(len, what);
        std::string s(buf_.data() + pos_, len);
        pos_ += len;
        return s;
    }

    /// Throws unless the payload needs at least `n` more bytes.
    void
    need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(std::string("truncated file while reading ") + what, pos_);
        }
    }

    void
    expect_end() const {
        if (remaining() != 0) {
            throw FormatError("trailing bytes after payload", pos_);
        }
    }

private:
    std::uint64_t
    le(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

}  // namespace uth::detail
