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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "uth/descriptor_store.hpp"
#include "uth/error.hpp"
#include "uth/rng.hpp"

using namespace uth;

namespace {

void
put_u32(std::string& s, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

void
put_f32(std::string& s, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(s, bits);
}

void
put_id(std::string& s, const std::string& id) {
    s.push_back(static_cast<char>(id.size() & 0xFF));
    s.push_back(static_cast<char>(id.size() >> 8));
    s += id;
}

}  // namespace

TEST_SUITE("descriptor_store") {

TEST_CASE("hand-built descriptor file parses to the declared shape") {
    std::string bytes = "UTHD";
    put_u32(bytes, 1);
    put_u32(bytes, 2);
    put_u32(bytes, 3);
    for (float v : {1.f, 2.f, 3.f, -4.f, 0.5f, 6.f}) put_f32(bytes, v);
    put_id(bytes, "a");
    put_id(bytes, "bb");
    std::istringstream in(bytes);
    const auto d = read_descriptors(in);
    CHECK(d.count() == 2);
    CHECK(d.dim() == 3);
    CHECK(d.ids() == std::vector<std::string>{"a", "bb"});
    CHECK(d.data()(1, 0) == -4.f);
    CHECK(d.data()(1, 1) == 0.5f);

    // and the writer produces exactly those bytes
    std::ostringstream out;
    write_descriptors(d, out);
    CHECK(out.str() == bytes);
}

TEST_CASE("descriptor header errors carry byte offsets") {
    SUBCASE("dim = 0") {
        std::string bytes = "UTHD";
        put_u32(bytes, 1);
        put_u32(bytes, 2);
        put_u32(bytes, 0);
        std::istringstream in(bytes);
        try {
            read_descriptors(in);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 12);
        }
    }
    SUBCASE("bad magic") {
        std::istringstream in(std::string("XXXX\x01\0\0\0", 8));
        try {
            read_descriptors(in);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 0);
        }
    }
    SUBCASE("version 2") {
        std::string bytes = "UTHD";
        put_u32(bytes, 2);
        std::istringstream in(bytes);
        try {
            read_descriptors(in);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 4);
        }
    }
    SUBCASE("truncated payload") {
        std::string bytes = "UTHD";
        put_u32(bytes, 1);
        put_u32(bytes, 1);
        put_u32(bytes, 4);
        put_f32(bytes, 1.f);
        std::istringstream in(bytes);
        CHECK_THROWS_AS(read_descriptors(in), FormatError);
    }
    SUBCASE("trailing bytes") {
        std::string bytes = "UTHD";
        put_u32(bytes, 1);
        put_u32(bytes, 1);
        put_u32(bytes, 1);
        put_f32(bytes, 1.f);
        put_id(bytes, "x");
        bytes += "junk";
        std::istringstream in(bytes);
        CHECK_THROWS_AS(read_descriptors(in), FormatError);
    }
}

TEST_CASE("non-finite payload is a validation error naming the row") {
    std::string bytes = "UTHD";
    put_u32(bytes, 1);
    put_u32(bytes, 2);
    put_u32(bytes, 1);
    put_f32(bytes, 1.f);
    put_f32(bytes, std::numeric_limits<float>::quiet_NaN());
    put_id(bytes, "ok");
    put_id(bytes, "bad");
    std::istringstream in(bytes);
    try {
        read_descriptors(in);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("dataset invariants") {
    CHECK_THROWS_AS(DescriptorDataset({"a", "a"}, FloatMatrix::Zero(2, 2)), ValidationError);
    CHECK_THROWS_AS(DescriptorDataset({"a"}, FloatMatrix::Zero(2, 2)), ArgumentError);
    CHECK_THROWS_AS(DescriptorDataset({"a"}, FloatMatrix::Zero(1, 0)), ArgumentError);
    FloatMatrix inf = FloatMatrix::Zero(1, 2);
    inf(0, 1) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(DescriptorDataset({"a"}, inf), ValidationError);
}

TEST_CASE("random 100x64 descriptors round-trip element-identically") {
    const auto d = test::random_dataset(100, 64, 11);
    std::stringstream buf;
    write_descriptors(d, buf);
    const auto back = read_descriptors(buf);
    CHECK(back.ids() == d.ids());
    CHECK(back.data() == d.data());
}

TEST_CASE("file save and load") {
    test::TempDir dir;
    const auto d = test::random_dataset(7, 5, 3);
    save_descriptors(d, dir.path / "d.uthd");
    CHECK(peek_magic(dir.path / "d.uthd") == "UTHD");
    CHECK(load_descriptors(dir.path / "d.uthd").data() == d.data());
    CHECK_THROWS_AS(load_descriptors(dir.path / "missing.uthd"), Error);
    CHECK(peek_magic(dir.path / "missing.uthd").empty());
}

TEST_CASE("CSV ingestion") {
    std::istringstream in("img1,0.5,1,2\nimg2,-1,3.25,4e1\n");
    const auto d = read_descriptors_csv(in);
    CHECK(d.count() == 2);
    CHECK(d.dim() == 3);
    CHECK(d.ids()[1] == "img2");
    CHECK(d.data()(1, 2) == 40.f);

    std::ostringstream out;
    write_descriptors_csv(d, out);
    std::istringstream again(out.str());
    CHECK(read_descriptors_csv(again).data() == d.data());

    SUBCASE("ragged rows report the line offset") {
        std::istringstream bad("a,1,2\nb,1\n");
        try {
            read_descriptors_csv(bad);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 6);
        }
    }
    SUBCASE("unparsable value") {
        std::istringstream bad("a,1,x\n");
        CHECK_THROWS_AS(read_descriptors_csv(bad), FormatError);
    }
}

TEST_CASE("normalize_minmax examples") {
    FloatMatrix m(3, 3);
    m << 0, 3, -2,  //
        5, 3, 0,    //
        10, 3, 2;
    const DescriptorDataset d({"a", "b", "c"}, m);
    const auto n = normalize_minmax(d);
    for (int r = 0; r < 3; ++r) {
        CHECK(n.data()(r, 0) == doctest::Approx(std::array{0.0, 0.5, 1.0}[r]));
        CHECK(n.data()(r, 1) == 0.f);  // constant column
        CHECK(n.data()(r, 2) == doctest::Approx(std::array{0.0, 0.5, 1.0}[r]));
    }
    REQUIRE(n.norm_meta().has_value());
    CHECK(n.norm_meta()->min == std::vector<float>{0, 3, -2});
    CHECK(n.norm_meta()->max == std::vector<float>{10, 3, 2});

    SUBCASE("idempotent") {
        const auto twice = normalize_minmax(n);
        CHECK(twice.data() == n.data());
    }
    SUBCASE("apply_normalization reproduces the fit and clamps") {
        CHECK(apply_normalization(d, *n.norm_meta()).data() == n.data());
        FloatMatrix out(1, 3);
        out << 20, 100, -5;
        const auto c = apply_normalization(DescriptorDataset({"z"}, out), *n.norm_meta());
        CHECK(c.data()(0, 0) == 1.f);
        CHECK(c.data()(0, 1) == 0.f);
        CHECK(c.data()(0, 2) == 0.f);
    }
}

TEST_CASE("normalize_minmax errors") {
    CHECK_THROWS_AS(normalize_minmax(DescriptorDataset({}, FloatMatrix(0, 2))), ArgumentError);
    CHECK_THROWS_AS(normalize_minmax(DescriptorDataset({"a"}, FloatMatrix::Ones(1, 2))), ArgumentError);
    CHECK_THROWS_AS(normalize_minmax(DescriptorDataset({"a", "b"}, FloatMatrix::Ones(2, 2))), ArgumentError);
}

TEST_CASE("normalization metadata file round-trips") {
    test::TempDir dir;
    const NormalizationMeta meta{{0.f, -1.5f, 3.0e-7f}, {1.f, 2.25f, 1.0e6f}};
    save_normalization(meta, dir.path / "n.csv");
    CHECK(load_normalization(dir.path / "n.csv") == meta);
}

TEST_CASE("split examples") {
    const auto d10 = test::random_dataset(10, 2, 1);
    const auto [tr, te] = split(d10, 0.8, 0.2, 7);
    CHECK(tr.count() == 8);
    CHECK(te.count() == 2);

    const auto [tr2, te2] = split(d10, 0.8, 0.2, 7);
    CHECK(tr2.ids() == tr.ids());
    CHECK(te2.ids() == te.ids());

    std::set<std::string> all(tr.ids().begin(), tr.ids().end());
    for (const auto& id : te.ids()) CHECK(all.insert(id).second);
    CHECK(all.size() == 10);

    const auto d1000 = test::random_dataset(1000, 1, 2);
    const auto a = split(d1000, 0.5, 0.5, 1).first.ids();
    const auto b = split(d1000, 0.5, 0.5, 2).first.ids();
    CHECK(a != b);

    CHECK_THROWS_AS(split(d10, 0.0, 1.0, 1), ArgumentError);
    CHECK_THROWS_AS(split(d10, 0.5, 0.6, 1), ArgumentError);
}

TEST_CASE("code packing examples") {
    SUBCASE("32 set bits pack to four 0xFF bytes") {
        BinaryCodeSet c(32);
        c.append("x", BitVector(32, 1));
        CHECK(c.packed() == std::vector<std::uint8_t>(4, 0xFF));
    }
    SUBCASE("12 bits use 2 bytes with the top nibble clear") {
        BinaryCodeSet c(12);
        c.append("x", BitVector(12, 1));
        REQUIRE(c.packed().size() == 2);
        CHECK(c.packed()[0] == 0xFF);
        CHECK(c.packed()[1] == 0x0F);
    }
    SUBCASE("LSB-first bit order") {
        BinaryCodeSet c(10);
        BitVector bits(10, 0);
        bits[0] = 1;
        bits[9] = 1;
        c.append("x", bits);
        CHECK(c.packed()[0] == 0x01);
        CHECK(c.packed()[1] == 0x02);
        CHECK(c.unpack(0) == bits);
        CHECK(c.bit(0, 9));
        CHECK_FALSE(c.bit(0, 8));
    }
    SUBCASE("invariants") {
        CHECK_THROWS_AS(BinaryCodeSet(0), ArgumentError);
        CHECK_THROWS_AS(BinaryCodeSet({"a"}, 12, {0xFF, 0x1F}), ValidationError);
        CHECK_THROWS_AS(BinaryCodeSet({"a", "a"}, 8, {0, 0}), ValidationError);
        CHECK_THROWS_AS(BinaryCodeSet({"a"}, 8, {0, 0}), ArgumentError);
        BinaryCodeSet c(4);
        CHECK_THROWS_AS(c.append("x", BitVector(5, 0)), ArgumentError);
    }
}

TEST_CASE("code file round trips") {
    SUBCASE("1000 random 256-bit codes") {
        const auto c = test::random_codes(1000, 256, 5);
        std::stringstream buf;
        write_codes(c, buf);
        CHECK(read_codes(buf) == c);
    }
    SUBCASE("widths not divisible by 8") {
        for (std::uint32_t bits : {1u, 7u, 9u, 13u, 63u, 65u}) {
            const auto c = test::random_codes(17, bits, bits);
            std::stringstream buf;
            write_codes(c, buf);
            CHECK(read_codes(buf) == c);
        }
    }
    SUBCASE("dirty padding in a file is a validation error") {
        BinaryCodeSet c(12);
        c.append("x", BitVector(12, 0));
        std::ostringstream out;
        write_codes(c, out);
        std::string bytes = out.str();
        bytes[16 + 1] = static_cast<char>(0x80);  // header is 16 bytes; second payload byte
        std::istringstream in(bytes);
        CHECK_THROWS_AS(read_codes(in), ValidationError);
    }
    SUBCASE("empty code set") {
        BinaryCodeSet c(24);
        std::stringstream buf;
        write_codes(c, buf);
        const auto back = read_codes(buf);
        CHECK(back.count() == 0);
        CHECK(back.n_bits() == 24);
    }
}

TEST_CASE("ground truth manifest") {
    std::istringstream in("q1\ta,b\nq2\tc\n");
    const auto gt = read_ground_truth(in);
    CHECK(gt.size() == 2);
    REQUIRE(gt.find("q1") != nullptr);
    CHECK(*gt.find("q1") == std::vector<std::string>{"a", "b"});
    CHECK(gt.find("nope") == nullptr);
    CHECK(gt.query_order() == std::vector<std::string>{"q1", "q2"});

    std::istringstream no_tab("q1 a,b\n");
    CHECK_THROWS_AS(read_ground_truth(no_tab), FormatError);
    std::istringstream empty_rel("q1\t\n");
    CHECK_THROWS_AS(read_ground_truth(empty_rel), FormatError);

    GroundTruth g;
    CHECK_THROWS_AS(g.add("q", {}), ArgumentError);
    g.add("q", {"a"});
    CHECK_THROWS_AS(g.add("q", {"b"}), ValidationError);

    test::TempDir dir;
    save_ground_truth(gt, dir.path / "gt.tsv");
    const auto back = load_ground_truth(dir.path / "gt.tsv");
    CHECK(*back.find("q2") == std::vector<std::string>{"c"});
}

}  // TEST_SUITE
