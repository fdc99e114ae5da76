#include <doctest.h>

#include <set>

#include "forge/common.hpp"
#include "test_support.hpp"

using namespace forge;

TEST_CASE("fnv1a64 reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("stable_id is prefixed, fixed width and order sensitive") {
    const auto a = stable_id("pr_", {"x", "y"});
    CHECK(a.size() == 3 + 16);
    CHECK(a.rfind("pr_", 0) == 0);
    CHECK(a == stable_id("pr_", {"x", "y"}));
    CHECK(a != stable_id("pr_", {"y", "x"}));
    // parts are separated, so concatenation ambiguity does not collide
    CHECK(stable_id("p", {"ab", "c"}) != stable_id("p", {"a", "bc"}));
}

TEST_CASE("sha256 of known strings") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("string helpers") {
    CHECK(trim("  a b \t\n") == "a b");
    CHECK(normalize_ws("  a \t b\n\nc ") == "a b c");
    CHECK(to_lower("AbC") == "abc");
    CHECK(split_ws(" a  b ") == std::vector<std::string>{"a", "b"});
    CHECK(split("a\t\tb", '\t') == std::vector<std::string>{"a", "", "b"});
    CHECK(join({"a", "b", "c"}, ", ") == "a, b, c");
    CHECK(join({}, ",").empty());
}

TEST_CASE("Rng is deterministic and in range") {
    Rng a(42), b(42), c(43);
    std::vector<std::uint64_t> xa, xb, xc;
    for (int i = 0; i < 16; ++i) {
        xa.push_back(a.next());
        xb.push_back(b.next());
        xc.push_back(c.next());
    }
    CHECK(xa == xb);
    CHECK(xa != xc);

    Rng r(7);
    std::set<std::size_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto k = r.below(5);
        CHECK(k < 5);
        seen.insert(k);
    }
    CHECK(seen.size() == 5);
    CHECK_THROWS_AS(r.below(0), DomainError);
}

TEST_CASE("normal draws have roughly unit variance") {
    Rng r(3);
    double s = 0, ss = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        ss += x * x;
    }
    CHECK(std::abs(s / n) < 0.05);
    CHECK(std::abs(ss / n - 1.0) < 0.05);
}

TEST_CASE("atomic write and jsonl reading") {
    test::TempDir dir;
    const auto p = dir / "sub" / "x.jsonl";
    std::filesystem::create_directories(p.parent_path());
    write_file_atomic(p, "{\"a\":1}\n\nnot json\n{\"a\":2}\n");
    CHECK_FALSE(std::filesystem::exists(p.string() + ".tmp"));
    std::vector<int> seen;
    const auto bad = for_each_jsonl(p, [&](std::size_t, const json& j) { seen.push_back(j["a"].get<int>()); });
    CHECK(bad == 1);
    CHECK(seen == std::vector<int>{1, 2});
    CHECK_THROWS_AS(read_file(dir / "missing"), FatalInputError);
}

TEST_CASE("format_double round-trips") {
    for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567}) CHECK(std::stod(format_double(x)) == x);
}
