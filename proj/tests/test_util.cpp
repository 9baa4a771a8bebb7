#include <doctest.h>

#include "dcr/util.hpp"

using namespace dcr;

TEST_CASE("sha256 matches known vectors") {
  CHECK(util::sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(util::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(util::sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // multi-block input
  CHECK(util::sha256_hex(std::string(1000, 'a')) ==
        "41edece42d63e8d9bf515a9ba6932e1c20cbc9f5a5d134645adb5db1b9737ea3");
}

TEST_CASE("string helpers") {
  CHECK(util::to_lower("AbC") == "abc");
  CHECK(util::iequals("No Error", "no error"));
  CHECK(util::icontains("Can You Summarize this?", "can you summarize"));
  CHECK_FALSE(util::icontains("nothing here", "summary"));
  CHECK(util::trim("  x \n") == "x");
  CHECK(util::split_lines("a\nb\n") == std::vector<std::string>{"a", "b"});
  CHECK(util::split_lines("a\n\nb") == std::vector<std::string>{"a", "", "b"});
  CHECK(util::replace_all("x y x", "x", "z") == "z y z");
  CHECK(util::tokenize_whitespace("  the\tcat \n sat ") ==
        std::vector<std::string>{"the", "cat", "sat"});
}

TEST_CASE("clock formatting and freezing") {
  CHECK(util::format_utc_iso8601(0) == "1970-01-01T00:00:00Z");
  CHECK(util::parse_utc_iso8601("2024-01-02T03:04:05Z") ==
        util::parse_utc_iso8601("2024-01-02T03:04:05Z"));
  const std::int64_t epoch = util::parse_utc_iso8601("2024-01-02T03:04:05Z");
  CHECK(util::format_utc_iso8601(epoch) == "2024-01-02T03:04:05Z");
  util::Clock frozen{epoch};
  CHECK(frozen.now_iso() == "2024-01-02T03:04:05Z");
}

TEST_CASE("deterministic draws and shuffles") {
  util::Rng a(42);
  util::Rng b(42);
  for (int i = 0; i < 100; ++i) {
    const std::size_t x = util::draw_index(a, 17);
    CHECK(x == util::draw_index(b, 17));
    CHECK(x < 17);
  }
  std::vector<int> v1{1, 2, 3, 4, 5, 6, 7};
  std::vector<int> v2 = v1;
  util::Rng r1(7);
  util::Rng r2(7);
  util::shuffle_deterministic(v1, r1);
  util::shuffle_deterministic(v2, r2);
  CHECK(v1 == v2);
}
