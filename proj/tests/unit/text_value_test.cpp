#include <gtest/gtest.h>

#include <random>

#include "semforge/hash.hpp"
#include "semforge/text.hpp"
#include "semforge/union_find.hpp"
#include "semforge/value.hpp"

using namespace semforge;

TEST(Text, SplitsOnUnicodeWhitespace) {
  EXPECT_EQ(text::word_count("a b c"), 3u);
  EXPECT_EQ(text::word_count("  a\tb\n"), 2u);
  EXPECT_EQ(text::word_count("a b　c"), 3u);
  EXPECT_EQ(text::word_count(""), 0u);
}

TEST(Text, CodepointBoundaries) {
  std::string s = "aéb";  // a, 2-byte e-acute, b
  EXPECT_EQ(text::codepoint_count(s), 3u);
  EXPECT_EQ(text::floor_boundary(s, 2), 1u);
  EXPECT_EQ(text::ceil_boundary(s, 2), 3u);
}

TEST(Text, JaccardOverTokenSets) {
  EXPECT_DOUBLE_EQ(text::jaccard("Too much homework", "too much HOMEWORK!"), 1.0);
  EXPECT_DOUBLE_EQ(text::jaccard("a b", "b c"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(text::jaccard("", ""), 1.0);
  EXPECT_DOUBLE_EQ(text::jaccard("a", ""), 0.0);
}

TEST(Text, CaseInsensitiveHelpers) {
  EXPECT_TRUE(text::icontains("Severe Back Pain", "back pain"));
  EXPECT_TRUE(text::iequals("Medium", "medium"));
  EXPECT_EQ(text::trim("  x \n"), "x");
}

TEST(Value, StringifyRules) {
  EXPECT_EQ(stringify(Value("hi")), "hi");
  EXPECT_EQ(stringify(Value(true)), "true");
  EXPECT_EQ(stringify(Value(2.5)), "2.5");
  EXPECT_EQ(stringify(Value(0.1)), "0.1");
  EXPECT_EQ(stringify(Value(9007199254740993LL)), "9007199254740993");
  EXPECT_EQ(stringify(Value::parse(R"({"b":[1,"x"],"a":null})")), R"({"b":[1,"x"],"a":null})");
}

TEST(Value, CanonicalDumpSortsKeysRecursively) {
  auto a = Value::parse(R"({"b":1,"a":{"y":2,"x":[{"q":1,"p":2}]}})");
  EXPECT_EQ(canonical_dump(a), R"({"a":{"x":[{"p":2,"q":1}],"y":2},"b":1})");
}

TEST(Value, CanonicalRoundTripProperty) {
  std::mt19937_64 rng(11);
  std::function<Value(int)> gen = [&](int depth) -> Value {
    switch (depth > 2 ? rng() % 4 : rng() % 6) {
      case 0: return Value();
      case 1: return Value(rng() % 2 == 0);
      case 2: return Value(static_cast<std::int64_t>(rng() % 100000) - 50000);
      case 3: return Value(std::ldexp(static_cast<double>(rng() % 1000003), -static_cast<int>(rng() % 20)));
      case 4: {
        Value arr = Value::array();
        for (int i = 0, n = rng() % 4; i < n; ++i) arr.push_back(gen(depth + 1));
        return arr;
      }
      default: {
        Value obj = Value::object();
        for (int i = 0, n = rng() % 4; i < n; ++i) obj["k" + std::to_string(rng() % 10)] = gen(depth + 1);
        return obj;
      }
    }
  };
  for (int i = 0; i < 300; ++i) {
    auto v = gen(0);
    auto bytes = canonical_dump(v);
    ASSERT_EQ(canonical_dump(Value::parse(bytes)), bytes);
    ASSERT_EQ(canonicalize(Value::parse(bytes)), canonicalize(v));
  }
}

TEST(Value, CompareValuesKindOrder) {
  EXPECT_LT(compare_values(Value(), Value(false)), 0);
  EXPECT_LT(compare_values(Value(true), Value(0)), 0);
  EXPECT_LT(compare_values(Value(2), Value(10)), 0);
  EXPECT_LT(compare_values(Value(10), Value("a")), 0);
  EXPECT_EQ(compare_values(Value("a"), Value("a")), 0);
  EXPECT_GT(compare_values(Value("b"), Value("a")), 0);
}

TEST(Hash, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hash, FieldsAreLengthPrefixed) {
  auto h = [](std::string a, std::string b) {
    Hasher x;
    x.field(a).field(b);
    return to_hex(x.finish());
  };
  EXPECT_NE(h("ab", "c"), h("a", "bc"));
  EXPECT_EQ(h("ab", "c"), h("ab", "c"));
}

TEST(UnionFind, ClustersOrderedBySmallestMember) {
  UnionFind uf(6);
  uf.unite(4, 1);
  uf.unite(5, 3);
  uf.unite(3, 1);
  auto c = uf.clusters();
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(c[1], (std::vector<std::size_t>{1, 3, 4, 5}));
  EXPECT_EQ(c[2], (std::vector<std::size_t>{2}));
}
