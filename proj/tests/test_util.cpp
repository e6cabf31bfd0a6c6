#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "biasaudit/util.hpp"
#include "support.hpp"

using namespace biasaudit;

TEST(Hash, Fnv1aKnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
    EXPECT_EQ(to_hex(0xabcULL), "0000000000000abc");
}

TEST(Hash, FieldsAreSeparated) {
    EXPECT_NE(hash_fields({"ab", "c"}), hash_fields({"a", "bc"}));
    EXPECT_EQ(hash_fields({"x", "y"}), hash_fields({"x", "y"}));
    EXPECT_EQ(hash_fields({"x"}).size(), 16u);
}

TEST(Seeds, SplitMixKnownValuesAndSpread) {
    EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
    EXPECT_EQ(derive_seed(42, 0), 0x7eb3b394ac9efc29ULL);
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(7, i));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_NE(derive_seed(7, 3), derive_seed(8, 3));
}

TEST(Stats, QuantileType7) {
    const std::vector<double> v{3, 1, 4, 1, 5, 9, 2, 6};
    EXPECT_DOUBLE_EQ(quantile(v, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(quantile(v, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(quantile(v, 0.5), 3.5);
    EXPECT_DOUBLE_EQ(quantile(v, 0.9), 6.9);
    EXPECT_DOUBLE_EQ(quantile(v, 1.0), 9.0);
    EXPECT_DOUBLE_EQ(quantile({2.5}, 0.3), 2.5);
    EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
    EXPECT_DOUBLE_EQ(mean({1, 2, 3, 6}), 3.0);
    EXPECT_DOUBLE_EQ(mean({}), 0.0);
}

TEST(Csv, QuotesNewlinesAndBlankLines) {
    const auto rows = parse_csv("a,b,c\r\n\"x, y\",\"say \"\"hi\"\"\",\n\n\"multi\nline\",2,3");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(rows[1], (std::vector<std::string>{"x, y", "say \"hi\"", ""}));
    EXPECT_EQ(rows[2], (std::vector<std::string>{"multi\nline", "2", "3"}));
    EXPECT_THROW(parse_csv("a,\"open\n"), DataError);
    EXPECT_TRUE(parse_csv("").empty());
}

TEST(Format, FixedAndGeneral) {
    EXPECT_EQ(format_fixed(-1.0849, 2), "-1.08");
    EXPECT_EQ(format_fixed(0.5, 3), "0.500");
    EXPECT_EQ(format_general(0.000123456789), "0.000123457");
    EXPECT_EQ(format_general(2.0), "2");
    EXPECT_EQ(to_lower("MiXeD"), "mixed");
}

TEST(Files, DigestTracksContent) {
    const auto dir = testsupport::temp_dir("util");
    const auto path = (dir / "f.txt").string();
    std::ofstream(path) << "foobar";
    EXPECT_EQ(file_digest(path), "fnv1a64:85944171f73967e8");
    EXPECT_EQ(read_file(path), "foobar");
    EXPECT_THROW(read_file((dir / "missing").string()), DataError);
}
