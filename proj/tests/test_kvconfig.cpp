#include <gtest/gtest.h>

#include <cmath>

#include "omnistereo/errors.hpp"
#include "omnistereo/kvconfig.hpp"

using namespace omnistereo;

TEST(KeyValueDoc, ParseAndLookup) {
  const auto doc = KeyValueDoc::parse(
      "# comment\n"
      "lr = 2e-4\n"
      "\n"
      "name = stage a  \n"
      "flag = true\n"
      "steps = 12\n"
      "lr = 1e-3\n");
  EXPECT_TRUE(doc.has("lr"));
  EXPECT_DOUBLE_EQ(doc.get_double("lr", 0.0), 1e-3);
  EXPECT_EQ(doc.get_all("lr").size(), 2u);
  EXPECT_EQ(doc.get_string("name", ""), "stage a");
  EXPECT_TRUE(doc.get_bool("flag", false));
  EXPECT_EQ(doc.get_int("steps", 0), 12);
  EXPECT_EQ(doc.get_int("missing", 7), 7);
  EXPECT_FALSE(doc.get("missing").has_value());
}

TEST(KeyValueDoc, RejectsMalformed) {
  EXPECT_THROW(KeyValueDoc::parse("no equals sign"), ConfigError);
  EXPECT_THROW(KeyValueDoc::parse(" = value"), ConfigError);
  const auto doc = KeyValueDoc::parse("steps = 1.5\nflag = maybe");
  EXPECT_THROW(doc.get_int("steps", 0), ConfigError);
  EXPECT_THROW(doc.get_bool("flag", false), ConfigError);
}

TEST(KeyValueDoc, SerializeRoundTrip) {
  KeyValueDoc doc;
  doc.set("a", "1");
  doc.add("b", "x y");
  doc.add("b", "z");
  doc.set("a", "2");
  const auto back = KeyValueDoc::parse(doc.serialize());
  EXPECT_EQ(back.entries(), doc.entries());
  EXPECT_EQ(back.get_string("a", ""), "2");
}

TEST(KeyValueDoc, UnknownKeys) {
  const auto doc = KeyValueDoc::parse("lr = 1\nlrr = 2\n");
  const auto unknown = doc.unknown_keys({"lr"});
  ASSERT_EQ(unknown.size(), 1u);
  EXPECT_EQ(unknown[0], "lrr");
}

TEST(Attributes, ParseAndNumbers) {
  const auto attrs = parse_attributes("center=1,2,3 radius=0.5");
  EXPECT_EQ(attrs.at("radius"), "0.5");
  const auto v = parse_double_list(attrs.at("center"), "center");
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[2], 3.0);
  EXPECT_THROW(parse_attributes("oops"), ConfigError);
  EXPECT_THROW(parse_double("abc", "x"), ConfigError);
  EXPECT_THROW(parse_int("3x", "x"), ConfigError);
}

TEST(FormatDouble, RoundTripsExactly) {
  for (double x : {0.1, 1.0 / 3.0, 2e-4, -123456.789, 6.02214076e23, std::nextafter(1.0, 2.0)})
    EXPECT_EQ(parse_double(format_double(x), "x"), x);
}
