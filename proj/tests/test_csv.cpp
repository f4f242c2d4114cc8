#include <string>
#include <vector>

#include "doctest.h"
#include "effectmod/csv.hpp"
#include "effectmod/errors.hpp"

using effectmod::InputError;
using effectmod::csv::Table;

TEST_CASE("parse splits header and rows") {
  Table t = effectmod::csv::parse("a,b,c\n1,2,3\n4,5,6\n", "mem");
  REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0] == std::vector<std::string>{"1", "2", "3"});
  CHECK(t.rows[1] == std::vector<std::string>{"4", "5", "6"});
}

TEST_CASE("parse keeps empty fields and strips CR") {
  Table t = effectmod::csv::parse("a,b\r\n,x\r\n", "mem");
  CHECK(t.rows[0][0] == "");
  CHECK(t.rows[0][1] == "x");
}

TEST_CASE("parse skips blank lines without losing line numbers") {
  CHECK_THROWS_WITH_AS(effectmod::csv::parse("a,b\n1,2\n\n3\n", "f.csv"),
                       "f.csv:4: expected 2 fields, got 1", InputError);
}

TEST_CASE("parse rejects ragged rows with the offending line number") {
  CHECK_THROWS_WITH_AS(effectmod::csv::parse("a,b\n1,2,3\n", "f.csv"),
                       "f.csv:2: expected 2 fields, got 3", InputError);
}

TEST_CASE("parse rejects an empty input") {
  CHECK_THROWS_AS(effectmod::csv::parse("", "f.csv"), InputError);
  CHECK_THROWS_AS(effectmod::csv::parse("\n\n", "f.csv"), InputError);
}

TEST_CASE("header-only input yields zero rows") {
  Table t = effectmod::csv::parse("a,b\n", "mem");
  CHECK(t.header.size() == 2);
  CHECK(t.rows.empty());
}

TEST_CASE("to_string round-trips through parse") {
  Table t;
  t.header = {"id", "v"};
  t.rows = {{"p1", "0"}, {"p2", "1"}};
  std::string text = effectmod::csv::to_string(t);
  Table back = effectmod::csv::parse(text, "mem");
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
}

TEST_CASE("to_string rejects fields that would need quoting") {
  Table t;
  t.header = {"a"};
  t.rows = {{"x,y"}};
  CHECK_THROWS_AS(effectmod::csv::to_string(t), InputError);
  t.rows = {{"x\"y"}};
  CHECK_THROWS_AS(effectmod::csv::to_string(t), InputError);
  t.rows = {{"x\ny"}};
  CHECK_THROWS_AS(effectmod::csv::to_string(t), InputError);
}

TEST_CASE("read_file reports a missing path") {
  CHECK_THROWS_AS(effectmod::csv::read_file("/nonexistent/q.csv"), InputError);
}
