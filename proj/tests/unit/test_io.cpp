#include "kelp/errors.hpp"
#include "kelp/io.hpp"

#include <doctest.h>

#include <cmath>

using namespace kelp;

namespace {

HypothesisFamily nested_pair()
{
    return HypothesisFamily(2, {singleton_partition("ind", 2), block_partition("pair", 2, 2)});
}

} // namespace

TEST_CASE("csv parsing skips comments and checks the header")
{
    const CsvTable t = parse_csv("# note\na, b\n\n1, 2\n3,4\n", {"a", "b"});
    CHECK(t.header == std::vector<std::string>{"a", "b"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1] == std::vector<std::string>{"3", "4"});
    CHECK(t.lines == std::vector<std::size_t>{4, 5});
    CHECK_THROWS_AS(parse_csv("a,c\n1,2\n", {"a", "b"}), ParseError);
    try {
        parse_csv("a,b\n1\n", {"a", "b"}, "f.csv");
        FAIL("expected a ragged-row error");
    }
    catch (const ParseError& e) {
        CHECK(e.field() == "f.csv:2");
    }
}

TEST_CASE("numbers round-trip through their shortest form")
{
    for (const double v : {0.1, 1.0 / 3.0, 7.5, 1e-300, -2.0, kInfinity}) CHECK(parse_number(format_number(v), "v") == v);
    CHECK(format_number(7.5) == "7.5");
    CHECK(format_number(kInfinity) == "inf");
    CHECK_THROWS_AS(parse_number("nan", "v"), ParseError);
    CHECK_THROWS_AS(parse_number("1.5x", "v"), ParseError);
    CHECK_THROWS_AS(parse_number("", "v"), ParseError);
}

TEST_CASE("e-value files map rows onto groups")
{
    const auto family = nested_pair();
    const EValueTable t = parse_evalue_csv("resolution_id,group_index,evalue\nind,1,8\npair,1,4\n", family);
    CHECK(t.value({0, 0}) == 8.0);
    CHECK(t.value({0, 1}) == 0.0);
    CHECK(t.value({1, 0}) == 4.0);
    CHECK(t.n_total() == 3.0);
    CHECK(parse_evalue_csv(format_evalue_csv(t, family), family).value({1, 0}) == 4.0);

    try {
        parse_evalue_csv("resolution_id,group_index,evalue\nind,2,-1\n", family);
        FAIL("expected a negative e-value error");
    }
    catch (const InputError& e) {
        CHECK(std::string(e.kind()) == "negative-evalue");
    }
    CHECK_THROWS_AS(parse_evalue_csv("resolution_id,group_index,evalue\nind,3,1\n", family), ParseError);
    CHECK_THROWS_AS(parse_evalue_csv("resolution_id,group_index,evalue\nfine,1,1\n", family), ParseError);
    CHECK_THROWS_AS(parse_evalue_csv("resolution_id,group_index,evalue\nind,1,1\nind,1,2\n", family), ParseError);
}

TEST_CASE("score files need every group exactly once")
{
    const auto family = nested_pair();
    const auto s = parse_scores_csv("resolution_id,group_index,w\nind,1,2.5\nind,2,-1\npair,1,0\n", family);
    CHECK(s.w[0] == std::vector<double>{2.5, -1.0});
    CHECK(s.w[1] == std::vector<double>{0.0});
    CHECK(parse_scores_csv(format_scores_csv(s, family), family).w == s.w);

    try {
        parse_scores_csv("resolution_id,group_index,w\n", family);
        FAIL("expected an empty-file error");
    }
    catch (const InputError& e) {
        CHECK(std::string(e.kind()) == "no-scores");
        CHECK(std::string(e.what()) == "no scores");
    }
    try {
        parse_scores_csv("resolution_id,group_index,w\nind,1,1\nind,2,1\n", family);
        FAIL("expected a missing-score error");
    }
    catch (const InputError& e) {
        CHECK(std::string(e.kind()) == "missing-score");
    }
    CHECK_THROWS_AS(parse_scores_csv("resolution_id,group_index,w\nind,1,inf\nind,2,1\npair,1,0\n", family),
                    ParseError);
}

TEST_CASE("rejection files list 1-based members")
{
    const HypothesisFamily family(3, {singleton_partition("ind", 3), block_partition("all", 3, 3)});
    EValueTable t(4.0);
    t.add({1, 0}, 12.0, Provenance::raw);
    RejectionSet set;
    set.rejected = {{1, 0}};
    CHECK(format_rejections_csv(set, family, t) ==
          "resolution_id,group_index,members,evalue,weight\nall,1,1;2;3,12,0.3333333333333333\n");
}
