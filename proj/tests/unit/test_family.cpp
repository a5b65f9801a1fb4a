#include "kelp/errors.hpp"
#include "kelp/family.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

using namespace kelp;

TEST_CASE("two-resolution family counts its groups")
{
    const auto family = parse_family(R"({"p": 4, "resolutions": [
        {"id": "r1", "groups": [[1],[2],[3],[4]]},
        {"id": "r5", "groups": [[1,2,3,4]]}]})");
    CHECK(family.total_groups() == 5);
    CHECK(family.resolution_count() == 2);
    CHECK(family.singleton_resolution() == 0);
    CHECK(family.weight({1, 0}) == doctest::Approx(0.25));
    CHECK(family.members({1, 0}) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(family.all_contiguous());
}

TEST_CASE("overlapping groups are rejected and named")
{
    try {
        parse_family(R"({"p": 3, "resolutions": [{"id": "r2", "groups": [[1,2],[2,3]]}]})");
        FAIL("expected an overlap error");
    }
    catch (const OverlappingGroupsError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("{1,2}") != std::string::npos);
        CHECK(msg.find("{2,3}") != std::string::npos);
        CHECK(e.kind() == "overlapping-groups");
    }
}

TEST_CASE("coverage gaps list the missing indices")
{
    try {
        parse_family(R"({"p": 4, "resolutions": [{"id": "a", "groups": [[1,2]]}]})");
        FAIL("expected a coverage error");
    }
    catch (const CoverageGapError& e) {
        CHECK(std::string(e.what()).find("{3,4}") != std::string::npos);
    }
}

TEST_CASE("parse errors carry a location")
{
    try {
        parse_family("{\n\"p\": 4,\n\"resolutions\": [\n}");
        FAIL("expected a parse error");
    }
    catch (const ParseError& e) {
        CHECK(e.field() == "line 4");
    }
    try {
        parse_family(R"({"p": 2, "resolutions": [{"id": "a", "groups": [[1], [0]]}]})");
        FAIL("expected a field error");
    }
    catch (const ParseError& e) {
        CHECK(e.field() == "resolutions[0].groups[1][0]");
    }
    CHECK_THROWS_AS(parse_family(R"({"p": 2, "resolutions": [{"id": "a", "groups": [[1,2]], "weights": [-1]}]})"),
                    ParseError);
}

TEST_CASE("block partitions at desk and full scale")
{
    const HypothesisFamily family(1000, {singleton_partition("1", 1000), block_partition("2", 1000, 5)});
    CHECK(family.total_groups() == 1200);
    CHECK(family.partition(1).contiguous_intervals);
    CHECK(family.group_of(1, 7) == 1);
    const HypothesisFamily scattered(4, {make_partition("x", {{0, 2}, {1, 3}})});
    CHECK_FALSE(scattered.all_contiguous());
}

TEST_CASE("null status follows the intersection rule")
{
    const HypothesisFamily family(5, {singleton_partition("1", 5), make_partition("2", {{0, 1}, {2, 3, 4}}),
                                      block_partition("3", 5, 5)});
    const TruthLabels truth{{2}};
    CHECK(null_status(family, truth, {1, 0}));
    CHECK_FALSE(null_status(family, truth, {2, 0}));
    CHECK_FALSE(null_status(family, truth, {0, 2}));
    const TruthLabels global{};
    for (const auto& ref : family.all_refs()) CHECK(null_status(family, global, ref));
    CHECK_THROWS_AS(null_status(family, truth, {3, 0}), PreconditionError);
}

TEST_CASE("null status is monotone under inclusion")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto family = testing::random_family(rng, trial % 2 == 0);
        TruthLabels truth;
        std::bernoulli_distribution nz(0.2);
        for (std::size_t j = 0; j < family.p(); ++j)
            if (nz(rng)) truth.nonzero_features.push_back(j);
        for (const auto& a : family.all_refs()) {
            for (const auto& b : family.all_refs()) {
                const auto& ma = family.members(a);
                const auto& mb = family.members(b);
                if (std::includes(ma.begin(), ma.end(), mb.begin(), mb.end()) && !null_status(family, truth, b))
                    CHECK_FALSE(null_status(family, truth, a));
            }
        }
    }
}

TEST_CASE("save and load round-trip")
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto family = testing::random_family(rng, trial % 3 == 0);
        CHECK(parse_family(save_family(family)) == family);
    }
    const HypothesisFamily weighted(3, {make_partition("w", {{0}, {1, 2}}, {0.75, 2.5})});
    const auto back = parse_family(save_family(weighted));
    CHECK(back == weighted);
    CHECK(back.weight({0, 1}) == 2.5);
}
