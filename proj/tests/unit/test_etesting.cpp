#include "kelp/errors.hpp"
#include "kelp/etesting.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

using namespace kelp;

namespace {

std::vector<std::size_t> indices(const RejectionSet& set)
{
    std::vector<std::size_t> out;
    for (const auto& ref : set.rejected) out.push_back(ref.group);
    return out;
}

RejectionSet ebh_of(std::vector<double> e, double n, double alpha)
{
    auto table = EValueTable::from_values(e, n);
    auto out = ebh(table, alpha);
    REQUIRE(verify_self_consistent(table, out.rejected, alpha).self_consistent);
    return out;
}

} // namespace

TEST_CASE("ebh worked examples")
{
    CHECK(ebh_of({0, 0, 0, 0}, 4, 0.2).empty());
    CHECK(indices(ebh_of({8, 0, 0, 0}, 4, 0.5)) == std::vector<std::size_t>{0});
    CHECK(indices(ebh_of({8, 8, 0, 0}, 4, 0.5)) == std::vector<std::size_t>{0, 1});
    CHECK(ebh(EValueTable(3), 0.1).empty());
    CHECK_THROWS_AS(ebh(EValueTable(3), 1.0), PreconditionError);
}

TEST_CASE("ebh rejects boundary ties together")
{
    // Three equal values clear the k=3 threshold 8/3 together.
    CHECK(indices(ebh_of({4, 4, 4, 0}, 4, 0.5)).size() == 3);
    CHECK(indices(ebh_of({kInfinity, 1, 0}, 3, 0.5)) == std::vector<std::size_t>{0});
}

TEST_CASE("self-consistency checks")
{
    const auto table = EValueTable::from_values(std::vector<double>{8, 8, 0, 0}, 4);
    CHECK(verify_self_consistent(table, {}, 0.5).self_consistent);
    const std::vector<GroupRef> both{{0, 0}, {0, 1}};
    const auto cert = verify_self_consistent(table, both, 0.5);
    CHECK(cert.self_consistent);
    CHECK(cert.threshold == doctest::Approx(4.0));
    const auto weaker = EValueTable::from_values(std::vector<double>{8, 4, 0, 0}, 4);
    CHECK_FALSE(verify_self_consistent(weaker, both, 0.4).self_consistent);
}

TEST_CASE("table invariants")
{
    EValueTable table(2);
    CHECK_THROWS_AS(table.add({0, 0}, -1.0), PreconditionError);
    CHECK_THROWS_AS(table.add({0, 0}, kInfinity, Provenance::knockoff), PreconditionError);
    table.add({0, 0}, kInfinity, Provenance::raw);
    CHECK(table.value({0, 0}) == kInfinity);
    CHECK(table.value({0, 1}) == 0.0);
    CHECK_THROWS_AS(EValueTable(0), PreconditionError);
}

TEST_CASE("mean merge")
{
    CHECK(mean_merge(std::vector<double>{2, 4}) == 3.0);
    CHECK(mean_merge(std::vector<double>{0, 0, 0}) == 0.0);
    CHECK(mean_merge(std::vector<double>{1, 1, 1, 1}) == 1.0);
    CHECK(mean_merge(std::vector<double>{1, kInfinity}) == kInfinity);
    CHECK_THROWS_AS(mean_merge(std::vector<double>{}), PreconditionError);
}

TEST_CASE("partial conjunction e-values")
{
    CHECK(partial_conjunction_evalue(std::vector<double>{2, 4}, 1) == 3.0);
    CHECK(partial_conjunction_evalue(std::vector<double>{6, 3, 0}, 2) == 1.5);
    CHECK(partial_conjunction_evalue(std::vector<double>{6, 3, 0}, 3) == 0.0);
    CHECK_THROWS_AS(partial_conjunction_evalue(std::vector<double>{6, 3, 0}, 0), PreconditionError);
    CHECK_THROWS_AS(partial_conjunction_evalue(std::vector<double>{6, 3, 0}, 4), PreconditionError);
}

TEST_CASE("partial conjunction is nondecreasing in each input")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif(0.0, 10.0);
    std::uniform_int_distribution<std::size_t> ldist(1, 6);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t L = ldist(rng);
        std::vector<double> e(L);
        for (auto& v : e) v = unif(rng) < 3.0 ? 0.0 : unif(rng);
        const std::size_t u = std::uniform_int_distribution<std::size_t>(1, L)(rng);
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, L - 1)(rng);
        auto raised = e;
        raised[i] += unif(rng);
        CHECK(partial_conjunction_evalue(raised, u) >= partial_conjunction_evalue(e, u));
    }
}

TEST_CASE("ebh agrees with brute force and is monotone")
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double alphas[] = {0.1, 0.2, 0.5};
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + trial % 15;
        const double alpha = alphas[trial % 3];
        std::vector<double> e(n);
        for (auto& v : e) {
            const double u = unif(rng);
            v = u < 0.3 ? 0.0 : static_cast<double>(n) / (alpha * std::ceil(unif(rng) * n)) * (u < 0.7 ? 1.0 : 0.5 + unif(rng));
        }
        const auto table = EValueTable::from_values(e, static_cast<double>(n));
        const auto got = ebh(table, alpha);
        CHECK(verify_self_consistent(table, got.rejected, alpha).self_consistent);
        CHECK(indices(got) == testing::ebh_oracle(e, static_cast<double>(n), alpha));

        auto raised = e;
        const std::size_t i = trial % n;
        raised[i] = raised[i] * 2 + 1;
        const auto more = ebh(EValueTable::from_values(raised, static_cast<double>(n)), alpha);
        CHECK(std::includes(more.rejected.begin(), more.rejected.end(), got.rejected.begin(), got.rejected.end()));
    }
}

TEST_CASE("ebh controls FDR with relaxed null e-values")
{
    // 40 nulls whose e-values average exactly 1 (mass 20 at rate 1/20),
    // 10 strong signals.
    std::mt19937_64 rng(99);
    std::bernoulli_distribution hit(0.05);
    const double alpha = 0.2;
    double fdp_sum = 0.0, fdp_sq = 0.0;
    const int reps = 2000;
    for (int r = 0; r < reps; ++r) {
        std::vector<double> e(50, 0.0);
        for (std::size_t i = 0; i < 40; ++i) e[i] = hit(rng) ? 20.0 : 0.0;
        for (std::size_t i = 40; i < 50; ++i) e[i] = 30.0;
        const auto got = ebh(EValueTable::from_values(e, 50), alpha);
        std::size_t v = 0;
        for (const auto& ref : got.rejected) v += ref.group < 40;
        const double fdp = got.empty() ? 0.0 : static_cast<double>(v) / static_cast<double>(got.size());
        fdp_sum += fdp;
        fdp_sq += fdp * fdp;
    }
    const double mean = fdp_sum / reps;
    const double se = std::sqrt((fdp_sq / reps - mean * mean) / reps);
    CHECK(mean <= alpha + 2 * se);
}
