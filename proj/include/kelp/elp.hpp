#pragma once

#include "kelp/etesting.hpp"
#include "kelp/family.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kelp {

/// Weighted, disjoint, self-consistent selection over a multi-resolution
/// family. The self-consistency numerator is evalues.n_total().
struct ElpProblem
{
    HypothesisFamily family;
    EValueTable evalues;
    double alpha = 0.1;

    ElpProblem(HypothesisFamily family, EValueTable evalues, double alpha);

    // Per-group e-values in flat order (absent groups are 0).
    const std::vector<double>& flat_evalues() const noexcept { return flat_; }
    std::size_t missing_evalues() const noexcept { return missing_; }

private:
    std::vector<double> flat_;
    std::size_t missing_ = 0;
};

struct ElpSolution
{
    RejectionSet rejections;
    double objective = 0.0;
    std::string solver;
    bool optimal = true;
    std::uint64_t nodes = 0;
};

enum class SolverKind { automatic, exact, interval_dp, branch_bound };

SolverKind parse_solver(const std::string& name);
std::string to_string(SolverKind kind);

/// Exact optimum via the rejection-count decomposition. For each count R the
/// candidates are {e >= n/(alpha R)}; the best selection of size >= R is read
/// off a per-component count profile of maximum weights.
ElpSolution solve_exact(const ElpProblem& problem);

/// Same optimum as solve_exact; requires every group to be a contiguous run.
/// The inner selection is weighted interval scheduling with a count axis.
ElpSolution solve_interval_dp(const ElpProblem& problem);

/// Depth-first branch and bound on the binary choices, bounded by the
/// fractional covering relaxation. Stops after `node_budget` nodes and then
/// reports optimal=false. A budget of 0 means unlimited.
ElpSolution solve_branch_bound(const ElpProblem& problem, std::uint64_t node_budget = 0);

/// Dispatch; automatic picks the interval DP when all partitions are
/// contiguous and solve_exact otherwise.
ElpSolution solve(const ElpProblem& problem, SolverKind kind = SolverKind::automatic,
                  std::uint64_t node_budget = 0);

/// Maps a candidate set to a subset of pairwise disjoint groups.
using Filter = std::function<std::vector<GroupRef>(const std::vector<GroupRef>&, const EValueTable&)>;

Filter identity_filter();

/// Laminar candidates: keep those with no candidate strictly inside them.
/// Otherwise: maximum-weight disjoint selection, ties to the lowest indices.
/// Candidates with identical member sets are collapsed first (highest weight,
/// then highest e-value, then lowest flat index).
std::vector<GroupRef> outer_node_filter(const std::vector<GroupRef>& candidates, const HypothesisFamily& family,
                                        const EValueTable& evalues);
Filter make_outer_node_filter(const HypothesisFamily& family);

/// Threshold scan: t* is the least t in {e values} u {inf} with
/// t * |filter({e >= t})| >= n/alpha; returns filter({e >= t*}).
RejectionSet focused_ebh(const EValueTable& evalues, double alpha, const Filter& filter);
RejectionSet focused_ebh(const HypothesisFamily& family, const EValueTable& evalues, double alpha);

double selection_weight(const HypothesisFamily& family, const std::vector<GroupRef>& refs);

/// Fills the certificate of `set` against the family and table.
void certify(RejectionSet& set, const HypothesisFamily& family, const EValueTable& evalues);

/// JSON document: rejections (1-based), objective, threshold, optimality.
std::string solution_report(const ElpSolution& solution, const HypothesisFamily& family,
                            const EValueTable& evalues);

} // namespace kelp
