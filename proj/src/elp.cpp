#include "kelp/elp.hpp"

#include "kelp/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <numeric>

namespace kelp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool improves(double candidate, double incumbent)
{
    if (incumbent == kNegInf) return candidate > kNegInf;
    return candidate > incumbent + 1e-12 * std::max(1.0, std::abs(incumbent));
}

struct Candidate
{
    std::size_t flat;
    GroupRef ref;
    const std::vector<std::size_t>* members;
    double weight;
    double evalue;
};

// Groups that can appear in any self-consistent set, sorted by descending
// e-value with ties in flat order.
std::vector<Candidate> eligible(const ElpProblem& problem)
{
    const auto& family = problem.family;
    const auto& e = problem.flat_evalues();
    const double loosest = problem.evalues.n_total() / (problem.alpha * static_cast<double>(family.total_groups()));
    std::vector<Candidate> out;
    for (std::size_t k = 0; k < family.total_groups(); ++k) {
        if (e[k] <= 0.0 || !at_least(e[k], loosest)) continue;
        const GroupRef ref = family.ref_of(k);
        out.push_back({k, ref, &family.members(ref), family.weight(ref), e[k]});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Candidate& a, const Candidate& b) { return a.evalue > b.evalue; });
    return out;
}

// Collapses identical member sets: the highest weight survives, then the
// earliest entry of the (descending e) order.
std::vector<Candidate> collapse_duplicates(std::vector<Candidate> cands)
{
    std::map<std::vector<std::size_t>, std::size_t> seen;
    std::vector<Candidate> out;
    for (const auto& c : cands) {
        auto [it, inserted] = seen.emplace(*c.members, out.size());
        if (inserted) {
            out.push_back(c);
        } else if (c.weight > out[it->second].weight) {
            out[it->second] = c;
        }
    }
    return out;
}

// Prefix of `sorted` passing the threshold for rejection count R.
std::size_t prefix_length(const std::vector<Candidate>& sorted, double n_total, double alpha, std::size_t R)
{
    const double threshold = n_total / (alpha * static_cast<double>(R));
    std::size_t len = 0;
    while (len < sorted.size() && at_least(sorted[len].evalue, threshold)) ++len;
    return len;
}

// best[c] = max weight of exactly c disjoint candidates, with a witness.
struct CountProfile
{
    std::vector<double> best;
    std::vector<std::vector<std::size_t>> witness; // indices into the candidate list
};

// Components of the overlap graph among `cands`.
std::vector<std::vector<std::size_t>> overlap_components(const std::vector<Candidate>& cands, std::size_t p)
{
    std::vector<std::size_t> parent(cands.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::vector<std::size_t> first_owner(p, cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        for (const std::size_t j : *cands[i].members) {
            if (first_owner[j] == cands.size()) {
                first_owner[j] = i;
            } else {
                parent[find(i)] = find(first_owner[j]);
            }
        }
    }
    std::map<std::size_t, std::vector<std::size_t>> byroot;
    for (std::size_t i = 0; i < cands.size(); ++i) byroot[find(i)].push_back(i);
    std::vector<std::vector<std::size_t>> out;
    for (auto& [root, comp] : byroot) out.push_back(std::move(comp));
    std::sort(out.begin(), out.end());
    return out;
}

class ComponentEnumerator
{
public:
    ComponentEnumerator(const std::vector<Candidate>& cands, const std::vector<std::size_t>& comp, std::size_t p)
        : cands_(cands), comp_(comp), used_(p, false)
    {
        profile_.best.assign(comp.size() + 1, kNegInf);
        profile_.witness.assign(comp.size() + 1, {});
        profile_.best[0] = 0.0;
    }

    CountProfile run()
    {
        walk(0, 0.0);
        return std::move(profile_);
    }

private:
    void walk(std::size_t i, double weight)
    {
        if (i == comp_.size()) {
            const std::size_t c = chosen_.size();
            if (improves(weight, profile_.best[c])) {
                profile_.best[c] = weight;
                profile_.witness[c] = chosen_;
            }
            return;
        }
        const auto& cand = cands_[comp_[i]];
        const auto& members = *cand.members;
        const bool free = std::none_of(members.begin(), members.end(), [&](std::size_t j) { return used_[j]; });
        if (free) {
            for (const std::size_t j : members) used_[j] = true;
            chosen_.push_back(comp_[i]);
            walk(i + 1, weight + cand.weight);
            chosen_.pop_back();
            for (const std::size_t j : members) used_[j] = false;
        }
        walk(i + 1, weight);
    }

    const std::vector<Candidate>& cands_;
    const std::vector<std::size_t>& comp_;
    std::vector<bool> used_;
    std::vector<std::size_t> chosen_;
    CountProfile profile_;
};

// Max-plus convolution of per-component profiles.
CountProfile combine_profiles(const std::vector<CountProfile>& parts)
{
    std::size_t total = 0;
    for (const auto& part : parts) total += part.best.size() - 1;
    std::vector<double> best(total + 1, kNegInf);
    best[0] = 0.0;
    std::vector<std::vector<std::size_t>> take(parts.size(), std::vector<std::size_t>(total + 1, 0));
    std::size_t reach = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& part = parts[k].best;
        std::vector<double> next(total + 1, kNegInf);
        for (std::size_t a = 0; a <= reach; ++a) {
            if (best[a] == kNegInf) continue;
            for (std::size_t b = 0; b < part.size(); ++b) {
                if (part[b] == kNegInf) continue;
                const double v = best[a] + part[b];
                if (improves(v, next[a + b])) {
                    next[a + b] = v;
                    take[k][a + b] = b;
                }
            }
        }
        reach += part.size() - 1;
        best = std::move(next);
    }
    CountProfile out;
    out.best = best;
    out.witness.assign(total + 1, {});
    for (std::size_t c = 0; c <= total; ++c) {
        if (best[c] == kNegInf) continue;
        std::size_t rest = c;
        for (std::size_t k = parts.size(); k-- > 0;) {
            const std::size_t b = take[k][rest];
            const auto& w = parts[k].witness[b];
            out.witness[c].insert(out.witness[c].end(), w.begin(), w.end());
            rest -= b;
        }
    }
    return out;
}

CountProfile exact_profile(const std::vector<Candidate>& cands, std::size_t p)
{
    std::vector<CountProfile> parts;
    for (const auto& comp : overlap_components(cands, p)) {
        parts.push_back(ComponentEnumerator(cands, comp, p).run());
    }
    return combine_profiles(parts);
}

CountProfile interval_profile(const std::vector<Candidate>& cands)
{
    const std::size_t n = cands.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto left = [&](std::size_t i) { return cands[i].members->front(); };
    auto right = [&](std::size_t i) { return cands[i].members->back(); };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (right(a) != right(b)) return right(a) < right(b);
        if (left(a) != left(b)) return left(a) < left(b);
        return cands[a].flat < cands[b].flat;
    });
    // pred[i]: number of leading intervals (in `order`) ending before interval i starts.
    std::vector<std::size_t> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t l = left(order[i]);
        auto it = std::partition_point(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(i),
                                       [&](std::size_t k) { return right(k) < l; });
        pred[i] = static_cast<std::size_t>(it - order.begin());
    }
    // dp[i][c]: best weight using the first i intervals, exactly c chosen.
    std::vector<std::vector<double>> dp(n + 1, std::vector<double>(n + 1, kNegInf));
    std::vector<std::vector<bool>> took(n + 1, std::vector<bool>(n + 1, false));
    dp[0][0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        const double w = cands[order[i - 1]].weight;
        const std::size_t q = pred[i - 1];
        for (std::size_t c = 0; c <= i; ++c) {
            dp[i][c] = dp[i - 1][c];
            if (c > 0 && dp[q][c - 1] != kNegInf && improves(dp[q][c - 1] + w, dp[i][c])) {
                dp[i][c] = dp[q][c - 1] + w;
                took[i][c] = true;
            }
        }
    }
    CountProfile out;
    out.best = dp[n];
    out.witness.assign(n + 1, {});
    for (std::size_t c = 0; c <= n; ++c) {
        if (dp[n][c] == kNegInf) continue;
        std::size_t i = n, k = c;
        while (k > 0) {
            if (took[i][k]) {
                out.witness[c].push_back(order[i - 1]);
                i = pred[i - 1];
                --k;
            } else {
                --i;
            }
        }
    }
    return out;
}

template <typename ProfileFn>
ElpSolution solve_by_count(const ElpProblem& problem, const std::string& solver_id, ProfileFn profile_of)
{
    const auto sorted = eligible(problem);
    const double n_total = problem.evalues.n_total();
    double best_obj = 0.0;
    std::vector<GroupRef> best_refs;

    std::size_t cached_len = static_cast<std::size_t>(-1);
    std::vector<Candidate> cands;
    CountProfile profile;
    for (std::size_t R = 1; R <= sorted.size(); ++R) {
        const std::size_t len = prefix_length(sorted, n_total, problem.alpha, R);
        if (len < R) continue;
        if (len != cached_len) {
            cands = collapse_duplicates(std::vector<Candidate>(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(len)));
            profile = profile_of(cands);
            cached_len = len;
        }
        std::size_t arg = 0;
        double value = kNegInf;
        for (std::size_t c = R; c < profile.best.size(); ++c) {
            if (improves(profile.best[c], value)) {
                value = profile.best[c];
                arg = c;
            }
        }
        if (value == kNegInf || !improves(value, best_obj)) continue;
        best_obj = value;
        best_refs.clear();
        for (const std::size_t i : profile.witness[arg]) best_refs.push_back(cands[i].ref);
    }

    ElpSolution sol;
    sol.solver = solver_id;
    sol.rejections.alpha = problem.alpha;
    sol.rejections.rejected = std::move(best_refs);
    std::sort(sol.rejections.rejected.begin(), sol.rejections.rejected.end());
    sol.objective = selection_weight(problem.family, sol.rejections.rejected);
    certify(sol.rejections, problem.family, problem.evalues);
    return sol;
}

class BranchBound
{
public:
    BranchBound(const ElpProblem& problem, std::uint64_t budget)
        : problem_(problem), cands_(eligible(problem)), budget_(budget), used_(problem.family.p(), false),
          target_(problem.evalues.n_total() / problem.alpha)
    {
        incidence_.assign(problem.family.p(), {});
        for (std::size_t i = 0; i < cands_.size(); ++i) {
            for (const std::size_t j : *cands_[i].members) incidence_[j].push_back(i);
        }
    }

    ElpSolution run()
    {
        walk(0, 0.0, kInfinity);
        ElpSolution sol;
        sol.solver = "bnb";
        sol.optimal = !exhausted_;
        sol.nodes = nodes_;
        sol.rejections.alpha = problem_.alpha;
        for (const std::size_t i : best_) sol.rejections.rejected.push_back(cands_[i].ref);
        std::sort(sol.rejections.rejected.begin(), sol.rejections.rejected.end());
        sol.objective = selection_weight(problem_.family, sol.rejections.rejected);
        certify(sol.rejections, problem_.family, problem_.evalues);
        return sol;
    }

private:
    bool is_free(std::size_t i) const
    {
        const auto& m = *cands_[i].members;
        return std::none_of(m.begin(), m.end(), [&](std::size_t j) { return used_[j]; });
    }

    bool feasible(double emin, std::size_t count) const
    {
        return count == 0 || at_least(emin, target_ / static_cast<double>(count));
    }

    // Fractional bound on the weight still attainable from candidates >= i,
    // plus the number of them that could still be added.
    std::pair<double, std::size_t> bound(std::size_t i) const
    {
        double extra = 0.0;
        std::size_t free_features = 0;
        for (std::size_t j = 0; j < used_.size(); ++j) {
            if (used_[j]) continue;
            double share = 0.0;
            for (const std::size_t k : incidence_[j]) {
                if (k < i || !is_free(k)) continue;
                share = std::max(share, cands_[k].weight / static_cast<double>(cands_[k].members->size()));
            }
            if (share > 0.0) ++free_features;
            extra += share;
        }
        std::size_t addable = 0;
        for (std::size_t k = i; k < cands_.size() && addable < free_features; ++k) {
            if (is_free(k)) ++addable;
        }
        return {extra, addable};
    }

    void walk(std::size_t i, double weight, double emin)
    {
        if (exhausted_) return;
        if (budget_ != 0 && nodes_ >= budget_) {
            exhausted_ = true;
            return;
        }
        ++nodes_;
        if (feasible(emin, chosen_.size()) && improves(weight, best_weight_)) {
            best_weight_ = weight;
            best_ = chosen_;
        }
        if (i >= cands_.size()) return;
        const auto [extra, addable] = bound(i);
        if (addable == 0 || !improves(weight + extra, best_weight_)) return;
        const double reachable_emin = std::min(emin, cands_[i].evalue);
        if (!at_least(reachable_emin, target_ / static_cast<double>(chosen_.size() + addable))) return;

        if (is_free(i)) {
            const auto& m = *cands_[i].members;
            for (const std::size_t j : m) used_[j] = true;
            chosen_.push_back(i);
            walk(i + 1, weight + cands_[i].weight, std::min(emin, cands_[i].evalue));
            chosen_.pop_back();
            for (const std::size_t j : m) used_[j] = false;
        }
        walk(i + 1, weight, emin);
    }

    const ElpProblem& problem_;
    std::vector<Candidate> cands_;
    std::uint64_t budget_;
    std::vector<bool> used_;
    double target_;
    std::vector<std::vector<std::size_t>> incidence_;
    std::vector<std::size_t> chosen_;
    std::vector<std::size_t> best_;
    double best_weight_ = 0.0;
    std::uint64_t nodes_ = 0;
    bool exhausted_ = false;
};

bool is_subset(const std::vector<std::size_t>& inner, const std::vector<std::size_t>& outer)
{
    return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
}

} // namespace

ElpProblem::ElpProblem(HypothesisFamily family_in, EValueTable evalues_in, double alpha_in)
    : family(std::move(family_in)), evalues(std::move(evalues_in)), alpha(alpha_in)
{
    check_alpha(alpha);
    flat_ = evalues.aligned(family, &missing_);
}

SolverKind parse_solver(const std::string& name)
{
    if (name == "auto") return SolverKind::automatic;
    if (name == "exact") return SolverKind::exact;
    if (name == "dp") return SolverKind::interval_dp;
    if (name == "bnb") return SolverKind::branch_bound;
    throw PreconditionError("unknown solver '" + name + "' (expected auto|exact|dp|bnb)", "solver");
}

std::string to_string(SolverKind kind)
{
    switch (kind) {
    case SolverKind::automatic: return "auto";
    case SolverKind::exact: return "exact";
    case SolverKind::interval_dp: return "dp";
    case SolverKind::branch_bound: return "bnb";
    }
    return "auto";
}

double selection_weight(const HypothesisFamily& family, const std::vector<GroupRef>& refs)
{
    double total = 0.0;
    for (const auto& ref : refs) total += family.weight(ref);
    return total;
}

void certify(RejectionSet& set, const HypothesisFamily& family, const EValueTable& evalues)
{
    set.certificate = verify_self_consistent(evalues, set.rejected, set.alpha);
    set.certificate.disjoint = verify_disjoint(family, set.rejected);
}

ElpSolution solve_exact(const ElpProblem& problem)
{
    const std::size_t p = problem.family.p();
    return solve_by_count(problem, "exact", [p](const std::vector<Candidate>& c) { return exact_profile(c, p); });
}

ElpSolution solve_interval_dp(const ElpProblem& problem)
{
    for (std::size_t m = 0; m < problem.family.resolution_count(); ++m) {
        if (!problem.family.partition(m).contiguous_intervals) {
            throw PreconditionError("interval solver needs contiguous groups; resolution '" +
                                        problem.family.partition(m).id + "' has a non-interval group",
                                    "solver");
        }
    }
    return solve_by_count(problem, "dp", [](const std::vector<Candidate>& c) { return interval_profile(c); });
}

ElpSolution solve_branch_bound(const ElpProblem& problem, std::uint64_t node_budget)
{
    return BranchBound(problem, node_budget).run();
}

ElpSolution solve(const ElpProblem& problem, SolverKind kind, std::uint64_t node_budget)
{
    switch (kind) {
    case SolverKind::exact: return solve_exact(problem);
    case SolverKind::interval_dp: return solve_interval_dp(problem);
    case SolverKind::branch_bound: return solve_branch_bound(problem, node_budget);
    case SolverKind::automatic: break;
    }
    return problem.family.all_contiguous() ? solve_interval_dp(problem) : solve_exact(problem);
}

Filter identity_filter()
{
    return [](const std::vector<GroupRef>& candidates, const EValueTable&) { return candidates; };
}

std::vector<GroupRef> outer_node_filter(const std::vector<GroupRef>& candidates, const HypothesisFamily& family,
                                        const EValueTable& evalues)
{
    std::vector<Candidate> cands;
    for (const auto& ref : candidates) {
        cands.push_back({family.flat_index(ref), ref, &family.members(ref), family.weight(ref), evalues.value(ref)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.evalue != b.evalue) return a.evalue > b.evalue;
        return a.flat < b.flat;
    });
    cands = collapse_duplicates(std::move(cands));
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.flat < b.flat; });

    std::vector<std::vector<std::size_t>> incidence(family.p());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        for (const std::size_t j : *cands[i].members) incidence[j].push_back(i);
    }
    bool laminar = true;
    std::vector<bool> has_inner(cands.size(), false);
    for (std::size_t i = 0; i < cands.size() && laminar; ++i) {
        std::vector<std::size_t> touching;
        for (const std::size_t j : *cands[i].members) {
            touching.insert(touching.end(), incidence[j].begin(), incidence[j].end());
        }
        std::sort(touching.begin(), touching.end());
        touching.erase(std::unique(touching.begin(), touching.end()), touching.end());
        for (const std::size_t k : touching) {
            if (k == i) continue;
            const auto& a = *cands[i].members;
            const auto& b = *cands[k].members;
            if (is_subset(b, a)) {
                has_inner[i] = true;
            } else if (!is_subset(a, b)) {
                laminar = false;
                break;
            }
        }
    }

    std::vector<GroupRef> out;
    if (laminar) {
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (!has_inner[i]) out.push_back(cands[i].ref);
        }
    } else {
        const CountProfile profile = exact_profile(cands, family.p());
        std::size_t arg = 0;
        for (std::size_t c = 0; c < profile.best.size(); ++c) {
            if (improves(profile.best[c], profile.best[arg])) arg = c;
        }
        for (const std::size_t i : profile.witness[arg]) out.push_back(cands[i].ref);
    }
    std::sort(out.begin(), out.end());
    return out;
}

Filter make_outer_node_filter(const HypothesisFamily& family)
{
    return [family](const std::vector<GroupRef>& candidates, const EValueTable& evalues) {
        return outer_node_filter(candidates, family, evalues);
    };
}

RejectionSet focused_ebh(const EValueTable& evalues, double alpha, const Filter& filter)
{
    check_alpha(alpha);
    std::vector<double> thresholds;
    for (const auto& entry : evalues.entries()) {
        if (entry.value > 0.0) thresholds.push_back(entry.value);
    }
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    if (thresholds.empty() || thresholds.back() != kInfinity) thresholds.push_back(kInfinity);

    RejectionSet out;
    out.alpha = alpha;
    const double target = evalues.n_total() / alpha;
    for (const double t : thresholds) {
        std::vector<GroupRef> candidates;
        for (const auto& entry : evalues.entries()) {
            if (entry.value >= t) candidates.push_back(entry.ref);
        }
        std::sort(candidates.begin(), candidates.end());
        std::vector<GroupRef> kept = filter(candidates, evalues);
        if (kept.empty() || !at_least(t, target / static_cast<double>(kept.size()))) continue;
        std::sort(kept.begin(), kept.end());
        out.rejected = std::move(kept);
        break;
    }
    out.certificate = verify_self_consistent(evalues, out.rejected, alpha);
    out.certificate.disjoint = false;
    return out;
}

RejectionSet focused_ebh(const HypothesisFamily& family, const EValueTable& evalues, double alpha)
{
    RejectionSet out = focused_ebh(evalues, alpha, make_outer_node_filter(family));
    certify(out, family, evalues);
    return out;
}

std::string solution_report(const ElpSolution& solution, const HypothesisFamily& family, const EValueTable& evalues)
{
    using nlohmann::ordered_json;
    ordered_json doc;
    doc["solver"] = solution.solver;
    doc["optimal"] = solution.optimal;
    doc["nodes"] = solution.nodes;
    doc["alpha"] = solution.rejections.alpha;
    doc["n_total"] = evalues.n_total();
    doc["objective"] = solution.objective;
    const auto& cert = solution.rejections.certificate;
    doc["threshold"] = cert.rejections == 0 ? ordered_json(nullptr) : ordered_json(cert.threshold);
    doc["min_rejected_evalue"] = cert.rejections == 0 ? ordered_json(nullptr) : ordered_json(cert.min_rejected_e);
    doc["self_consistent"] = cert.self_consistent;
    doc["disjoint"] = cert.disjoint;
    ordered_json rows = ordered_json::array();
    for (const auto& ref : solution.rejections.rejected) {
        ordered_json row;
        row["resolution_id"] = family.partition(ref.resolution).id;
        row["group_index"] = ref.group + 1;
        std::vector<std::size_t> members;
        for (const std::size_t j : family.members(ref)) members.push_back(j + 1);
        row["members"] = members;
        const double e = evalues.value(ref);
        row["evalue"] = std::isinf(e) ? ordered_json("inf") : ordered_json(e);
        row["weight"] = family.weight(ref);
        rows.push_back(row);
    }
    doc["rejections"] = rows;
    return doc.dump(2) + "\n";
}

} // namespace kelp
