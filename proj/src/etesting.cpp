#include "kelp/etesting.hpp"

#include "kelp/errors.hpp"

#include <algorithm>
#include <numeric>

namespace kelp {

std::string to_string(Provenance provenance)
{
    switch (provenance) {
    case Provenance::raw: return "raw";
    case Provenance::knockoff: return "knockoff";
    case Provenance::merged: return "merged";
    case Provenance::partial_conjunction: return "partial-conjunction";
    }
    return "raw";
}

void check_alpha(double alpha, const std::string& field)
{
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw PreconditionError("level must lie in (0,1), got " + std::to_string(alpha), field);
    }
}

EValueTable::EValueTable(double n_total)
    : n_total_(n_total)
{
    if (!(n_total > 0.0) || !std::isfinite(n_total))
        throw PreconditionError("n_total must be a positive finite count", "n_total");
}

EValueTable EValueTable::from_values(std::span<const double> values, double n_total, Provenance provenance)
{
    EValueTable table(n_total);
    for (std::size_t i = 0; i < values.size(); ++i) table.add({0, i}, values[i], provenance);
    return table;
}

void EValueTable::add(GroupRef ref, double value, Provenance provenance)
{
    if (std::isnan(value) || value < 0.0) throw PreconditionError("e-values must be nonnegative", "evalue");
    if (std::isinf(value) && provenance != Provenance::raw)
        throw PreconditionError("only raw e-values may be infinite", "evalue");
    entries_.push_back({ref, value, provenance});
}

double EValueTable::value(GroupRef ref) const
{
    for (const auto& entry : entries_)
        if (entry.ref == ref) return entry.value;
    return 0.0;
}

bool EValueTable::contains(GroupRef ref) const
{
    return std::any_of(entries_.begin(), entries_.end(), [&](const EValueEntry& e) { return e.ref == ref; });
}

std::vector<double> EValueTable::aligned(const HypothesisFamily& family, std::size_t* missing) const
{
    std::vector<double> out(family.total_groups(), 0.0);
    std::vector<bool> seen(family.total_groups(), false);
    for (const auto& entry : entries_) {
        if (!family.contains(entry.ref)) throw PreconditionError("e-value for a group outside the family");
        const std::size_t k = family.flat_index(entry.ref);
        out[k] = entry.value;
        seen[k] = true;
    }
    if (missing) *missing = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), false));
    return out;
}

Certificate verify_self_consistent(const EValueTable& evalues, std::span<const GroupRef> rejected, double alpha)
{
    Certificate cert;
    cert.n_total = evalues.n_total();
    cert.rejections = rejected.size();
    if (rejected.empty()) return cert;
    cert.threshold = evalues.n_total() / (alpha * static_cast<double>(rejected.size()));
    for (const auto& ref : rejected) {
        const double e = evalues.value(ref);
        cert.min_rejected_e = std::min(cert.min_rejected_e, e);
        if (!at_least(e, cert.threshold)) cert.self_consistent = false;
    }
    return cert;
}

bool verify_disjoint(const HypothesisFamily& family, std::span<const GroupRef> rejected)
{
    std::vector<bool> used(family.p(), false);
    for (const auto& ref : rejected) {
        for (const std::size_t j : family.members(ref)) {
            if (used[j]) return false;
            used[j] = true;
        }
    }
    return true;
}

RejectionSet ebh(const EValueTable& evalues, double alpha)
{
    check_alpha(alpha);
    RejectionSet out;
    out.alpha = alpha;
    const auto& entries = evalues.entries();
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return entries[a].value > entries[b].value; });

    // Largest k with e_[k] >= n/(alpha k). Any entry tied with e_[k*] would
    // make k*+1 valid too, so ties at the boundary are rejected together.
    std::size_t k_star = 0;
    for (std::size_t k = 1; k <= order.size(); ++k) {
        const double threshold = evalues.n_total() / (alpha * static_cast<double>(k));
        if (at_least(entries[order[k - 1]].value, threshold)) k_star = k;
    }
    for (std::size_t k = 0; k < k_star; ++k) out.rejected.push_back(entries[order[k]].ref);
    std::sort(out.rejected.begin(), out.rejected.end());
    out.certificate = verify_self_consistent(evalues, out.rejected, alpha);
    out.certificate.disjoint = false;
    return out;
}

double mean_merge(std::span<const double> evalues)
{
    if (evalues.empty()) throw PreconditionError("mean_merge needs at least one e-value");
    double sum = 0.0;
    for (const double e : evalues) {
        if (std::isnan(e) || e < 0.0) throw PreconditionError("e-values must be nonnegative");
        if (e == kInfinity) return kInfinity;
        sum += e;
    }
    return sum / static_cast<double>(evalues.size());
}

double partial_conjunction_evalue(std::span<const double> evalues, std::size_t u)
{
    const std::size_t L = evalues.size();
    if (u < 1 || u > L) {
        throw PreconditionError("partial conjunction needs 1 <= u <= L (u=" + std::to_string(u) +
                                ", L=" + std::to_string(L) + ")");
    }
    std::vector<double> sorted(evalues.begin(), evalues.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    return mean_merge(std::span<const double>(sorted).subspan(u - 1));
}

} // namespace kelp
