#pragma once

#include "kelp/family.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace kelp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Relative slack applied to every threshold comparison (self-consistency,
// knockoff ratio, e-filter). Both sides of a boundary are computed through
// different roundings, e.g. p/(1+V) against |A|/(alpha k).
inline constexpr double kThresholdSlack = 1e-12;

/// lhs >= rhs up to kThresholdSlack, with inf >= inf.
inline bool at_least(double lhs, double rhs) noexcept
{
    if (lhs == kInfinity) return true;
    if (rhs == kInfinity) return false;
    return lhs >= rhs - kThresholdSlack * std::abs(rhs);
}

enum class Provenance { raw, knockoff, merged, partial_conjunction };

std::string to_string(Provenance provenance);

struct EValueEntry
{
    GroupRef ref;
    double value = 0.0;
    Provenance provenance = Provenance::raw;
};

/// E-values keyed by group, plus the hypothesis count used as the
/// self-consistency numerator. n_total is recorded, never inferred.
class EValueTable
{
public:
    explicit EValueTable(double n_total);

    // Plain vector of e-values as resolution 0, groups 0..n-1.
    static EValueTable from_values(std::span<const double> values, double n_total,
                                   Provenance provenance = Provenance::raw);

    void add(GroupRef ref, double value, Provenance provenance = Provenance::raw);

    double n_total() const noexcept { return n_total_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<EValueEntry>& entries() const noexcept { return entries_; }

    // Value for ref, 0 when absent.
    double value(GroupRef ref) const;
    bool contains(GroupRef ref) const;

    // Values laid out in the family's flat order; absent groups read 0.
    std::vector<double> aligned(const HypothesisFamily& family, std::size_t* missing = nullptr) const;

private:
    double n_total_;
    std::vector<EValueEntry> entries_;
};

struct Certificate
{
    double n_total = 0.0;
    std::size_t rejections = 0;
    double min_rejected_e = kInfinity;
    // n_total / (alpha * rejections); +inf when nothing is rejected.
    double threshold = kInfinity;
    bool self_consistent = true;
    bool disjoint = true;
};

struct RejectionSet
{
    std::vector<GroupRef> rejected; // sorted
    double alpha = 0.0;
    Certificate certificate;

    std::size_t size() const noexcept { return rejected.size(); }
    bool empty() const noexcept { return rejected.empty(); }
};

/// e-BH: rejects the k* largest e-values, k* = max{k : e_[k] >= n/(alpha k)}.
RejectionSet ebh(const EValueTable& evalues, double alpha);

/// Checks e >= n_total/(alpha |rejected|) for every rejected entry.
Certificate verify_self_consistent(const EValueTable& evalues, std::span<const GroupRef> rejected,
                                   double alpha);

/// Pairwise disjointness of the member sets of `rejected`.
bool verify_disjoint(const HypothesisFamily& family, std::span<const GroupRef> rejected);

double mean_merge(std::span<const double> evalues);

/// Mean of the L-u+1 smallest entries (u is 1-based).
double partial_conjunction_evalue(std::span<const double> evalues, std::size_t u);

void check_alpha(double alpha, const std::string& field = "alpha");

} // namespace kelp
