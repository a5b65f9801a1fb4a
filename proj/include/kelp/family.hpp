#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kelp {

/// Identifies one group of a family: the partition (resolution) position as
/// declared, and the group position inside that partition. Both 0-based.
struct GroupRef
{
    std::size_t resolution = 0;
    std::size_t group = 0;

    auto operator<=>(const GroupRef&) const = default;
};

/// One partition of the features {0..p-1} into disjoint nonempty groups.
/// Member indices are 0-based and sorted; files use 1-based indices.
struct Partition
{
    std::string id;
    std::vector<std::vector<std::size_t>> groups;
    std::vector<double> weights;
    // Every group is a run of consecutive indices. Detected on construction.
    bool contiguous_intervals = false;

    std::size_t size() const noexcept { return groups.size(); }
    double mean_group_size() const noexcept;
};

/// A multi-resolution collection of groups over p features. Immutable once
/// built; every constructor validates disjointness, coverage and weights.
class HypothesisFamily
{
public:
    HypothesisFamily() = default;

    // `partitions[k].weights` may be empty, in which case w(A)=1/|A|.
    HypothesisFamily(std::size_t p, std::vector<Partition> partitions);

    std::size_t p() const noexcept { return p_; }
    std::size_t resolution_count() const noexcept { return partitions_.size(); }
    std::size_t total_groups() const noexcept { return offsets_.back(); }
    const std::vector<Partition>& partitions() const noexcept { return partitions_; }
    const Partition& partition(std::size_t m) const { return partitions_.at(m); }

    const std::vector<std::size_t>& members(GroupRef ref) const;
    double weight(GroupRef ref) const;
    bool contains(GroupRef ref) const noexcept;

    // Flat numbering of all groups in declared order (resolution, group).
    std::size_t flat_index(GroupRef ref) const;
    GroupRef ref_of(std::size_t flat) const;
    std::vector<GroupRef> all_refs() const;

    // Group of partition m holding feature j.
    std::size_t group_of(std::size_t m, std::size_t feature) const { return owner_.at(m).at(feature); }

    bool all_contiguous() const noexcept;
    std::optional<std::size_t> resolution_index(const std::string& id) const;
    // First partition whose groups are all singletons, if any.
    std::optional<std::size_t> singleton_resolution() const;

    bool operator==(const HypothesisFamily& other) const;

private:
    std::size_t p_ = 0;
    std::vector<Partition> partitions_;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::vector<std::size_t>> owner_;
};

/// Simulation ground truth: the set of features with nonzero effect.
struct TruthLabels
{
    std::vector<std::size_t> nonzero_features; // 0-based, sorted
};

/// H_A is null iff A contains no nonzero feature.
bool null_status(const HypothesisFamily& family, const TruthLabels& truth, GroupRef ref);
bool is_null_group(std::span<const std::size_t> members, const TruthLabels& truth);

// Builders used by simulations and tests.
Partition singleton_partition(std::string id, std::size_t p);
Partition block_partition(std::string id, std::size_t p, std::size_t block_size);
Partition make_partition(std::string id, std::vector<std::vector<std::size_t>> groups,
                         std::vector<double> weights = {});

// JSON-shaped family document. Parse errors carry line or field location.
HypothesisFamily parse_family(const std::string& text);
HypothesisFamily load_family(const std::string& path);
std::string save_family(const HypothesisFamily& family);

} // namespace kelp
