#include "kelp/family.hpp"

#include "kelp/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace kelp {

namespace {

using json = nlohmann::json;

std::string group_label(const std::string& partition_id, std::size_t g)
{
    return partition_id + "[" + std::to_string(g + 1) + "]";
}

std::string members_label(const std::vector<std::size_t>& members)
{
    std::string out = "{";
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(members[i] + 1);
    }
    return out + "}";
}

bool is_contiguous(const std::vector<std::vector<std::size_t>>& groups)
{
    return std::all_of(groups.begin(), groups.end(), [](const auto& g) {
        return g.back() - g.front() + 1 == g.size();
    });
}

} // namespace

double Partition::mean_group_size() const noexcept
{
    if (groups.empty()) return 0.0;
    std::size_t total = 0;
    for (const auto& g : groups) total += g.size();
    return static_cast<double>(total) / static_cast<double>(groups.size());
}

Partition make_partition(std::string id, std::vector<std::vector<std::size_t>> groups,
                         std::vector<double> weights)
{
    Partition part;
    part.id = std::move(id);
    part.groups = std::move(groups);
    part.weights = std::move(weights);
    return part;
}

Partition singleton_partition(std::string id, std::size_t p)
{
    std::vector<std::vector<std::size_t>> groups(p);
    for (std::size_t j = 0; j < p; ++j) groups[j] = {j};
    return make_partition(std::move(id), std::move(groups));
}

Partition block_partition(std::string id, std::size_t p, std::size_t block_size)
{
    if (block_size == 0) throw PreconditionError("block size must be positive");
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t start = 0; start < p; start += block_size) {
        std::vector<std::size_t> g;
        for (std::size_t j = start; j < std::min(p, start + block_size); ++j) g.push_back(j);
        groups.push_back(std::move(g));
    }
    return make_partition(std::move(id), std::move(groups));
}

HypothesisFamily::HypothesisFamily(std::size_t p, std::vector<Partition> partitions)
    : p_(p), partitions_(std::move(partitions))
{
    if (p_ == 0) throw PreconditionError("family needs p >= 1", "p");
    if (partitions_.empty()) throw PreconditionError("family needs at least one resolution", "resolutions");

    for (std::size_t m = 0; m < partitions_.size(); ++m) {
        auto& part = partitions_[m];
        const std::string where = "resolutions[" + std::to_string(m) + "]";
        for (std::size_t k = 0; k < m; ++k) {
            if (partitions_[k].id == part.id)
                throw ParseError("duplicate resolution id '" + part.id + "'", where + ".id");
        }
        if (part.groups.empty()) throw CoverageGapError("resolution '" + part.id + "' has no groups", where);

        std::vector<std::size_t> owner(p_, p_ + 1);
        for (std::size_t g = 0; g < part.groups.size(); ++g) {
            auto& members = part.groups[g];
            const std::string gwhere = where + ".groups[" + std::to_string(g) + "]";
            if (members.empty()) throw ParseError("empty group in resolution '" + part.id + "'", gwhere);
            std::sort(members.begin(), members.end());
            for (std::size_t i = 0; i < members.size(); ++i) {
                const std::size_t j = members[i];
                if (j >= p_) {
                    throw ParseError("index " + std::to_string(j + 1) + " outside 1.." + std::to_string(p_),
                                     gwhere);
                }
                if (i > 0 && members[i - 1] == j) {
                    throw ParseError("duplicate index " + std::to_string(j + 1) + " in group " +
                                         group_label(part.id, g),
                                     gwhere);
                }
                if (owner[j] != p_ + 1) {
                    const std::size_t other = owner[j];
                    throw OverlappingGroupsError("groups " + group_label(part.id, other) + " " +
                                                     members_label(part.groups[other]) + " and " +
                                                     group_label(part.id, g) + " " + members_label(members) +
                                                     " share index " + std::to_string(j + 1),
                                                 gwhere);
                }
                owner[j] = g;
            }
        }
        std::vector<std::size_t> missing;
        for (std::size_t j = 0; j < p_; ++j)
            if (owner[j] == p_ + 1) missing.push_back(j);
        if (!missing.empty()) {
            throw CoverageGapError("resolution '" + part.id + "' does not cover indices " + members_label(missing),
                                   where + ".groups");
        }

        if (part.weights.empty()) {
            part.weights.resize(part.groups.size());
            for (std::size_t g = 0; g < part.groups.size(); ++g)
                part.weights[g] = 1.0 / static_cast<double>(part.groups[g].size());
        }
        else if (part.weights.size() != part.groups.size()) {
            throw ParseError("resolution '" + part.id + "' has " + std::to_string(part.weights.size()) +
                                 " weights for " + std::to_string(part.groups.size()) + " groups",
                             where + ".weights");
        }
        for (std::size_t g = 0; g < part.weights.size(); ++g) {
            if (!(part.weights[g] > 0.0) || !std::isfinite(part.weights[g])) {
                throw ParseError("weights must be finite and strictly positive",
                                 where + ".weights[" + std::to_string(g) + "]");
            }
        }
        part.contiguous_intervals = is_contiguous(part.groups);
        offsets_.push_back(offsets_.back() + part.groups.size());
        owner_.push_back(std::move(owner));
    }
}

const std::vector<std::size_t>& HypothesisFamily::members(GroupRef ref) const
{
    return partitions_.at(ref.resolution).groups.at(ref.group);
}

double HypothesisFamily::weight(GroupRef ref) const
{
    return partitions_.at(ref.resolution).weights.at(ref.group);
}

bool HypothesisFamily::contains(GroupRef ref) const noexcept
{
    return ref.resolution < partitions_.size() && ref.group < partitions_[ref.resolution].groups.size();
}

std::size_t HypothesisFamily::flat_index(GroupRef ref) const
{
    if (!contains(ref)) throw PreconditionError("group reference not in family");
    return offsets_[ref.resolution] + ref.group;
}

GroupRef HypothesisFamily::ref_of(std::size_t flat) const
{
    if (flat >= total_groups()) throw PreconditionError("flat group index out of range");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
    const auto m = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {m, flat - offsets_[m]};
}

std::vector<GroupRef> HypothesisFamily::all_refs() const
{
    std::vector<GroupRef> refs;
    refs.reserve(total_groups());
    for (std::size_t m = 0; m < partitions_.size(); ++m)
        for (std::size_t g = 0; g < partitions_[m].groups.size(); ++g) refs.push_back({m, g});
    return refs;
}

bool HypothesisFamily::all_contiguous() const noexcept
{
    return std::all_of(partitions_.begin(), partitions_.end(),
                       [](const Partition& part) { return part.contiguous_intervals; });
}

std::optional<std::size_t> HypothesisFamily::resolution_index(const std::string& id) const
{
    for (std::size_t m = 0; m < partitions_.size(); ++m)
        if (partitions_[m].id == id) return m;
    return std::nullopt;
}

std::optional<std::size_t> HypothesisFamily::singleton_resolution() const
{
    for (std::size_t m = 0; m < partitions_.size(); ++m) {
        if (partitions_[m].groups.size() == p_) return m;
    }
    return std::nullopt;
}

bool HypothesisFamily::operator==(const HypothesisFamily& other) const
{
    if (p_ != other.p_ || partitions_.size() != other.partitions_.size()) return false;
    for (std::size_t m = 0; m < partitions_.size(); ++m) {
        const auto& a = partitions_[m];
        const auto& b = other.partitions_[m];
        if (a.id != b.id || a.groups != b.groups || a.weights != b.weights) return false;
    }
    return true;
}

bool is_null_group(std::span<const std::size_t> members, const TruthLabels& truth)
{
    for (const std::size_t j : members) {
        if (std::binary_search(truth.nonzero_features.begin(), truth.nonzero_features.end(), j)) return false;
    }
    return true;
}

bool null_status(const HypothesisFamily& family, const TruthLabels& truth, GroupRef ref)
{
    if (!family.contains(ref)) throw PreconditionError("group not in family");
    return is_null_group(family.members(ref), truth);
}

HypothesisFamily parse_family(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    }
    catch (const json::parse_error& e) {
        // Translate the byte offset into a line number for the report.
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i)
            if (text[i] == '\n') ++line;
        throw ParseError(std::string("malformed family document: ") + e.what(), "line " + std::to_string(line));
    }
    if (!doc.is_object()) throw ParseError("family document must be an object", "$");
    if (!doc.contains("p") || !doc["p"].is_number_integer() || doc["p"].get<long long>() < 1)
        throw ParseError("field 'p' must be a positive integer", "p");
    const auto p = static_cast<std::size_t>(doc["p"].get<long long>());
    if (!doc.contains("resolutions") || !doc["resolutions"].is_array())
        throw ParseError("field 'resolutions' must be an array", "resolutions");

    std::vector<Partition> partitions;
    const auto& resolutions = doc["resolutions"];
    for (std::size_t m = 0; m < resolutions.size(); ++m) {
        const auto& res = resolutions[m];
        const std::string where = "resolutions[" + std::to_string(m) + "]";
        if (!res.is_object()) throw ParseError("resolution entry must be an object", where);
        Partition part;
        if (!res.contains("id")) throw ParseError("missing resolution id", where + ".id");
        if (res["id"].is_string())
            part.id = res["id"].get<std::string>();
        else if (res["id"].is_number_integer())
            part.id = std::to_string(res["id"].get<long long>());
        else
            throw ParseError("resolution id must be a string or integer", where + ".id");
        if (!res.contains("groups") || !res["groups"].is_array())
            throw ParseError("field 'groups' must be an array of index arrays", where + ".groups");
        const auto& groups = res["groups"];
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const std::string gwhere = where + ".groups[" + std::to_string(g) + "]";
            if (!groups[g].is_array()) throw ParseError("group must be an array of indices", gwhere);
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < groups[g].size(); ++i) {
                const auto& v = groups[g][i];
                if (!v.is_number_integer() || v.get<long long>() < 1) {
                    throw ParseError("indices are positive integers (1-based)",
                                     gwhere + "[" + std::to_string(i) + "]");
                }
                members.push_back(static_cast<std::size_t>(v.get<long long>() - 1));
            }
            part.groups.push_back(std::move(members));
        }
        if (res.contains("weights")) {
            const auto& w = res["weights"];
            if (!w.is_array()) throw ParseError("weights must be an array of numbers", where + ".weights");
            for (std::size_t g = 0; g < w.size(); ++g) {
                if (!w[g].is_number())
                    throw ParseError("weight must be a number", where + ".weights[" + std::to_string(g) + "]");
                part.weights.push_back(w[g].get<double>());
            }
        }
        partitions.push_back(std::move(part));
    }
    return HypothesisFamily(p, std::move(partitions));
}

HypothesisFamily load_family(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open family file '" + path + "'", path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_family(buffer.str());
}

std::string save_family(const HypothesisFamily& family)
{
    json doc;
    doc["p"] = family.p();
    doc["resolutions"] = json::array();
    for (const auto& part : family.partitions()) {
        json res;
        res["id"] = part.id;
        res["groups"] = json::array();
        bool default_weights = true;
        for (std::size_t g = 0; g < part.groups.size(); ++g) {
            json members = json::array();
            for (const std::size_t j : part.groups[g]) members.push_back(j + 1);
            res["groups"].push_back(std::move(members));
            if (part.weights[g] != 1.0 / static_cast<double>(part.groups[g].size())) default_weights = false;
        }
        if (!default_weights) res["weights"] = part.weights;
        doc["resolutions"].push_back(std::move(res));
    }
    return doc.dump(2) + "\n";
}

} // namespace kelp
