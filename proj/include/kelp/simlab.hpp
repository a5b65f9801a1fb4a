#pragma once

#include "kelp/family.hpp"
#include "kelp/kelp.hpp"
#include "kelp/knockoffs.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace kelp {

enum class DesignKind { block_ar1, ar1_global, fixed_equi_mlkf, outcome_tree };

std::string to_string(DesignKind kind);
DesignKind parse_design(const std::string& name);

// gaussian: N(mu, tau^2) with |beta| floored at 0.1 tau.
// fixed: amplitude / sqrt(n) with random signs.
enum class AmplitudeLaw { gaussian, fixed };

struct SweepAxis
{
    std::string name;
    std::vector<double> values;
};

struct ScenarioConfig
{
    DesignKind design = DesignKind::block_ar1;
    std::size_t p = 200;
    std::size_t n = 0; // 0 derives n from n_over_p
    double n_over_p = 1.0;
    double rho = 0.8;
    std::size_t block = 5;                      // covariance block size for block-ar1
    std::vector<std::size_t> group_sizes{1, 5}; // one contiguous partition per entry
    double sparsity = 0.05;
    std::size_t nonzero_groups = 0; // when set, nonzeros lie inside this many groups of the coarsest partition
    AmplitudeLaw amplitude_law = AmplitudeLaw::gaussian;
    double mu = 0.0;
    double tau = 0.2;
    double amplitude = 5.0;
    double signal_scale = 1.0;
    std::size_t outcomes = 1; // independent Gaussian outcomes sharing X
    std::size_t pc_u = 1;
    bool pc_strict = true;
    double alpha = 0.2;
    std::string gamma = "half"; // preset name or a number
    std::vector<std::string> methods{"kelp"};
    std::size_t replicates = 100;
    std::uint64_t seed = 1;
    std::size_t folds = 10;
    std::size_t n_lambda = 100;
    double case_rate = 0.15;
    double sibling_overlap = 0.5;
    std::string cache_dir;
    std::optional<SweepAxis> sweep;
};

/// Strict parse: unknown fields and wrong types fail with the field named.
ScenarioConfig parse_scenario(const std::string& json_text);
ScenarioConfig load_scenario(const std::string& path);
std::string scenario_json(const ScenarioConfig& config);

/// Copy of `config` with one sweep parameter set.
ScenarioConfig with_parameter(const ScenarioConfig& config, const std::string& name, double value);

std::size_t resolved_n(const ScenarioConfig& config);
std::size_t nonzero_count(const ScenarioConfig& config);
std::uint64_t replicate_seed(std::uint64_t master, std::size_t replicate);

inline const std::vector<std::string>& method_roster()
{
    static const std::vector<std::string> roster{"kelp",   "knockoff-per-resolution", "knockoffs-outer",
                                                 "ebh-knockoffs-outer", "efilter", "emkf",
                                                 "pc-kelp"};
    return roster;
}

// Tree nodes: leaves 0..3, internal {0,1} and {2,3} as 4 and 5, root 6.
inline constexpr std::size_t kTreeNodes = 7;
inline constexpr std::size_t kTreeLeaves = 4;

struct ScenarioData
{
    HypothesisFamily family;
    Matrix X;
    std::vector<Matrix> knockoffs;         // per resolution; one shared copy for fixed-equi and tree
    std::vector<Vector> y;                 // per outcome; tree: per node
    std::vector<Vector> beta;              // per outcome; tree: per leaf
    std::vector<TruthLabels> outcome_truth; // per outcome over features; tree: per leaf
    TruthLabels truth;                     // over the family's base units
    double snr = 0.0;
    std::vector<double> intercepts; // tree leaves
    std::vector<double> case_rates; // tree leaves
    std::uint64_t seed = 0;
};

ScenarioData generate_scenario(const ScenarioConfig& config, std::size_t replicate);

/// Family of the tree design over 4p units (feature j, leaf l) = 4j + l,
/// with resolutions leaf, internal and root.
HypothesisFamily tree_family(std::size_t p);

struct MethodOutput
{
    std::string method;
    std::vector<GroupRef> rejected;
    bool certified = true;
    // Which truth scores this output: an outcome index, or the partial
    // conjunction rule over all outcomes.
    bool partial_conjunction = false;
    std::size_t outcome = 0;
};

/// Runs every roster entry on identical data. Unknown ids throw.
std::vector<MethodOutput> run_methods(const ScenarioConfig& config, const ScenarioData& data);

struct MetricsRow
{
    std::string method;
    std::string params;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    double fdp = 0.0;
    double power = 0.0; // NaN without nonzero features
    double size = 0.0;  // features implicated
    double rejections = 0.0;
    double cardinality = 0.0; // mean rejected-group size, NaN when empty
    double precision = 0.0;   // tree only, NaN otherwise
    double snr = 0.0;
    bool certified = true;
};

MetricsRow score(const MethodOutput& output, const ScenarioData& data, const ScenarioConfig& config);

struct ReplicateFailure
{
    std::string params;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    std::string error;
};

struct SummaryRow
{
    std::string method;
    std::string params;
    std::string metric;
    double mean = 0.0;
    double se = 0.0;
    std::size_t count = 0;
};

struct SweepResult
{
    std::vector<MetricsRow> rows;
    std::vector<ReplicateFailure> failures;
    std::vector<SummaryRow> summary;
    std::size_t tasks = 0;

    bool quality_failure() const noexcept { return failures.size() * 20 > tasks; }
    const SummaryRow* find(const std::string& method, const std::string& params, const std::string& metric) const;
};

/// Parameter points of the sweep as (label, config) pairs.
std::vector<std::pair<std::string, ScenarioConfig>> sweep_points(const ScenarioConfig& config);

/// Runs every (point, replicate) task over `threads` workers (0 = hardware
/// concurrency). Output is independent of the worker count.
SweepResult replicate_sweep(const ScenarioConfig& config, std::size_t threads = 0);

std::string format_replicates_csv(const SweepResult& result);
std::string format_summary_csv(const SweepResult& result);
std::string format_meta_json(const ScenarioConfig& config, const SweepResult& result);
void write_sweep(const ScenarioConfig& config, const SweepResult& result, const std::string& directory);

/// Thread count from KELP_THREADS, else 0.
std::size_t default_threads();

} // namespace kelp
