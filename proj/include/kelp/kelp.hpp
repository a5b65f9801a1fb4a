#pragma once

#include "kelp/elp.hpp"
#include "kelp/etesting.hpp"
#include "kelp/family.hpp"

#include <span>
#include <string>
#include <vector>

namespace kelp {

/// Antisymmetric importance statistics, one vector per partition, aligned
/// with that partition's groups.
struct KnockoffScores
{
    std::vector<std::vector<double>> w;
};

void check_scores(const HypothesisFamily& family, const KnockoffScores& scores);

/// Smallest t among the distinct nonzero |W| with
/// (1 + #{W <= -t}) / #{W >= t} <= gamma; +inf when no t qualifies.
double knockoff_stopping_time(std::span<const double> w, double gamma);

/// Classical knockoff selection {j : W_j >= T} (0-based, sorted).
std::vector<std::size_t> knockoff_filter(std::span<const double> w, double gamma);

enum class GammaPreset { half, quarter, graded };

GammaPreset parse_gamma_preset(const std::string& name);

struct KelpConfig
{
    std::vector<double> c;     // per resolution
    std::vector<double> gamma; // per resolution
    double alpha = 0.1;

    /// c_m = |A|/|M|, gamma from the preset.
    static KelpConfig defaults(const HypothesisFamily& family, double alpha, GammaPreset preset = GammaPreset::half);

    /// Throws BudgetError unless multiplier * sum(c) <= |A|.
    void validate(const HypothesisFamily& family, double multiplier = 1.0) const;
};

/// gamma per resolution for a preset. The graded preset uses alpha at the
/// singleton level, alpha/2 at the next finest and alpha/4 beyond.
std::vector<double> gamma_preset(const HypothesisFamily& family, double alpha, GammaPreset preset);

struct KnockoffEvalues
{
    EValueTable table;
    std::vector<double> stopping_times;
};

/// e = c_m * 1{W >= T^m} / (1 + #{W <= -T^m}); n_total = |A|.
KnockoffEvalues knockoff_evalues(const HypothesisFamily& family, const KnockoffScores& scores,
                                 const KelpConfig& config);

struct KelpResult
{
    ElpSolution solution;
    EValueTable evalues;
    std::vector<double> stopping_times;
    double control_level = 0.0;
};

KelpResult run_kelp(const HypothesisFamily& family, const KnockoffScores& scores, const KelpConfig& config,
                    SolverKind solver = SolverKind::automatic, std::uint64_t node_budget = 0);

/// Per-outcome knockoff e-values combined through the u-of-L partial
/// conjunction. With strict_budget the config must satisfy
/// (L/(L-u+1)) sum(c) <= |A|; otherwise the reported control level is
/// alpha * L/(L-u+1).
KelpResult run_partial_conjunction_kelp(const HypothesisFamily& family, const std::vector<KnockoffScores>& outcomes,
                                        std::size_t u, const KelpConfig& config, bool strict_budget = true,
                                        SolverKind solver = SolverKind::automatic, std::uint64_t node_budget = 0);

/// c_m scaled so the strict partial-conjunction budget holds with equality.
KelpConfig partial_conjunction_defaults(const HypothesisFamily& family, double alpha, std::size_t L, std::size_t u,
                                        GammaPreset preset = GammaPreset::half);

struct MultilayerResult
{
    std::vector<double> thresholds; // +inf when a layer rejects nothing
    std::vector<double> levels;
    std::vector<std::size_t> selected;              // base features
    std::vector<std::vector<std::size_t>> rejected; // group indices per layer
    std::size_t rounds = 0;
};

/// Group e-values per layer as the mean of base e-values over each group.
std::vector<std::vector<double>> mean_merged_layers(const HypothesisFamily& family, std::span<const double> base);

/// Raises per-layer thresholds from 1/alpha_m to a fixed point. A base
/// feature is selected when its group clears t_m at every layer.
MultilayerResult efilter_thresholds(const HypothesisFamily& family, const std::vector<std::vector<double>>& layer_e,
                                    const std::vector<double>& levels);

/// Membership of `thresholds` in the feasible threshold set: every finite t_m
/// lies on the grid |A^m|/(alpha_m k) and t_m * max(1, |R_m|) >= |A^m|/alpha_m.
bool in_threshold_set(const HypothesisFamily& family, const std::vector<std::vector<double>>& layer_e,
                      const std::vector<double>& levels, const std::vector<double>& thresholds);

struct EmkfResult
{
    MultilayerResult layers;
    std::vector<std::vector<double>> evalues;
    std::vector<double> stopping_times;
};

/// Knockoff e-values with c_m = |A^m| per layer, then the e-filter.
EmkfResult run_emkf(const HypothesisFamily& family, const KnockoffScores& scores, const std::vector<double>& levels,
                    const std::vector<double>& gammas);

struct GammaTuning
{
    double gamma = 0.0;
    std::vector<double> grid;
    std::vector<std::size_t> rejections; // summed over the alpha grid, per gamma
};

/// Hold-out tuning heuristic. For every gamma on the grid: build knockoff
/// e-values, keep within each block of the coarsest partition the group with
/// the largest w(A) e_A, run e-BH on that subset for every alpha in
/// alpha_grid and total the rejections. The largest total wins; ties go to
/// the larger gamma. `tuned` marks the resolutions whose gamma is replaced.
GammaTuning tune_gamma(const HypothesisFamily& family, const KnockoffScores& holdout, const KelpConfig& base,
                       const std::vector<double>& gamma_grid, const std::vector<double>& alpha_grid,
                       const std::vector<bool>& tuned = {});

} // namespace kelp
