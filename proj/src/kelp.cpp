#include "kelp/kelp.hpp"

#include "kelp/errors.hpp"

#include <algorithm>
#include <numeric>

namespace kelp {

namespace {

void check_gamma(double gamma, const std::string& field = "gamma")
{
    if (!(gamma > 0.0 && gamma < 1.0))
        throw PreconditionError("stopping level must lie in (0,1), got " + std::to_string(gamma), field);
}

// Counts of {W >= t} and {W <= -t} from a sorted copy of W.
struct SortedScores
{
    std::vector<double> sorted;

    explicit SortedScores(std::span<const double> w)
        : sorted(w.begin(), w.end())
    {
        std::sort(sorted.begin(), sorted.end());
    }

    std::size_t at_least(double t) const
    {
        return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
    }

    std::size_t at_most(double t) const
    {
        return static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    }
};

std::vector<double> knockoff_layer(std::span<const double> w, double c, double T)
{
    std::vector<double> e(w.size(), 0.0);
    if (T == kInfinity) return e;
    const SortedScores s(w);
    const double denom = 1.0 + static_cast<double>(s.at_most(-T));
    for (std::size_t g = 0; g < w.size(); ++g)
        if (w[g] >= T) e[g] = c / denom;
    return e;
}

// Groups of layer m whose members include a feature that clears every
// other layer's threshold.
std::vector<bool> eligible_groups(const HypothesisFamily& family, const std::vector<std::vector<double>>& layer_e,
                                  const std::vector<double>& t, std::size_t m)
{
    std::vector<bool> eligible(family.partition(m).size(), false);
    for (std::size_t j = 0; j < family.p(); ++j) {
        bool pass = true;
        for (std::size_t k = 0; k < layer_e.size() && pass; ++k) {
            if (k == m) continue;
            pass = at_least(layer_e[k][family.group_of(k, j)], t[k]);
        }
        if (pass) eligible[family.group_of(m, j)] = true;
    }
    return eligible;
}

std::vector<std::size_t> selected_features(const HypothesisFamily& family,
                                           const std::vector<std::vector<double>>& layer_e,
                                           const std::vector<double>& t)
{
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < family.p(); ++j) {
        bool pass = true;
        for (std::size_t k = 0; k < layer_e.size() && pass; ++k)
            pass = at_least(layer_e[k][family.group_of(k, j)], t[k]);
        if (pass) out.push_back(j);
    }
    return out;
}

std::vector<std::vector<std::size_t>> layer_rejections(const HypothesisFamily& family,
                                                       const std::vector<std::size_t>& selected)
{
    std::vector<std::vector<std::size_t>> out(family.resolution_count());
    for (std::size_t m = 0; m < out.size(); ++m) {
        for (const std::size_t j : selected) out[m].push_back(family.group_of(m, j));
        std::sort(out[m].begin(), out[m].end());
        out[m].erase(std::unique(out[m].begin(), out[m].end()), out[m].end());
    }
    return out;
}

void check_layers(const HypothesisFamily& family, const std::vector<std::vector<double>>& layer_e,
                  const std::vector<double>& levels)
{
    if (layer_e.size() != family.resolution_count() || levels.size() != family.resolution_count())
        throw PreconditionError("one e-value vector and one level per layer are required", "levels");
    for (std::size_t m = 0; m < layer_e.size(); ++m) {
        if (layer_e[m].size() != family.partition(m).size())
            throw PreconditionError("layer '" + family.partition(m).id + "' e-value count does not match its groups");
        check_alpha(levels[m], "levels[" + std::to_string(m) + "]");
    }
}

} // namespace

void check_scores(const HypothesisFamily& family, const KnockoffScores& scores)
{
    if (scores.w.size() != family.resolution_count()) {
        throw PreconditionError("expected " + std::to_string(family.resolution_count()) +
                                    " score vectors, got " + std::to_string(scores.w.size()),
                                "scores");
    }
    for (std::size_t m = 0; m < scores.w.size(); ++m) {
        if (scores.w[m].size() != family.partition(m).size()) {
            throw PreconditionError("resolution '" + family.partition(m).id + "' has " +
                                        std::to_string(scores.w[m].size()) + " scores for " +
                                        std::to_string(family.partition(m).size()) + " groups",
                                    "scores");
        }
        for (const double v : scores.w[m])
            if (!std::isfinite(v)) throw PreconditionError("scores must be finite", "scores");
    }
}

double knockoff_stopping_time(std::span<const double> w, double gamma)
{
    if (w.empty()) throw PreconditionError("no scores", "scores");
    check_gamma(gamma);
    const SortedScores s(w);
    std::vector<double> grid;
    for (const double v : w)
        if (v != 0.0) grid.push_back(std::abs(v));
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (const double t : grid) {
        const std::size_t hits = s.at_least(t);
        if (hits == 0) continue;
        const double ratio = (1.0 + static_cast<double>(s.at_most(-t))) / static_cast<double>(hits);
        if (at_least(gamma, ratio)) return t;
    }
    return kInfinity;
}

std::vector<std::size_t> knockoff_filter(std::span<const double> w, double gamma)
{
    std::vector<std::size_t> out;
    if (w.empty()) return out;
    const double T = knockoff_stopping_time(w, gamma);
    if (T == kInfinity) return out;
    for (std::size_t j = 0; j < w.size(); ++j)
        if (w[j] >= T) out.push_back(j);
    return out;
}

GammaPreset parse_gamma_preset(const std::string& name)
{
    if (name == "half" || name == "alpha/2") return GammaPreset::half;
    if (name == "quarter" || name == "alpha/4") return GammaPreset::quarter;
    if (name == "graded") return GammaPreset::graded;
    throw PreconditionError("unknown gamma preset '" + name + "' (expected half|quarter|graded or a number)",
                            "gamma");
}

std::vector<double> gamma_preset(const HypothesisFamily& family, double alpha, GammaPreset preset)
{
    const std::size_t M = family.resolution_count();
    switch (preset) {
    case GammaPreset::half: return std::vector<double>(M, alpha / 2);
    case GammaPreset::quarter: return std::vector<double>(M, alpha / 4);
    case GammaPreset::graded: break;
    }
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return family.partition(a).mean_group_size() < family.partition(b).mean_group_size();
    });
    std::vector<double> gamma(M, alpha / 4);
    std::size_t rank = 0;
    for (const std::size_t m : order) {
        if (family.partition(m).size() == family.p()) {
            gamma[m] = alpha;
        } else {
            gamma[m] = rank == 0 ? alpha / 2 : alpha / 4;
            ++rank;
        }
    }
    return gamma;
}

KelpConfig KelpConfig::defaults(const HypothesisFamily& family, double alpha, GammaPreset preset)
{
    check_alpha(alpha);
    KelpConfig config;
    config.alpha = alpha;
    const double M = static_cast<double>(family.resolution_count());
    config.c.assign(family.resolution_count(), static_cast<double>(family.total_groups()) / M);
    config.gamma = gamma_preset(family, alpha, preset);
    return config;
}

void KelpConfig::validate(const HypothesisFamily& family, double multiplier) const
{
    check_alpha(alpha);
    if (c.size() != family.resolution_count() || gamma.size() != family.resolution_count()) {
        throw PreconditionError("config needs one c and one gamma per resolution (" +
                                    std::to_string(family.resolution_count()) + ")",
                                "c");
    }
    double total = 0.0;
    for (std::size_t m = 0; m < c.size(); ++m) {
        if (!(c[m] >= 0.0) || !std::isfinite(c[m]))
            throw PreconditionError("budget multipliers must be finite and nonnegative", "c");
        check_gamma(gamma[m], "gamma[" + std::to_string(m) + "]");
        total += c[m];
    }
    const double bound = static_cast<double>(family.total_groups());
    if (!at_least(bound, multiplier * total)) {
        std::string msg = "budget exceeded: ";
        if (multiplier != 1.0) msg += std::to_string(multiplier) + " * ";
        msg += "sum of c_m = " + std::to_string(multiplier * total) + " > |A| = " + std::to_string(bound) +
               " (the e-value budget requires sum c_m <= |A|)";
        throw BudgetError(msg);
    }
}

KnockoffEvalues knockoff_evalues(const HypothesisFamily& family, const KnockoffScores& scores,
                                 const KelpConfig& config)
{
    check_scores(family, scores);
    config.validate(family);
    KnockoffEvalues out{EValueTable(static_cast<double>(family.total_groups())), {}};
    for (std::size_t m = 0; m < family.resolution_count(); ++m) {
        const double T = knockoff_stopping_time(scores.w[m], config.gamma[m]);
        out.stopping_times.push_back(T);
        const auto e = knockoff_layer(scores.w[m], config.c[m], T);
        for (std::size_t g = 0; g < e.size(); ++g) out.table.add({m, g}, e[g], Provenance::knockoff);
    }
    return out;
}

KelpResult run_kelp(const HypothesisFamily& family, const KnockoffScores& scores, const KelpConfig& config,
                    SolverKind solver, std::uint64_t node_budget)
{
    auto ke = knockoff_evalues(family, scores, config);
    KelpResult out{solve(ElpProblem(family, ke.table, config.alpha), solver, node_budget), ke.table,
                   std::move(ke.stopping_times), config.alpha};
    return out;
}

KelpConfig partial_conjunction_defaults(const HypothesisFamily& family, double alpha, std::size_t L, std::size_t u,
                                        GammaPreset preset)
{
    if (u < 1 || u > L) throw PreconditionError("partial conjunction needs 1 <= u <= L", "u");
    KelpConfig config = KelpConfig::defaults(family, alpha, preset);
    const double scale = static_cast<double>(L - u + 1) / static_cast<double>(L);
    for (auto& c : config.c) c *= scale;
    return config;
}

KelpResult run_partial_conjunction_kelp(const HypothesisFamily& family, const std::vector<KnockoffScores>& outcomes,
                                        std::size_t u, const KelpConfig& config, bool strict_budget,
                                        SolverKind solver, std::uint64_t node_budget)
{
    const std::size_t L = outcomes.size();
    if (L == 0) throw PreconditionError("partial conjunction needs at least one outcome", "outcomes");
    if (u < 1 || u > L) {
        throw PreconditionError("partial conjunction needs 1 <= u <= L (u=" + std::to_string(u) +
                                    ", L=" + std::to_string(L) + ")",
                                "u");
    }
    const double inflation = static_cast<double>(L) / static_cast<double>(L - u + 1);
    config.validate(family, strict_budget ? inflation : 1.0);

    std::vector<EValueTable> per_outcome;
    std::vector<std::vector<double>> times;
    for (const auto& scores : outcomes) {
        auto ke = knockoff_evalues(family, scores, config);
        per_outcome.push_back(std::move(ke.table));
        times.push_back(std::move(ke.stopping_times));
    }
    EValueTable combined(static_cast<double>(family.total_groups()));
    std::vector<double> column(L);
    for (const auto& ref : family.all_refs()) {
        for (std::size_t l = 0; l < L; ++l) column[l] = per_outcome[l].value(ref);
        combined.add(ref, partial_conjunction_evalue(column, u), Provenance::partial_conjunction);
    }
    KelpResult out{solve(ElpProblem(family, combined, config.alpha), solver, node_budget), combined, {},
                   strict_budget ? config.alpha : config.alpha * inflation};
    // Per-resolution stopping times of the first outcome; the rest are in the per-outcome runs.
    out.stopping_times = times.front();
    return out;
}

std::vector<std::vector<double>> mean_merged_layers(const HypothesisFamily& family, std::span<const double> base)
{
    if (base.size() != family.p()) throw PreconditionError("base e-values must have one entry per feature");
    std::vector<std::vector<double>> out(family.resolution_count());
    std::vector<double> values;
    for (std::size_t m = 0; m < family.resolution_count(); ++m) {
        for (const auto& group : family.partition(m).groups) {
            values.clear();
            for (const std::size_t j : group) values.push_back(base[j]);
            out[m].push_back(mean_merge(values));
        }
    }
    return out;
}

MultilayerResult efilter_thresholds(const HypothesisFamily& family, const std::vector<std::vector<double>>& layer_e,
                                    const std::vector<double>& levels)
{
    check_layers(family, layer_e, levels);
    const std::size_t M = family.resolution_count();
    std::vector<double> t(M);
    std::vector<std::size_t> k_index(M); // t_m = |A^m|/(alpha_m k), or +inf at k = 0
    for (std::size_t m = 0; m < M; ++m) {
        k_index[m] = family.partition(m).size();
        t[m] = 1.0 / levels[m];
    }

    MultilayerResult out;
    out.levels = levels;
    bool changed = true;
    // Each change strictly lowers some k_index, so the loop is bounded.
    const std::size_t max_rounds = family.total_groups() + 2;
    while (changed) {
        if (++out.rounds > max_rounds) throw std::logic_error("e-filter threshold iteration did not terminate");
        changed = false;
        for (std::size_t m = 0; m < M; ++m) {
            if (k_index[m] == 0) continue;
            const auto eligible = eligible_groups(family, layer_e, t, m);
            std::vector<double> values;
            for (std::size_t g = 0; g < eligible.size(); ++g)
                if (eligible[g]) values.push_back(layer_e[m][g]);
            std::sort(values.begin(), values.end(), std::greater<>());
            const double N = static_cast<double>(family.partition(m).size());

            std::size_t k = k_index[m];
            for (; k >= 1; --k) {
                const double candidate = N / (levels[m] * static_cast<double>(k));
                // Grid points below the current threshold are not admissible.
                if (!at_least(candidate, t[m])) continue;
                // At t = N/(alpha k) the product condition reads max(1,|R_m|) >= k.
                std::size_t hits = 0;
                while (hits < values.size() && at_least(values[hits], candidate)) ++hits;
                if (std::max<std::size_t>(1, hits) >= k) break;
            }
            const double next = k == 0 ? kInfinity : N / (levels[m] * static_cast<double>(k));
            if (k != k_index[m] || next != t[m]) {
                changed = changed || next != t[m];
                k_index[m] = k;
                t[m] = next;
            }
        }
    }
    out.selected = selected_features(family, layer_e, t);
    out.rejected = layer_rejections(family, out.selected);
    // With nothing selected every R_m is empty and t_m = |A^m|/alpha_m only
    // holds by the max(1, .) convention; report those layers as +inf.
    if (out.selected.empty()) std::fill(t.begin(), t.end(), kInfinity);
    out.thresholds = t;
    return out;
}

bool in_threshold_set(const HypothesisFamily& family, const std::vector<std::vector<double>>& layer_e,
                      const std::vector<double>& levels, const std::vector<double>& thresholds)
{
    check_layers(family, layer_e, levels);
    if (thresholds.size() != family.resolution_count()) return false;
    const auto rejected = layer_rejections(family, selected_features(family, layer_e, thresholds));
    for (std::size_t m = 0; m < thresholds.size(); ++m) {
        const double t = thresholds[m];
        if (t == kInfinity) continue;
        const double N = static_cast<double>(family.partition(m).size());
        const double k = N / (levels[m] * t);
        const double k_round = std::round(k);
        if (k_round < 1 || k_round > N || std::abs(k - k_round) > 1e-9 * std::max(1.0, k)) return false;
        const double r = static_cast<double>(std::max<std::size_t>(1, rejected[m].size()));
        if (!at_least(t * r, N / levels[m])) return false;
    }
    return true;
}

EmkfResult run_emkf(const HypothesisFamily& family, const KnockoffScores& scores, const std::vector<double>& levels,
                    const std::vector<double>& gammas)
{
    check_scores(family, scores);
    if (gammas.size() != family.resolution_count())
        throw PreconditionError("one stopping level per layer is required", "gamma");
    EmkfResult out;
    for (std::size_t m = 0; m < family.resolution_count(); ++m) {
        const double T = knockoff_stopping_time(scores.w[m], gammas[m]);
        out.stopping_times.push_back(T);
        out.evalues.push_back(knockoff_layer(scores.w[m], static_cast<double>(family.partition(m).size()), T));
    }
    out.layers = efilter_thresholds(family, out.evalues, levels);
    return out;
}

GammaTuning tune_gamma(const HypothesisFamily& family, const KnockoffScores& holdout, const KelpConfig& base,
                       const std::vector<double>& gamma_grid, const std::vector<double>& alpha_grid,
                       const std::vector<bool>& tuned)
{
    if (gamma_grid.empty() || alpha_grid.empty()) throw PreconditionError("tuning grids must be nonempty", "gamma");
    check_scores(family, holdout);
    std::size_t coarsest = 0;
    for (std::size_t m = 1; m < family.resolution_count(); ++m)
        if (family.partition(m).size() < family.partition(coarsest).size()) coarsest = m;

    // Block of each group: the coarsest-partition group of its first member.
    std::vector<std::size_t> block_of(family.total_groups());
    for (const auto& ref : family.all_refs())
        block_of[family.flat_index(ref)] = family.group_of(coarsest, family.members(ref).front());

    GammaTuning out;
    out.grid = gamma_grid;
    std::size_t best_total = 0;
    bool have_best = false;
    for (const double gamma : gamma_grid) {
        KelpConfig config = base;
        for (std::size_t m = 0; m < config.gamma.size(); ++m)
            if (tuned.empty() || tuned.at(m)) config.gamma[m] = gamma;
        const auto ke = knockoff_evalues(family, holdout, config);

        std::vector<double> best_score(family.partition(coarsest).size(), 0.0);
        std::vector<std::size_t> best_flat(best_score.size(), family.total_groups());
        for (const auto& ref : family.all_refs()) {
            const std::size_t k = family.flat_index(ref);
            const double score = family.weight(ref) * ke.table.value(ref);
            if (score > best_score[block_of[k]]) {
                best_score[block_of[k]] = score;
                best_flat[block_of[k]] = k;
            }
        }
        EValueTable filtered(static_cast<double>(family.total_groups()));
        for (const std::size_t k : best_flat)
            if (k < family.total_groups()) filtered.add(family.ref_of(k), ke.table.value(family.ref_of(k)));

        std::size_t total = 0;
        for (const double a : alpha_grid) total += ebh(filtered, a).size();
        out.rejections.push_back(total);
        if (!have_best || total > best_total || (total == best_total && gamma > out.gamma)) {
            best_total = total;
            out.gamma = gamma;
            have_best = true;
        }
    }
    return out;
}

} // namespace kelp
