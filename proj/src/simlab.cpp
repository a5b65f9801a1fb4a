#include "kelp/simlab.hpp"

#include "kelp/errors.hpp"
#include "kelp/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace kelp {

namespace {

using json = nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Independent stream for one component of a replicate.
std::uint64_t derive(std::uint64_t seed, std::uint64_t tag)
{
    return splitmix64(seed ^ splitmix64(tag + 0x5851F42D4C957F2DULL));
}

std::uint64_t fnv1a(const std::string& text)
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

InputError field_error(const std::string& field, const std::string& message)
{
    return InputError("invalid-field", field + ": " + message, field);
}

// ---- config parsing ----

double get_number(const json& j, const std::string& key)
{
    if (!j.is_number()) throw field_error(key, "expected a number");
    return j.get<double>();
}

std::size_t get_count(const json& j, const std::string& key)
{
    if (!j.is_number_integer() || j.get<long long>() < 0) throw field_error(key, "expected a nonnegative integer");
    return j.get<std::size_t>();
}

std::string get_string(const json& j, const std::string& key)
{
    if (!j.is_string()) throw field_error(key, "expected a string");
    return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& key)
{
    if (!j.is_boolean()) throw field_error(key, "expected true or false");
    return j.get<bool>();
}

void validate(const ScenarioConfig& c)
{
    if (c.p < 2) throw field_error("p", "need p >= 2");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw field_error("alpha", "must lie in (0,1)");
    if (c.replicates < 1) throw field_error("replicates", "need at least one replicate");
    if (!(c.sparsity >= 0.0 && c.sparsity <= 1.0)) throw field_error("sparsity", "must lie in [0,1]");
    if (c.n == 0 && !(c.n_over_p > 0.0)) throw field_error("n_over_p", "must be positive");
    if (!(std::abs(c.rho) < 1.0)) throw field_error("rho", "must lie in (-1,1)");
    if (c.folds < 2) throw field_error("folds", "need at least 2 folds");
    if (c.n_lambda < 2) throw field_error("n_lambda", "need at least 2 penalties");
    if (c.block == 0) throw field_error("block", "must be positive");
    if (!(c.tau >= 0.0)) throw field_error("tau", "must be nonnegative");
    if (c.outcomes < 1) throw field_error("outcomes", "need at least one outcome");
    if (c.pc_u < 1 || c.pc_u > c.outcomes) throw field_error("pc_u", "need 1 <= pc_u <= outcomes");
    if (!(c.case_rate > 0.0 && c.case_rate < 1.0)) throw field_error("case_rate", "must lie in (0,1)");
    if (!(c.sibling_overlap >= 0.0 && c.sibling_overlap <= 1.0))
        throw field_error("sibling_overlap", "must lie in [0,1]");
    if (c.methods.empty()) throw field_error("methods", "roster is empty");
    for (std::size_t i = 0; i < c.methods.size(); ++i) {
        const auto& roster = method_roster();
        if (std::find(roster.begin(), roster.end(), c.methods[i]) == roster.end())
            throw InputError("unknown-method", "unknown method id '" + c.methods[i] + "'",
                             "methods[" + std::to_string(i) + "]");
    }
    if (c.design != DesignKind::outcome_tree) {
        if (c.group_sizes.empty()) throw field_error("group_sizes", "need at least one partition");
        for (std::size_t i = 0; i < c.group_sizes.size(); ++i)
            if (c.group_sizes[i] == 0 || c.group_sizes[i] > c.p)
                throw field_error("group_sizes[" + std::to_string(i) + "]", "group size must lie in 1..p");
    }
    try {
        std::size_t used = 0;
        std::stod(c.gamma, &used);
        if (used != c.gamma.size()) throw std::invalid_argument("trailing");
    } catch (const std::invalid_argument&) {
        parse_gamma_preset(c.gamma);
    }
    if (c.sweep) {
        if (c.sweep->values.empty()) throw field_error("sweep.values", "need at least one value");
        with_parameter(c, c.sweep->name, c.sweep->values.front());
    }
}

// ---- random draws ----

std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k,
                                                    std::mt19937_64& rng)
{
    if (k > pool.size()) throw InputError("infeasible-scenario", "cannot draw " + std::to_string(k) +
                                                                     " distinct features from " +
                                                                     std::to_string(pool.size()));
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::vector<std::size_t> iota(std::size_t p)
{
    std::vector<std::size_t> out(p);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
}

double draw_coefficient(const ScenarioConfig& c, std::size_t n, std::mt19937_64& rng)
{
    if (c.amplitude_law == AmplitudeLaw::fixed) {
        std::bernoulli_distribution coin(0.5);
        const double magnitude = c.amplitude / std::sqrt(static_cast<double>(n));
        return c.signal_scale * (coin(rng) ? magnitude : -magnitude);
    }
    std::normal_distribution<double> z(c.mu, c.tau);
    const double v = z(rng);
    const double floored = std::max(std::abs(v), 0.1 * c.tau);
    return c.signal_scale * (v < 0.0 ? -floored : floored);
}

std::string resolution_name(std::size_t size)
{
    return size == 1 ? "individual" : "group" + std::to_string(size);
}

HypothesisFamily design_family(const ScenarioConfig& c)
{
    std::vector<Partition> parts;
    for (const std::size_t size : c.group_sizes)
        parts.push_back(size == 1 ? singleton_partition(resolution_name(1), c.p)
                                  : block_partition(resolution_name(size), c.p, size));
    return HypothesisFamily(c.p, std::move(parts));
}

Matrix design_covariance(const ScenarioConfig& c)
{
    if (c.design == DesignKind::block_ar1) return GaussianDesign::block_ar1(c.p, c.block, c.rho).sigma;
    return GaussianDesign::ar1(c.p, c.rho).sigma;
}

std::vector<std::size_t> draw_support(const ScenarioConfig& c, const HypothesisFamily& family, std::mt19937_64& rng)
{
    const std::size_t k = nonzero_count(c);
    if (c.nonzero_groups == 0) return sample_without_replacement(iota(c.p), k, rng);
    std::size_t coarsest = 0;
    for (std::size_t m = 1; m < family.resolution_count(); ++m)
        if (family.partition(m).size() < family.partition(coarsest).size()) coarsest = m;
    const auto& part = family.partition(coarsest);
    std::vector<std::size_t> pool;
    for (const std::size_t g : sample_without_replacement(iota(part.size()), c.nonzero_groups, rng))
        pool.insert(pool.end(), part.groups[g].begin(), part.groups[g].end());
    return sample_without_replacement(pool, k, rng);
}

// Realized case rate as a function of the intercept, for fixed uniforms.
double case_rate(const Vector& eta, const Vector& u, double delta)
{
    std::size_t cases = 0;
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        if (u(i) < 1.0 / (1.0 + std::exp(-(delta + eta(i))))) ++cases;
    return static_cast<double>(cases) / static_cast<double>(eta.size());
}

// Smallest intercept whose realized case rate reaches the target.
double calibrate_intercept(const Vector& eta, const Vector& u, double target)
{
    double lo = -40.0;
    double hi = 40.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (case_rate(eta, u, mid) >= target ? hi : lo) = mid;
    }
    return hi;
}

Matrix cached(const ScenarioConfig& c, const std::string& tag, std::uint64_t seed, const std::function<Matrix()>& make)
{
    if (c.cache_dir.empty()) return make();
    ScenarioConfig key = c;
    key.methods.clear();
    key.replicates = 1;
    key.seed = 0;
    key.sweep.reset();
    key.n = resolved_n(c);
    key.cache_dir.clear();
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a(scenario_json(key))));
    return DesignCache(c.cache_dir).load_or_generate(hash, seed, tag, make);
}

void generate_tree(const ScenarioConfig& c, ScenarioData& data)
{
    const std::size_t p = c.p;
    const std::size_t n = resolved_n(c);
    const std::size_t k = nonzero_count(c);
    const Matrix sigma = GaussianDesign::ar1(p, c.rho).sigma;
    data.family = tree_family(p);
    const std::uint64_t xs = derive(data.seed, 1);
    data.X = cached(c, "X", xs, [&] { return sample_design(GaussianDesign{sigma}, n, xs); });
    const std::uint64_t ks = derive(data.seed, 300);
    data.knockoffs = {cached(c, "Xk", ks, [&] { return sample_knockoffs(data.X, sigma, equicorrelated_recipe(sigma), ks); })};

    std::mt19937_64 rng(derive(data.seed, 100));
    const std::size_t copied = static_cast<std::size_t>(std::floor(c.sibling_overlap * static_cast<double>(k)));
    std::vector<std::vector<std::size_t>> support(kTreeLeaves);
    for (std::size_t pair = 0; pair < 2; ++pair) {
        const std::size_t first = 2 * pair;
        support[first] = sample_without_replacement(iota(p), k, rng);
        const auto all = iota(p);
        std::vector<std::size_t> complement;
        std::set_difference(all.begin(), all.end(), support[first].begin(), support[first].end(),
                            std::back_inserter(complement));
        auto shared = sample_without_replacement(support[first], copied, rng);
        const auto fresh = sample_without_replacement(complement, k - copied, rng);
        shared.insert(shared.end(), fresh.begin(), fresh.end());
        std::sort(shared.begin(), shared.end());
        support[first + 1] = std::move(shared);
    }

    std::vector<Vector> leaf_y;
    for (std::size_t l = 0; l < kTreeLeaves; ++l) {
        Vector beta = Vector::Zero(static_cast<Eigen::Index>(p));
        for (const std::size_t j : support[l]) beta(static_cast<Eigen::Index>(j)) = draw_coefficient(c, n, rng);
        const Vector eta = data.X * beta;
        std::mt19937_64 urng(derive(data.seed, 200 + l));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        Vector u(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = unif(urng);
        const double delta = calibrate_intercept(eta, u, c.case_rate);
        Vector y(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < y.size(); ++i)
            y(i) = u(i) < 1.0 / (1.0 + std::exp(-(delta + eta(i)))) ? 1.0 : 0.0;
        data.intercepts.push_back(delta);
        data.case_rates.push_back(y.mean());
        data.beta.push_back(std::move(beta));
        data.outcome_truth.push_back({support[l]});
        leaf_y.push_back(std::move(y));
    }
    data.y = leaf_y;
    data.y.push_back(leaf_y[0].cwiseMax(leaf_y[1]));
    data.y.push_back(leaf_y[2].cwiseMax(leaf_y[3]));
    data.y.push_back(data.y[4].cwiseMax(data.y[5]));

    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t l = 0; l < kTreeLeaves; ++l)
            if (data.beta[l](static_cast<Eigen::Index>(j)) != 0.0) data.truth.nonzero_features.push_back(4 * j + l);
    data.snr = kNaN;
}

// ---- statistics ----

LassoOptions lasso_options(const ScenarioConfig& c)
{
    LassoOptions o;
    o.folds = c.folds;
    o.n_lambda = c.n_lambda;
    return o;
}

// Knockoff scores per resolution for one outcome.
KnockoffScores outcome_scores(const ScenarioConfig& c, const ScenarioData& data, std::size_t outcome)
{
    KnockoffScores scores;
    const auto& family = data.family;
    if (c.design == DesignKind::fixed_equi_mlkf) {
        LassoOptions o = lasso_options(c);
        o.standardize = false;
        const Vector entry = lasso_entry_lambdas(data.X, data.knockoffs.front(), data.y[outcome], o);
        for (const auto& part : family.partitions()) scores.w.push_back(signed_max_scores(entry, part));
        return scores;
    }
    for (std::size_t m = 0; m < family.resolution_count(); ++m) {
        scores.w.push_back(lasso_cv_statistics(data.X, data.knockoffs[m], data.y[outcome], family.partition(m),
                                               lasso_options(c), derive(data.seed, 400 + 16 * outcome + m)));
    }
    return scores;
}

std::vector<double> resolve_gamma(const ScenarioConfig& c, const HypothesisFamily& family)
{
    try {
        std::size_t used = 0;
        const double g = std::stod(c.gamma, &used);
        if (used == c.gamma.size()) return std::vector<double>(family.resolution_count(), g);
    } catch (const std::invalid_argument&) {
    }
    return gamma_preset(family, c.alpha, parse_gamma_preset(c.gamma));
}

std::vector<double> knockoff_evalue_vector(std::span<const double> w, double c, double gamma)
{
    const double T = knockoff_stopping_time(w, gamma);
    std::vector<double> e(w.size(), 0.0);
    if (T == kInfinity) return e;
    const double negatives = static_cast<double>(std::count_if(w.begin(), w.end(), [T](double v) { return v <= -T; }));
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i] >= T) e[i] = c / (1.0 + negatives);
    return e;
}

// Rejected groups that contain no other rejected group; identical member
// sets keep their first occurrence.
std::vector<GroupRef> outer_nodes(const HypothesisFamily& family, const std::vector<GroupRef>& rejected)
{
    std::vector<GroupRef> out;
    for (std::size_t a = 0; a < rejected.size(); ++a) {
        const auto& ma = family.members(rejected[a]);
        bool keep = true;
        for (std::size_t b = 0; b < rejected.size() && keep; ++b) {
            if (a == b) continue;
            const auto& mb = family.members(rejected[b]);
            if (!std::includes(ma.begin(), ma.end(), mb.begin(), mb.end())) continue;
            // b inside a: drop a unless the sets coincide and a comes first.
            if (mb.size() < ma.size() || b < a) keep = false;
        }
        if (keep) out.push_back(rejected[a]);
    }
    return out;
}

// e-BH over the filtered set S at the level alpha |S| / |H|.
MethodOutput amended_ebh(const std::string& name, const std::vector<GroupRef>& selected, const EValueTable& evalues,
                         double alpha, double hypotheses)
{
    MethodOutput out{name, {}, true};
    if (selected.empty()) return out;
    const double s = static_cast<double>(selected.size());
    EValueTable table(s);
    for (const GroupRef ref : selected) table.add(ref, evalues.value(ref), Provenance::knockoff);
    const RejectionSet set = ebh(table, alpha * s / hypotheses);
    out.rejected = set.rejected;
    out.certified = set.certificate.self_consistent;
    return out;
}

std::vector<GroupRef> sorted_unique(std::vector<GroupRef> refs)
{
    std::sort(refs.begin(), refs.end(), [](GroupRef a, GroupRef b) {
        return a.resolution != b.resolution ? a.resolution < b.resolution : a.group < b.group;
    });
    refs.erase(std::unique(refs.begin(), refs.end(),
                           [](GroupRef a, GroupRef b) { return a.resolution == b.resolution && a.group == b.group; }),
               refs.end());
    return refs;
}

std::vector<MethodOutput> run_design_methods(const ScenarioConfig& c, const ScenarioData& data)
{
    const auto& family = data.family;
    const std::vector<double> gamma = resolve_gamma(c, family);
    std::vector<std::optional<KnockoffScores>> scores(data.y.size());
    auto scores_of = [&](std::size_t outcome) -> const KnockoffScores& {
        if (!scores[outcome]) scores[outcome] = outcome_scores(c, data, outcome);
        return *scores[outcome];
    };

    // Classical knockoff filter per resolution and its knockoff e-values.
    auto per_resolution = [&]() {
        std::vector<std::vector<GroupRef>> sets(family.resolution_count());
        EValueTable table(static_cast<double>(family.total_groups()));
        const auto& s = scores_of(0);
        for (std::size_t m = 0; m < family.resolution_count(); ++m) {
            for (const std::size_t g : knockoff_filter(s.w[m], c.alpha)) sets[m].push_back({m, g});
            const auto e = knockoff_evalue_vector(s.w[m], static_cast<double>(family.partition(m).size()), c.alpha);
            for (std::size_t g = 0; g < e.size(); ++g) table.add({m, g}, e[g], Provenance::knockoff);
        }
        return std::make_pair(sets, table);
    };

    std::vector<double> levels(family.resolution_count(), c.alpha);
    std::vector<MethodOutput> out;
    for (const auto& method : c.methods) {
        if (method == "kelp") {
            KelpConfig config = KelpConfig::defaults(family, c.alpha);
            config.gamma = gamma;
            const auto result = run_kelp(family, scores_of(0), config);
            const auto& cert = result.solution.rejections.certificate;
            out.push_back({method, result.solution.rejections.rejected, cert.self_consistent && cert.disjoint});
        } else if (method == "knockoff-per-resolution") {
            const auto [sets, table] = per_resolution();
            for (std::size_t m = 0; m < sets.size(); ++m)
                out.push_back({"knockoffs[" + family.partition(m).id + "]", sets[m], true});
        } else if (method == "knockoffs-outer" || method == "ebh-knockoffs-outer") {
            const auto [sets, table] = per_resolution();
            std::vector<GroupRef> all;
            for (const auto& s : sets) all.insert(all.end(), s.begin(), s.end());
            const auto outer = outer_nodes(family, all);
            if (method == "knockoffs-outer") {
                out.push_back({method, outer, true});
            } else {
                out.push_back(amended_ebh(method, outer, table, c.alpha, static_cast<double>(family.total_groups())));
            }
        } else if (method == "efilter") {
            const auto singleton = family.singleton_resolution();
            if (!singleton) throw PreconditionError("efilter needs an individual-feature resolution", "methods");
            const auto& w = scores_of(0).w[*singleton];
            const auto base = knockoff_evalue_vector(w, static_cast<double>(family.p()), gamma[*singleton]);
            const auto layers = mean_merged_layers(family, base);
            const auto result = efilter_thresholds(family, layers, levels);
            const bool member = in_threshold_set(family, layers, levels, result.thresholds);
            for (std::size_t m = 0; m < family.resolution_count(); ++m) {
                MethodOutput o{"efilter[" + family.partition(m).id + "]", {}, member};
                for (const std::size_t g : result.rejected[m]) o.rejected.push_back({m, g});
                out.push_back(std::move(o));
            }
        } else if (method == "emkf") {
            const auto result = run_emkf(family, scores_of(0), levels, gamma);
            const bool member = in_threshold_set(family, result.evalues, levels, result.layers.thresholds);
            for (std::size_t m = 0; m < family.resolution_count(); ++m) {
                MethodOutput o{"emkf[" + family.partition(m).id + "]", {}, member};
                for (const std::size_t g : result.layers.rejected[m]) o.rejected.push_back({m, g});
                out.push_back(std::move(o));
            }
        } else if (method == "pc-kelp") {
            std::vector<KnockoffScores> all;
            for (std::size_t l = 0; l < data.y.size(); ++l) all.push_back(scores_of(l));
            KelpConfig config = partial_conjunction_defaults(family, c.alpha, all.size(), c.pc_u);
            config.gamma = gamma;
            const auto result = run_partial_conjunction_kelp(family, all, c.pc_u, config, c.pc_strict);
            const auto& cert = result.solution.rejections.certificate;
            MethodOutput o{method, result.solution.rejections.rejected, cert.self_consistent && cert.disjoint};
            o.partial_conjunction = true;
            out.push_back(std::move(o));
        } else {
            throw InputError("unknown-method", "unknown method id '" + method + "'", "methods");
        }
    }
    return out;
}

std::vector<MethodOutput> run_tree_methods(const ScenarioConfig& c, const ScenarioData& data)
{
    const auto& family = data.family;
    const std::size_t p = c.p;
    const std::vector<double> level_gamma = resolve_gamma(c, family);
    // Resolution and group of (node, feature).
    auto ref_of = [](std::size_t node, std::size_t j) -> GroupRef {
        if (node < kTreeLeaves) return {0, 4 * j + node};
        if (node < 6) return {1, 2 * j + (node - kTreeLeaves)};
        return {2, j};
    };
    auto level_of = [](std::size_t node) -> std::size_t { return node < kTreeLeaves ? 0 : (node < 6 ? 1 : 2); };

    LassoOptions options = lasso_options(c);
    options.response = ResponseKind::binomial;
    std::vector<std::vector<double>> w(kTreeNodes);
    for (std::size_t v = 0; v < kTreeNodes; ++v) {
        w[v] = lasso_cv_statistics(data.X, data.knockoffs.front(), data.y[v], singleton_partition("node", p), options,
                                   derive(data.seed, 500 + v));
    }

    std::vector<MethodOutput> out;
    for (const auto& method : c.methods) {
        if (method == "kelp") {
            EValueTable table(static_cast<double>(family.total_groups()));
            for (std::size_t v = 0; v < kTreeNodes; ++v) {
                const auto e = knockoff_evalue_vector(w[v], static_cast<double>(p), level_gamma[level_of(v)]);
                for (std::size_t j = 0; j < p; ++j) table.add(ref_of(v, j), e[j], Provenance::knockoff);
            }
            const auto solution = solve(ElpProblem(family, table, c.alpha));
            const auto& cert = solution.rejections.certificate;
            out.push_back({method, solution.rejections.rejected, cert.self_consistent && cert.disjoint});
            continue;
        }
        if (method != "knockoff-per-resolution" && method != "knockoffs-outer" && method != "ebh-knockoffs-outer") {
            if (std::find(method_roster().begin(), method_roster().end(), method) == method_roster().end())
                throw InputError("unknown-method", "unknown method id '" + method + "'", "methods");
            throw PreconditionError("method '" + method + "' is not available for the outcome-tree design", "methods");
        }
        std::vector<std::vector<GroupRef>> level_sets(3);
        EValueTable table(static_cast<double>(family.total_groups()));
        for (std::size_t v = 0; v < kTreeNodes; ++v) {
            for (const std::size_t j : knockoff_filter(w[v], c.alpha)) level_sets[level_of(v)].push_back(ref_of(v, j));
            const auto e = knockoff_evalue_vector(w[v], static_cast<double>(p), c.alpha);
            for (std::size_t j = 0; j < p; ++j) table.add(ref_of(v, j), e[j], Provenance::knockoff);
        }
        for (auto& s : level_sets) s = sorted_unique(std::move(s));
        if (method == "knockoff-per-resolution") {
            for (std::size_t m = 0; m < 3; ++m)
                out.push_back({"knockoffs[" + family.partition(m).id + "]", level_sets[m], true});
            continue;
        }
        std::vector<GroupRef> all;
        for (const auto& s : level_sets) all.insert(all.end(), s.begin(), s.end());
        const auto outer = outer_nodes(family, all);
        if (method == "knockoffs-outer") {
            out.push_back({method, outer, true});
            continue;
        }
        for (std::size_t m = 0; m < 2; ++m) {
            out.push_back(amended_ebh("ebh-knockoffs[" + family.partition(m).id + "]", level_sets[m], table, c.alpha,
                                      static_cast<double>(family.partition(m).size())));
        }
        out.push_back(amended_ebh(method, outer, table, c.alpha, static_cast<double>(family.total_groups())));
    }
    return out;
}

// ---- summaries ----

std::string csv_number(double v)
{
    return std::isnan(v) ? std::string() : format_number(v);
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

std::vector<std::pair<std::string, double>> metric_values(const MetricsRow& row)
{
    return {{"fdp", row.fdp},
            {"power", row.power},
            {"size", row.size},
            {"rejections", row.rejections},
            {"cardinality", row.cardinality},
            {"precision", row.precision},
            {"certified", row.certified ? 1.0 : 0.0},
            {"snr", row.snr}};
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows,
                                  const std::vector<std::pair<std::string, ScenarioConfig>>& points)
{
    std::vector<SummaryRow> out;
    for (const auto& point : points) {
        std::vector<std::string> methods;
        for (const auto& row : rows)
            if (row.params == point.first && std::find(methods.begin(), methods.end(), row.method) == methods.end())
                methods.push_back(row.method);
        for (const auto& method : methods) {
            std::map<std::string, std::vector<double>> values;
            std::vector<std::string> order;
            for (const auto& row : rows) {
                if (row.params != point.first || row.method != method) continue;
                for (const auto& [name, v] : metric_values(row)) {
                    if (!values.count(name)) order.push_back(name);
                    if (!std::isnan(v)) values[name].push_back(v);
                    else values[name];
                }
            }
            for (const auto& name : order) {
                const auto& v = values[name];
                if (v.empty()) continue;
                const double n = static_cast<double>(v.size());
                const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
                double ss = 0.0;
                for (const double x : v) ss += (x - mean) * (x - mean);
                const double se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
                out.push_back({method, point.first, name, mean, se, v.size()});
            }
        }
    }
    return out;
}

} // namespace

std::string to_string(DesignKind kind)
{
    switch (kind) {
    case DesignKind::block_ar1: return "block-ar1";
    case DesignKind::ar1_global: return "ar1-global";
    case DesignKind::fixed_equi_mlkf: return "fixed-equi-mlkf";
    case DesignKind::outcome_tree: return "outcome-tree";
    }
    return "block-ar1";
}

DesignKind parse_design(const std::string& name)
{
    for (const auto kind : {DesignKind::block_ar1, DesignKind::ar1_global, DesignKind::fixed_equi_mlkf,
                            DesignKind::outcome_tree})
        if (to_string(kind) == name) return kind;
    throw field_error("design", "unknown design '" + name +
                                    "' (expected block-ar1|ar1-global|fixed-equi-mlkf|outcome-tree)");
}

ScenarioConfig parse_scenario(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed scenario: ") + e.what(), "byte " + std::to_string(e.byte));
    }
    if (!doc.is_object()) throw ParseError("scenario must be a JSON object");
    ScenarioConfig c;
    // The design picks defaults before the other fields override them.
    if (doc.contains("design")) {
        c.design = parse_design(get_string(doc["design"], "design"));
        if (c.design == DesignKind::fixed_equi_mlkf) {
            c.rho = 0.3;
            c.group_sizes = {1, 10};
            c.amplitude_law = AmplitudeLaw::fixed;
            c.methods = {"efilter", "emkf"};
        } else if (c.design == DesignKind::outcome_tree) {
            c.rho = 0.3;
            c.mu = 1.0;
            c.tau = 0.5;
            c.group_sizes.clear();
        } else if (c.design == DesignKind::ar1_global) {
            c.group_sizes = {1, 5};
        }
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        if (key == "design") continue;
        else if (key == "p") c.p = get_count(v, key);
        else if (key == "n") c.n = get_count(v, key);
        else if (key == "n_over_p") c.n_over_p = get_number(v, key);
        else if (key == "rho") c.rho = get_number(v, key);
        else if (key == "block") c.block = get_count(v, key);
        else if (key == "group_sizes") {
            if (!v.is_array()) throw field_error(key, "expected a list of group sizes");
            c.group_sizes.clear();
            for (std::size_t i = 0; i < v.size(); ++i)
                c.group_sizes.push_back(get_count(v[i], key + "[" + std::to_string(i) + "]"));
        } else if (key == "sparsity") c.sparsity = get_number(v, key);
        else if (key == "nonzero_groups") c.nonzero_groups = get_count(v, key);
        else if (key == "amplitude_law") {
            const std::string law = get_string(v, key);
            if (law == "gaussian") c.amplitude_law = AmplitudeLaw::gaussian;
            else if (law == "fixed") c.amplitude_law = AmplitudeLaw::fixed;
            else throw field_error(key, "expected gaussian|fixed");
        } else if (key == "mu") c.mu = get_number(v, key);
        else if (key == "tau") c.tau = get_number(v, key);
        else if (key == "amplitude") c.amplitude = get_number(v, key);
        else if (key == "signal_scale") c.signal_scale = get_number(v, key);
        else if (key == "outcomes") c.outcomes = get_count(v, key);
        else if (key == "pc_u") c.pc_u = get_count(v, key);
        else if (key == "pc_strict") c.pc_strict = get_bool(v, key);
        else if (key == "alpha") c.alpha = get_number(v, key);
        else if (key == "gamma") c.gamma = v.is_number() ? format_number(v.get<double>()) : get_string(v, key);
        else if (key == "methods") {
            if (!v.is_array()) throw field_error(key, "expected a list of method ids");
            c.methods.clear();
            for (std::size_t i = 0; i < v.size(); ++i)
                c.methods.push_back(get_string(v[i], key + "[" + std::to_string(i) + "]"));
        } else if (key == "replicates") c.replicates = get_count(v, key);
        else if (key == "seed") c.seed = get_count(v, key);
        else if (key == "folds") c.folds = get_count(v, key);
        else if (key == "n_lambda") c.n_lambda = get_count(v, key);
        else if (key == "case_rate") c.case_rate = get_number(v, key);
        else if (key == "sibling_overlap") c.sibling_overlap = get_number(v, key);
        else if (key == "cache_dir") c.cache_dir = get_string(v, key);
        else if (key == "sweep") {
            if (!v.is_object() || !v.contains("name") || !v.contains("values") || v.size() != 2)
                throw field_error(key, "expected {\"name\": ..., \"values\": [...]}");
            SweepAxis axis{get_string(v["name"], "sweep.name"), {}};
            if (!v["values"].is_array()) throw field_error("sweep.values", "expected a list of numbers");
            for (std::size_t i = 0; i < v["values"].size(); ++i)
                axis.values.push_back(get_number(v["values"][i], "sweep.values[" + std::to_string(i) + "]"));
            c.sweep = std::move(axis);
        } else {
            throw field_error(key, "unknown field");
        }
    }
    validate(c);
    return c;
}

ScenarioConfig load_scenario(const std::string& path)
{
    return parse_scenario(read_text(path));
}

std::string scenario_json(const ScenarioConfig& c)
{
    json j;
    j["design"] = to_string(c.design);
    j["p"] = c.p;
    j["n"] = c.n;
    j["n_over_p"] = c.n_over_p;
    j["rho"] = c.rho;
    j["block"] = c.block;
    j["group_sizes"] = c.group_sizes;
    j["sparsity"] = c.sparsity;
    j["nonzero_groups"] = c.nonzero_groups;
    j["amplitude_law"] = c.amplitude_law == AmplitudeLaw::fixed ? "fixed" : "gaussian";
    j["mu"] = c.mu;
    j["tau"] = c.tau;
    j["amplitude"] = c.amplitude;
    j["signal_scale"] = c.signal_scale;
    j["outcomes"] = c.outcomes;
    j["pc_u"] = c.pc_u;
    j["pc_strict"] = c.pc_strict;
    j["alpha"] = c.alpha;
    j["gamma"] = c.gamma;
    j["methods"] = c.methods;
    j["replicates"] = c.replicates;
    j["seed"] = c.seed;
    j["folds"] = c.folds;
    j["n_lambda"] = c.n_lambda;
    j["case_rate"] = c.case_rate;
    j["sibling_overlap"] = c.sibling_overlap;
    if (!c.cache_dir.empty()) j["cache_dir"] = c.cache_dir;
    if (c.sweep) j["sweep"] = {{"name", c.sweep->name}, {"values", c.sweep->values}};
    return j.dump(2);
}

ScenarioConfig with_parameter(const ScenarioConfig& config, const std::string& name, double value)
{
    ScenarioConfig c = config;
    if (name == "n_over_p") {
        c.n_over_p = value;
        c.n = 0;
    } else if (name == "n") {
        if (!(value >= 1.0) || value != std::floor(value)) throw field_error("sweep.values", "n must be a positive integer");
        c.n = static_cast<std::size_t>(value);
    } else if (name == "sparsity") c.sparsity = value;
    else if (name == "tau") c.tau = value;
    else if (name == "mu") c.mu = value;
    else if (name == "amplitude") c.amplitude = value;
    else if (name == "signal_scale") c.signal_scale = value;
    else if (name == "rho") c.rho = value;
    else if (name == "alpha") c.alpha = value;
    else throw field_error("sweep.name", "cannot sweep '" + name +
                                             "' (expected n_over_p|n|sparsity|tau|mu|amplitude|signal_scale|rho|alpha)");
    return c;
}

std::size_t resolved_n(const ScenarioConfig& c)
{
    if (c.n > 0) return c.n;
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(c.n_over_p * static_cast<double>(c.p))));
}

std::size_t nonzero_count(const ScenarioConfig& c)
{
    return static_cast<std::size_t>(std::llround(c.sparsity * static_cast<double>(c.p)));
}

std::uint64_t replicate_seed(std::uint64_t master, std::size_t replicate)
{
    return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(replicate) + 0xD1B54A32D192ED03ULL));
}

HypothesisFamily tree_family(std::size_t p)
{
    std::vector<std::vector<std::size_t>> leaf, internal, root;
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t l = 0; l < kTreeLeaves; ++l) leaf.push_back({4 * j + l});
        internal.push_back({4 * j, 4 * j + 1});
        internal.push_back({4 * j + 2, 4 * j + 3});
        root.push_back({4 * j, 4 * j + 1, 4 * j + 2, 4 * j + 3});
    }
    return HypothesisFamily(4 * p, {make_partition("leaf", std::move(leaf)),
                                    make_partition("internal", std::move(internal)),
                                    make_partition("root", std::move(root))});
}

ScenarioData generate_scenario(const ScenarioConfig& c, std::size_t replicate)
{
    ScenarioData data;
    data.seed = replicate_seed(c.seed, replicate);
    if (c.design == DesignKind::outcome_tree) {
        generate_tree(c, data);
        return data;
    }
    const std::size_t n = resolved_n(c);
    if (c.design == DesignKind::fixed_equi_mlkf && n < 2 * c.p)
        throw InputError("infeasible-scenario", "fixed-equi knockoffs need n >= 2p", "n");
    data.family = design_family(c);
    const Matrix sigma = design_covariance(c);
    const std::uint64_t xs = derive(data.seed, 1);
    const Matrix X = cached(c, "X", xs, [&] { return sample_design(GaussianDesign{sigma}, n, xs); });

    data.snr = 0.0;
    for (std::size_t l = 0; l < c.outcomes; ++l) {
        std::mt19937_64 rng(derive(data.seed, 100 + l));
        Vector beta = Vector::Zero(static_cast<Eigen::Index>(c.p));
        const auto support = draw_support(c, data.family, rng);
        for (const std::size_t j : support) beta(static_cast<Eigen::Index>(j)) = draw_coefficient(c, n, rng);
        std::mt19937_64 noise(derive(data.seed, 200 + l));
        Vector y = X * beta + standard_normal(n, 1, noise).col(0);
        if (l == 0) data.snr = beta.dot(sigma * beta);
        data.outcome_truth.push_back({support});
        data.beta.push_back(std::move(beta));
        data.y.push_back(std::move(y));
    }
    data.truth = data.outcome_truth.front();

    if (c.design == DesignKind::fixed_equi_mlkf) {
        auto fk = fixed_equi_knockoffs(X);
        data.X = std::move(fk.X);
        data.knockoffs = {std::move(fk.Xtilde)};
        return data;
    }
    data.X = X;
    for (std::size_t m = 0; m < data.family.resolution_count(); ++m) {
        const auto& part = data.family.partition(m);
        const std::uint64_t ks = derive(data.seed, 300 + m);
        data.knockoffs.push_back(cached(c, "Xk" + std::to_string(m), ks, [&] {
            const auto recipe = part.size() == c.p ? equicorrelated_recipe(sigma)
                                                   : group_equicorrelated_recipe(sigma, part);
            return sample_knockoffs(X, sigma, recipe, ks);
        }));
    }
    return data;
}

std::vector<MethodOutput> run_methods(const ScenarioConfig& config, const ScenarioData& data)
{
    if (config.design == DesignKind::outcome_tree) return run_tree_methods(config, data);
    return run_design_methods(config, data);
}

MetricsRow score(const MethodOutput& output, const ScenarioData& data, const ScenarioConfig& config)
{
    const auto& family = data.family;
    MetricsRow row;
    row.method = output.method;
    row.seed = data.seed;
    row.snr = data.snr;
    row.certified = output.certified;

    // Partial conjunction: A is non-null when at least u outcomes touch it.
    auto outcomes_touching = [&](const std::vector<std::size_t>& members) {
        std::size_t count = 0;
        for (const auto& truth : data.outcome_truth)
            if (!is_null_group(members, truth)) ++count;
        return count;
    };
    auto is_null = [&](GroupRef ref) {
        const auto& members = family.members(ref);
        if (output.partial_conjunction) return outcomes_touching(members) < config.pc_u;
        if (config.design == DesignKind::outcome_tree) return null_status(family, data.truth, ref);
        return is_null_group(members, data.outcome_truth.at(output.outcome));
    };

    std::set<std::size_t> covered;
    std::size_t nulls = 0;
    std::size_t members_total = 0;
    double precision = 0.0;
    std::size_t correct = 0;
    for (const GroupRef ref : output.rejected) {
        const auto& members = family.members(ref);
        covered.insert(members.begin(), members.end());
        members_total += members.size();
        if (is_null(ref)) {
            ++nulls;
        } else {
            ++correct;
            precision += family.weight(ref);
        }
    }
    const double R = static_cast<double>(output.rejected.size());
    row.rejections = R;
    row.fdp = static_cast<double>(nulls) / std::max(1.0, R);
    row.size = static_cast<double>(covered.size());
    row.cardinality = R > 0 ? static_cast<double>(members_total) / R : kNaN;

    if (config.design == DesignKind::outcome_tree) {
        const double total = static_cast<double>(data.truth.nonzero_features.size());
        row.power = total > 0 ? static_cast<double>(correct) / total : kNaN;
        row.precision = precision;
        return row;
    }
    row.precision = kNaN;
    std::vector<std::size_t> nonzero;
    if (output.partial_conjunction) {
        for (std::size_t j = 0; j < family.p(); ++j)
            if (outcomes_touching({j}) >= config.pc_u) nonzero.push_back(j);
    } else {
        nonzero = data.outcome_truth.at(output.outcome).nonzero_features;
    }
    std::size_t hit = 0;
    for (const std::size_t j : nonzero) hit += covered.count(j);
    row.power = nonzero.empty() ? kNaN : static_cast<double>(hit) / static_cast<double>(nonzero.size());
    return row;
}

const SummaryRow* SweepResult::find(const std::string& method, const std::string& params,
                                    const std::string& metric) const
{
    for (const auto& row : summary)
        if (row.method == method && row.params == params && row.metric == metric) return &row;
    return nullptr;
}

std::vector<std::pair<std::string, ScenarioConfig>> sweep_points(const ScenarioConfig& config)
{
    if (!config.sweep) return {{"", config}};
    std::vector<std::pair<std::string, ScenarioConfig>> out;
    for (const double v : config.sweep->values)
        out.emplace_back(config.sweep->name + "=" + format_number(v), with_parameter(config, config.sweep->name, v));
    return out;
}

SweepResult replicate_sweep(const ScenarioConfig& config, std::size_t threads)
{
    const auto points = sweep_points(config);
    const std::size_t tasks = points.size() * config.replicates;
    std::vector<std::vector<MetricsRow>> rows(tasks);
    std::vector<std::optional<ReplicateFailure>> failures(tasks);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < tasks; t = next++) {
            const auto& [label, point] = points[t / config.replicates];
            const std::size_t replicate = t % config.replicates;
            try {
                const ScenarioData data = generate_scenario(point, replicate);
                for (const auto& output : run_methods(point, data)) {
                    MetricsRow row = score(output, data, point);
                    row.params = label;
                    row.replicate = replicate;
                    rows[t].push_back(std::move(row));
                }
            } catch (const std::exception& e) {
                rows[t].clear();
                failures[t] = ReplicateFailure{label, replicate, replicate_seed(point.seed, replicate), e.what()};
            }
        }
    };
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(tasks, 1));
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    SweepResult result;
    result.tasks = tasks;
    for (std::size_t t = 0; t < tasks; ++t) {
        for (auto& row : rows[t]) result.rows.push_back(std::move(row));
        if (failures[t]) result.failures.push_back(*failures[t]);
    }
    result.summary = summarize(result.rows, points);
    return result;
}

std::string format_replicates_csv(const SweepResult& result)
{
    std::string out = "method,params,replicate,seed,fdp,power,size,rejections,cardinality,precision,snr,certified,"
                      "error\n";
    for (const auto& r : result.rows) {
        out += csv_field(r.method) + "," + csv_field(r.params) + "," + std::to_string(r.replicate) + "," +
               std::to_string(r.seed) + "," + csv_number(r.fdp) + "," + csv_number(r.power) + "," +
               csv_number(r.size) + "," + csv_number(r.rejections) + "," + csv_number(r.cardinality) + "," +
               csv_number(r.precision) + "," + csv_number(r.snr) + "," + (r.certified ? "1" : "0") + ",\n";
    }
    for (const auto& f : result.failures) {
        out += "failed," + csv_field(f.params) + "," + std::to_string(f.replicate) + "," + std::to_string(f.seed) +
               ",,,,,,,,," + csv_field(f.error) + "\n";
    }
    return out;
}

std::string format_summary_csv(const SweepResult& result)
{
    std::string out = "method,params,metric,mean,se,count\n";
    for (const auto& s : result.summary) {
        out += csv_field(s.method) + "," + csv_field(s.params) + "," + s.metric + "," + csv_number(s.mean) + "," +
               csv_number(s.se) + "," + std::to_string(s.count) + "\n";
    }
    return out;
}

std::string format_meta_json(const ScenarioConfig& config, const SweepResult& result)
{
    json meta;
    meta["config"] = json::parse(scenario_json(config));
    json points = json::array();
    for (const auto& [label, point] : sweep_points(config)) {
        points.push_back({{"params", label},
                          {"n", resolved_n(point)},
                          {"nonzero", nonzero_count(point)},
                          {"alpha", point.alpha}});
    }
    meta["points"] = points;
    meta["lasso"] = {{"folds", config.folds},
                     {"n_lambda", config.n_lambda},
                     {"lambda_min_ratio", LassoOptions{}.lambda_min_ratio},
                     {"tolerance", LassoOptions{}.tolerance},
                     {"statistic", config.design == DesignKind::fixed_equi_mlkf ? "signed-max entry penalty"
                                                                                : "cross-validated lasso coefficient difference"}};
    meta["knockoffs"] = config.design == DesignKind::fixed_equi_mlkf
                            ? "fixed-equi"
                            : (config.design == DesignKind::outcome_tree ? "equicorrelated"
                                                                         : "equicorrelated / group-equicorrelated");
    meta["tasks"] = result.tasks;
    json failures = json::array();
    for (const auto& f : result.failures)
        failures.push_back({{"params", f.params}, {"replicate", f.replicate}, {"seed", f.seed}, {"error", f.error}});
    meta["failures"] = failures;
    meta["quality_failure"] = result.quality_failure();
    return meta.dump(2) + "\n";
}

void write_sweep(const ScenarioConfig& config, const SweepResult& result, const std::string& directory)
{
    std::filesystem::create_directories(directory);
    const std::filesystem::path dir(directory);
    write_text((dir / "replicates.csv").string(), format_replicates_csv(result));
    write_text((dir / "summary.csv").string(), format_summary_csv(result));
    write_text((dir / "meta.json").string(), format_meta_json(config, result));
}

std::size_t default_threads()
{
    const char* env = std::getenv("KELP_THREADS");
    if (env == nullptr || *env == '\0') return 0;
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    return end != nullptr && *end == '\0' ? static_cast<std::size_t>(v) : 0;
}

} // namespace kelp
