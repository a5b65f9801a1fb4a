#include "kelp/cli.hpp"

#include "kelp/elp.hpp"
#include "kelp/errors.hpp"
#include "kelp/io.hpp"
#include "kelp/kelp.hpp"
#include "kelp/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

namespace kelp {

namespace {

using json = nlohmann::ordered_json;

struct Options
{
    double alpha = 0.1;
    std::string gamma = "half";
    std::string c_policy = "uniform";
    std::string solver = "auto";
    std::string weights = "inverse-size";
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::string out;
    std::uint64_t node_budget = 0;
    std::string tune_on;
    std::string family;
    std::string evalues;
    std::vector<std::string> scores;
    std::string levels;
    std::size_t u = 1;
    bool lenient = false;
    std::string config;
    std::size_t replicates = 0;
    bool seed_set = false;
};

json number(double v)
{
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    return json(v);
}

std::vector<double> parse_list(const std::string& text, const std::string& field)
{
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_number(item, field));
    if (out.empty()) throw PreconditionError("empty list", field);
    return out;
}

bool is_number(const std::string& text)
{
    try {
        parse_number(text, "");
        return true;
    } catch (const ParseError&) {
        return false;
    }
}

// Family with optional per-group weights from a CSV of
// `resolution_id, group_index, weight`.
HypothesisFamily load_weighted_family(const Options& o)
{
    if (o.family.empty()) throw PreconditionError("--family is required", "family");
    HypothesisFamily family = load_family(o.family);
    if (o.weights == "inverse-size") return family;
    const CsvTable csv = parse_csv(read_text(o.weights), {"resolution_id", "group_index", "weight"}, o.weights);
    std::vector<Partition> parts = family.partitions();
    for (auto& part : parts) {
        part.weights.assign(part.size(), 0.0);
        for (std::size_t g = 0; g < part.size(); ++g) part.weights[g] = 1.0 / static_cast<double>(part.groups[g].size());
    }
    const auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(csv.header.begin(), csv.header.end(), name) - csv.header.begin());
    };
    for (std::size_t i = 0; i < csv.rows.size(); ++i) {
        const std::string where = o.weights + ":" + std::to_string(csv.lines[i]);
        const auto m = family.resolution_index(csv.rows[i][col("resolution_id")]);
        if (!m) throw ParseError("unknown resolution '" + csv.rows[i][col("resolution_id")] + "'", where);
        const double g = parse_number(csv.rows[i][col("group_index")], where);
        if (g < 1 || g > static_cast<double>(parts[*m].size()) || g != std::floor(g))
            throw ParseError("group_index out of range", where);
        parts[*m].weights[static_cast<std::size_t>(g) - 1] = parse_number(csv.rows[i][col("weight")], where);
    }
    return HypothesisFamily(family.p(), std::move(parts));
}

KelpConfig make_config(const HypothesisFamily& family, const Options& o)
{
    KelpConfig config = KelpConfig::defaults(family, o.alpha);
    if (is_number(o.gamma)) {
        config.gamma.assign(family.resolution_count(), parse_number(o.gamma, "gamma"));
    } else {
        config.gamma = gamma_preset(family, o.alpha, parse_gamma_preset(o.gamma));
    }
    if (o.c_policy != "uniform") {
        config.c = parse_list(o.c_policy, "c-policy");
        if (config.c.size() != family.resolution_count()) {
            throw PreconditionError("--c-policy needs one value per resolution (" +
                                        std::to_string(family.resolution_count()) + ")",
                                    "c-policy");
        }
    }
    return config;
}

std::vector<double> make_levels(const HypothesisFamily& family, const Options& o)
{
    if (o.levels.empty()) return std::vector<double>(family.resolution_count(), o.alpha);
    auto levels = parse_list(o.levels, "levels");
    if (levels.size() != family.resolution_count())
        throw PreconditionError("--levels needs one value per layer", "levels");
    return levels;
}

std::filesystem::path out_dir(const Options& o)
{
    if (o.out.empty()) throw PreconditionError("--out is required", "out");
    std::filesystem::create_directories(o.out);
    return o.out;
}

json rejection_rows(const std::vector<GroupRef>& refs, const HypothesisFamily& family, const EValueTable& evalues)
{
    json rows = json::array();
    for (const auto& ref : refs) {
        std::vector<std::size_t> members;
        for (const std::size_t j : family.members(ref)) members.push_back(j + 1);
        rows.push_back({{"resolution_id", family.partition(ref.resolution).id},
                        {"group_index", ref.group + 1},
                        {"members", members},
                        {"evalue", number(evalues.value(ref))},
                        {"weight", family.weight(ref)}});
    }
    return rows;
}

json certificate_json(const Certificate& cert)
{
    return {{"n_total", cert.n_total},
            {"rejections", cert.rejections},
            {"threshold", cert.rejections == 0 ? json(nullptr) : number(cert.threshold)},
            {"min_rejected_evalue", cert.rejections == 0 ? json(nullptr) : number(cert.min_rejected_e)},
            {"self_consistent", cert.self_consistent},
            {"disjoint", cert.disjoint}};
}

json evalue_summary(const HypothesisFamily& family, const EValueTable& table)
{
    json out = json::array();
    for (std::size_t m = 0; m < family.resolution_count(); ++m) {
        std::size_t nonzero = 0;
        double max = 0.0;
        double sum = 0.0;
        for (std::size_t g = 0; g < family.partition(m).size(); ++g) {
            const double e = table.value({m, g});
            if (e > 0) ++nonzero;
            max = std::max(max, e);
            sum += e;
        }
        out.push_back({{"resolution_id", family.partition(m).id},
                       {"groups", family.partition(m).size()},
                       {"nonzero", nonzero},
                       {"max", number(max)},
                       {"sum", number(sum)}});
    }
    return out;
}

std::string summary_text(const std::string& command, const HypothesisFamily& family, double alpha,
                         const std::vector<GroupRef>& rejected)
{
    std::ostringstream s;
    s << command << ": " << rejected.size() << " rejection" << (rejected.size() == 1 ? "" : "s") << " at alpha "
      << format_number(alpha) << " over " << family.total_groups() << " groups in " << family.resolution_count()
      << " resolution" << (family.resolution_count() == 1 ? "" : "s") << "\n";
    for (const auto& ref : rejected) {
        s << "  " << family.partition(ref.resolution).id << " #" << ref.group + 1 << " {";
        const auto& members = family.members(ref);
        for (std::size_t i = 0; i < members.size(); ++i) s << (i ? "," : "") << members[i] + 1;
        s << "}\n";
    }
    return s.str();
}

void write_reports(const std::filesystem::path& dir, const std::string& rejections_csv, const json& certificate,
                   const std::string& summary, std::ostream& out)
{
    write_text((dir / "rejections.csv").string(), rejections_csv);
    write_text((dir / "certificate.json").string(), certificate.dump(2) + "\n");
    write_text((dir / "summary.txt").string(), summary);
    out << summary;
}

int cmd_kelp(const Options& o, std::ostream& out)
{
    const HypothesisFamily family = load_weighted_family(o);
    if (o.scores.size() != 1) throw PreconditionError("kelp takes exactly one --scores file", "scores");
    const KnockoffScores scores = load_scores_csv(o.scores.front(), family);
    KelpConfig config = make_config(family, o);
    json tuning = nullptr;
    if (!o.tune_on.empty()) {
        const KnockoffScores holdout = load_scores_csv(o.tune_on, family);
        std::vector<double> grid;
        for (int k = 1; k <= 10; ++k) grid.push_back(o.alpha * k / 10.0);
        const std::vector<double> alphas{o.alpha / 4, o.alpha / 2, o.alpha};
        const GammaTuning t = tune_gamma(family, holdout, config, grid, alphas);
        config.gamma.assign(family.resolution_count(), t.gamma);
        tuning = {{"holdout", o.tune_on},
                  {"chosen_gamma", t.gamma},
                  {"gamma_grid", t.grid},
                  {"alpha_grid", alphas},
                  {"rejections", t.rejections}};
    }
    const SolverKind solver = parse_solver(o.solver);
    const KelpResult result = run_kelp(family, scores, config, solver, o.node_budget);
    const auto& rej = result.solution.rejections;
    json cert = json::parse(solution_report(result.solution, family, result.evalues));
    json resolutions = json::array();
    const json summary = evalue_summary(family, result.evalues);
    for (std::size_t m = 0; m < family.resolution_count(); ++m) {
        json r = summary[m];
        r["stopping_time"] = number(result.stopping_times[m]);
        r["c"] = config.c[m];
        r["gamma"] = config.gamma[m];
        resolutions.push_back(r);
    }
    json doc;
    doc["command"] = "kelp";
    doc["alpha"] = config.alpha;
    doc["resolutions"] = resolutions;
    doc["gamma_tuning"] = tuning;
    for (auto it = cert.begin(); it != cert.end(); ++it) doc[it.key()] = it.value();
    write_reports(out_dir(o), format_rejections_csv(rej, family, result.evalues), doc,
                  summary_text("kelp", family, config.alpha, rej.rejected), out);
    return kExitOk;
}

int cmd_ebh(const Options& o, std::ostream& out, bool focused)
{
    const HypothesisFamily family = load_weighted_family(o);
    if (o.evalues.empty()) throw PreconditionError("--evalues is required", "evalues");
    check_alpha(o.alpha);
    const EValueTable table = load_evalue_csv(o.evalues, family);
    RejectionSet set = focused ? focused_ebh(family, table, o.alpha) : ebh(table, o.alpha);
    if (!focused) set.certificate.disjoint = verify_disjoint(family, set.rejected);
    const std::string name = focused ? "focused-ebh" : "ebh";
    json doc;
    doc["command"] = name;
    doc["alpha"] = o.alpha;
    doc["evalues"] = evalue_summary(family, table);
    doc["certificate"] = certificate_json(set.certificate);
    doc["rejections"] = rejection_rows(set.rejected, family, table);
    write_reports(out_dir(o), format_rejections_csv(set, family, table), doc,
                  summary_text(name, family, o.alpha, set.rejected), out);
    return kExitOk;
}

void write_multilayer(const Options& o, const std::string& name, const HypothesisFamily& family,
                      const std::vector<std::vector<double>>& layer_e, const MultilayerResult& result,
                      const json& extra, std::ostream& out)
{
    EValueTable table(static_cast<double>(family.total_groups()));
    for (std::size_t m = 0; m < layer_e.size(); ++m)
        for (std::size_t g = 0; g < layer_e[m].size(); ++g) table.add({m, g}, layer_e[m][g]);
    RejectionSet set;
    set.alpha = o.alpha;
    json layers = json::array();
    for (std::size_t m = 0; m < family.resolution_count(); ++m) {
        std::vector<GroupRef> refs;
        for (const std::size_t g : result.rejected[m]) refs.push_back({m, g});
        set.rejected.insert(set.rejected.end(), refs.begin(), refs.end());
        layers.push_back({{"resolution_id", family.partition(m).id},
                          {"level", result.levels[m]},
                          {"threshold", number(result.thresholds[m])},
                          {"rejections", refs.size()}});
    }
    json doc;
    doc["command"] = name;
    doc["layers"] = layers;
    doc["rounds"] = result.rounds;
    std::vector<std::size_t> selected;
    for (const std::size_t j : result.selected) selected.push_back(j + 1);
    doc["selected_features"] = selected;
    doc["fixed_point_member"] = in_threshold_set(family, layer_e, result.levels, result.thresholds);
    for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
    doc["rejections"] = rejection_rows(set.rejected, family, table);
    write_reports(out_dir(o), format_rejections_csv(set, family, table), doc,
                  summary_text(name, family, o.alpha, set.rejected), out);
}

int cmd_efilter(const Options& o, std::ostream& out)
{
    const HypothesisFamily family = load_weighted_family(o);
    if (o.evalues.empty()) throw PreconditionError("--evalues is required", "evalues");
    const EValueTable table = load_evalue_csv(o.evalues, family);
    std::vector<std::vector<double>> layer_e(family.resolution_count());
    for (std::size_t m = 0; m < family.resolution_count(); ++m)
        for (std::size_t g = 0; g < family.partition(m).size(); ++g) layer_e[m].push_back(table.value({m, g}));
    const auto levels = make_levels(family, o);
    const auto result = efilter_thresholds(family, layer_e, levels);
    write_multilayer(o, "efilter", family, layer_e, result, json::object(), out);
    return kExitOk;
}

int cmd_emkf(const Options& o, std::ostream& out)
{
    const HypothesisFamily family = load_weighted_family(o);
    if (o.scores.size() != 1) throw PreconditionError("emkf takes exactly one --scores file", "scores");
    const KnockoffScores scores = load_scores_csv(o.scores.front(), family);
    const auto levels = make_levels(family, o);
    const KelpConfig config = make_config(family, o);
    const auto result = run_emkf(family, scores, levels, config.gamma);
    json extra;
    json times = json::array();
    for (const double t : result.stopping_times) times.push_back(number(t));
    extra["stopping_times"] = times;
    extra["gamma"] = config.gamma;
    write_multilayer(o, "emkf", family, result.evalues, result.layers, extra, out);
    return kExitOk;
}

int cmd_pc_kelp(const Options& o, std::ostream& out)
{
    const HypothesisFamily family = load_weighted_family(o);
    if (o.scores.empty()) throw PreconditionError("pc-kelp needs one --scores file per outcome", "scores");
    std::vector<KnockoffScores> outcomes;
    for (const auto& path : o.scores) outcomes.push_back(load_scores_csv(path, family));
    KelpConfig config = make_config(family, o);
    if (o.c_policy == "uniform" && !o.lenient) {
        config.c = partial_conjunction_defaults(family, o.alpha, outcomes.size(), o.u).c;
    }
    const KelpResult result = run_partial_conjunction_kelp(family, outcomes, o.u, config, !o.lenient,
                                                           parse_solver(o.solver), o.node_budget);
    const auto& rej = result.solution.rejections;
    json doc = json::parse(solution_report(result.solution, family, result.evalues));
    doc["command"] = "pc-kelp";
    doc["outcomes"] = outcomes.size();
    doc["u"] = o.u;
    doc["strict_budget"] = !o.lenient;
    doc["control_level"] = result.control_level;
    doc["c"] = config.c;
    doc["gamma"] = config.gamma;
    doc["evalues"] = evalue_summary(family, result.evalues);
    write_reports(out_dir(o), format_rejections_csv(rej, family, result.evalues), doc,
                  summary_text("pc-kelp", family, o.alpha, rej.rejected), out);
    return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out)
{
    if (o.config.empty()) throw PreconditionError("--config is required", "config");
    ScenarioConfig config = load_scenario(o.config);
    if (o.replicates > 0) config.replicates = o.replicates;
    if (o.seed_set) config.seed = o.seed;
    const std::size_t threads = o.threads > 0 ? o.threads : default_threads();
    const SweepResult result = replicate_sweep(config, threads);
    write_sweep(config, result, out_dir(o).string());
    for (const auto& s : result.summary) {
        if (s.metric != "fdp" && s.metric != "power" && s.metric != "size") continue;
        out << s.method << (s.params.empty() ? "" : " [" + s.params + "]") << " " << s.metric << " "
            << format_number(std::round(s.mean * 1e4) / 1e4) << " (se " << format_number(std::round(s.se * 1e4) / 1e4)
            << ", n=" << s.count << ")\n";
    }
    out << result.failures.size() << " of " << result.tasks << " replicates failed\n";
    return result.quality_failure() ? kExitQuality : kExitOk;
}

int cmd_validate(const Options& o, std::ostream& out)
{
    bool ok = true;
    auto check = [&](const std::string& rule, const std::function<void()>& body) {
        try {
            body();
            out << "PASS " << rule << "\n";
        } catch (const std::exception& e) {
            ok = false;
            out << "FAIL " << rule << ": " << e.what() << "\n";
        }
    };
    if (o.family.empty() && o.config.empty()) throw PreconditionError("validate needs --family or --config", "family");
    std::optional<HypothesisFamily> family;
    if (!o.family.empty()) {
        check("family partitions are disjoint covers with positive weights", [&] { family = load_weighted_family(o); });
    }
    if (family) {
        const double total = static_cast<double>(family->total_groups());
        check("budget sum c_m <= |A| = " + format_number(total), [&] { make_config(*family, o).validate(*family); });
        if (!o.evalues.empty()) check("e-values parse and are nonnegative", [&] { load_evalue_csv(o.evalues, *family); });
        for (const auto& path : o.scores) check("scores cover every group (" + path + ")", [&] { load_scores_csv(path, *family); });
    }
    if (!o.config.empty()) check("scenario config", [&] { load_scenario(o.config); });
    if (ok) out << "all checks passed\n";
    return ok ? kExitOk : kExitInput;
}

void write_error(const Options& o, const std::string& kind, const std::string& message, const std::string& field,
                 std::ostream& err)
{
    json doc{{"error", kind}, {"message", message}, {"field", field}};
    err << "error: " << message << (field.empty() ? "" : " [" + field + "]") << "\n";
    if (o.out.empty()) return;
    try {
        std::filesystem::create_directories(o.out);
        write_text((std::filesystem::path(o.out) / "error.json").string(), doc.dump(2) + "\n");
    } catch (const std::exception&) {
    }
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Options o;
    CLI::App app{"Multi-resolution FDR control with knockoff e-values", "kelp"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    auto shared = [&](CLI::App* sub) {
        sub->add_option("--alpha", o.alpha, "Target FDR level in (0,1)");
        sub->add_option("--gamma", o.gamma, "Stopping level: a number or half|quarter|graded");
        sub->add_option("--c-policy", o.c_policy, "uniform or comma-separated c_m per resolution");
        sub->add_option("--solver", o.solver, "auto|exact|dp|bnb");
        sub->add_option("--weights", o.weights, "inverse-size or a CSV of resolution_id,group_index,weight");
        sub->add_option("--seed", o.seed, "Random seed")->each([&](const std::string&) { o.seed_set = true; });
        sub->add_option("--threads", o.threads, "Worker threads (default: KELP_THREADS or all cores)");
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--node-budget", o.node_budget, "Branch-and-bound node budget (0 = unlimited)");
    };
    auto* kelp = app.add_subcommand("kelp", "Knockoff e-values across resolutions solved by eLP");
    auto* ebh_cmd = app.add_subcommand("ebh", "e-BH over every group");
    auto* focused = app.add_subcommand("focused-ebh", "Focused e-BH with the outer-node filter");
    auto* efilter = app.add_subcommand("efilter", "Multilayer e-filter on per-layer e-values");
    auto* emkf = app.add_subcommand("emkf", "Multilayer knockoff e-filter from scores");
    auto* pc = app.add_subcommand("pc-kelp", "Partial-conjunction KeLP across outcomes");
    auto* simulate = app.add_subcommand("simulate", "Run a simulation sweep");
    auto* validate = app.add_subcommand("validate", "Check input files");
    for (auto* sub : {kelp, ebh_cmd, focused, efilter, emkf, pc, simulate, validate}) shared(sub);
    for (auto* sub : {kelp, ebh_cmd, focused, efilter, emkf, pc, validate})
        sub->add_option("--family", o.family, "Family JSON file");
    for (auto* sub : {ebh_cmd, focused, efilter, validate})
        sub->add_option("--evalues", o.evalues, "E-value CSV (resolution_id,group_index,evalue)");
    for (auto* sub : {kelp, emkf, pc, validate})
        sub->add_option("--scores", o.scores, "W-score CSV (resolution_id,group_index,w)");
    kelp->add_option("--tune-on", o.tune_on, "Held-out W-score CSV used to tune gamma");
    for (auto* sub : {efilter, emkf}) sub->add_option("--levels", o.levels, "Comma-separated level per layer");
    pc->add_option("--u", o.u, "Partial conjunction threshold u");
    pc->add_flag("--lenient", o.lenient, "Skip the strict budget and report the inflated control level");
    simulate->add_option("--replicates", o.replicates, "Override the replicate count");
    for (auto* sub : {simulate, validate}) sub->add_option("--config", o.config, "Scenario JSON file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        write_error(o, "usage", e.what(), "", err);
        return kExitInput;
    }

    try {
        if (kelp->parsed()) return cmd_kelp(o, out);
        if (ebh_cmd->parsed()) return cmd_ebh(o, out, false);
        if (focused->parsed()) return cmd_ebh(o, out, true);
        if (efilter->parsed()) return cmd_efilter(o, out);
        if (emkf->parsed()) return cmd_emkf(o, out);
        if (pc->parsed()) return cmd_pc_kelp(o, out);
        if (simulate->parsed()) return cmd_simulate(o, out);
        if (validate->parsed()) return cmd_validate(o, out);
    } catch (const InputError& e) {
        write_error(o, e.kind(), e.what(), e.field(), err);
        return kExitInput;
    } catch (const std::exception& e) {
        write_error(o, "error", e.what(), "", err);
        return kExitInput;
    }
    return kExitInput;
}

int run_cli(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

} // namespace kelp
