#include "kelp/cli.hpp"
#include "kelp/elp.hpp"
#include "kelp/errors.hpp"
#include "kelp/etesting.hpp"
#include "kelp/family.hpp"
#include "kelp/io.hpp"
#include "kelp/kelp.hpp"
#include "kelp/knockoffs.hpp"
#include "kelp/simlab.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace kelp;

namespace {

// Per-resolution lists of e-values in group order.
EValueTable table_of(const HypothesisFamily& family, const std::vector<std::vector<double>>& evalues,
                     std::optional<double> n_total)
{
    if (evalues.size() != family.resolution_count())
        throw PreconditionError("need one e-value list per resolution", "evalues");
    EValueTable table(n_total.value_or(static_cast<double>(family.total_groups())));
    for (std::size_t m = 0; m < evalues.size(); ++m) {
        if (evalues[m].size() != family.partition(m).size())
            throw PreconditionError("e-value count differs from the group count", family.partition(m).id);
        for (std::size_t g = 0; g < evalues[m].size(); ++g) table.add({m, g}, evalues[m][g]);
    }
    return table;
}

py::list refs_of(const HypothesisFamily& family, const std::vector<GroupRef>& refs)
{
    py::list out;
    for (const auto& r : refs) out.append(py::make_tuple(family.partition(r.resolution).id, r.group));
    return out;
}

py::dict rejection_dict(const HypothesisFamily& family, const RejectionSet& set)
{
    py::dict d;
    d["rejected"] = refs_of(family, set.rejected);
    d["threshold"] = set.certificate.threshold;
    d["self_consistent"] = set.certificate.self_consistent;
    d["disjoint"] = set.certificate.disjoint;
    return d;
}

KelpConfig config_of(const HypothesisFamily& family, double alpha, const std::string& gamma,
                     const std::optional<std::vector<double>>& c)
{
    KelpConfig config = KelpConfig::defaults(family, alpha);
    try {
        config.gamma.assign(family.resolution_count(), parse_number(gamma, "gamma"));
    } catch (const ParseError&) {
        config.gamma = gamma_preset(family, alpha, parse_gamma_preset(gamma));
    }
    if (c) config.c = *c;
    config.validate(family);
    return config;
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Multi-resolution FDR control with knockoff e-values";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

    py::class_<HypothesisFamily>(m, "Family")
        .def(py::init([](std::size_t p, const std::vector<std::pair<std::string, std::vector<std::vector<std::size_t>>>>& res) {
                 std::vector<Partition> parts;
                 for (const auto& [id, groups] : res) parts.push_back(Partition{id, groups, {}});
                 return HypothesisFamily(p, std::move(parts));
             }),
             py::arg("p"), py::arg("resolutions"), "Resolutions as (id, groups) with 0-based members.")
        .def_static("from_json", &parse_family, py::arg("text"))
        .def("to_json", &save_family)
        .def_property_readonly("p", &HypothesisFamily::p)
        .def_property_readonly("total_groups", &HypothesisFamily::total_groups)
        .def_property_readonly("resolutions", [](const HypothesisFamily& f) {
            std::vector<std::string> ids;
            for (const auto& part : f.partitions()) ids.push_back(part.id);
            return ids;
        })
        .def("groups", [](const HypothesisFamily& f, std::size_t m) { return f.partition(m).groups; }, py::arg("resolution"));

    m.def("ebh", [](const std::vector<double>& e, double alpha, std::optional<double> n_total) {
              const auto set = ebh(EValueTable::from_values(e, n_total.value_or(static_cast<double>(e.size()))), alpha);
              std::vector<std::size_t> out;
              for (const auto& r : set.rejected) out.push_back(r.group);
              return out;
          },
          py::arg("evalues"), py::arg("alpha"), py::arg("n_total") = py::none(),
          "Indices rejected by e-BH on a flat list of e-values.");

    m.def("elp", [](const HypothesisFamily& family, const std::vector<std::vector<double>>& evalues, double alpha,
                    const std::string& solver, std::optional<double> n_total) {
              const auto solution = solve(ElpProblem(family, table_of(family, evalues, n_total), alpha), parse_solver(solver));
              py::dict d = rejection_dict(family, solution.rejections);
              d["objective"] = solution.objective;
              d["solver"] = solution.solver;
              d["optimal"] = solution.optimal;
              return d;
          },
          py::arg("family"), py::arg("evalues"), py::arg("alpha"), py::arg("solver") = "auto",
          py::arg("n_total") = py::none());

    m.def("focused_ebh", [](const HypothesisFamily& family, const std::vector<std::vector<double>>& evalues, double alpha,
                            std::optional<double> n_total) {
              return rejection_dict(family, focused_ebh(family, table_of(family, evalues, n_total), alpha));
          },
          py::arg("family"), py::arg("evalues"), py::arg("alpha"), py::arg("n_total") = py::none());

    m.def("kelp", [](const HypothesisFamily& family, const std::vector<std::vector<double>>& scores, double alpha,
                     const std::string& gamma, std::optional<std::vector<double>> c, const std::string& solver) {
              const KelpConfig config = config_of(family, alpha, gamma, c);
              const KelpResult r = run_kelp(family, KnockoffScores{scores}, config, parse_solver(solver));
              py::dict d = rejection_dict(family, r.solution.rejections);
              d["objective"] = r.solution.objective;
              d["stopping_times"] = r.stopping_times;
              d["evalues"] = r.evalues.aligned(family);
              return d;
          },
          py::arg("family"), py::arg("scores"), py::arg("alpha"), py::arg("gamma") = "half", py::arg("c") = py::none(),
          py::arg("solver") = "auto", "KeLP on per-resolution W scores.");

    m.def("knockoff_filter", [](const std::vector<double>& w, double gamma) { return knockoff_filter(w, gamma); },
          py::arg("w"), py::arg("gamma"));
    m.def("knockoff_stopping_time", [](const std::vector<double>& w, double gamma) { return knockoff_stopping_time(w, gamma); },
          py::arg("w"), py::arg("gamma"));
    m.def("partial_conjunction_evalue",
          [](const std::vector<double>& e, std::size_t u) { return partial_conjunction_evalue(e, u); }, py::arg("evalues"),
          py::arg("u"));

    m.def("equicorrelated_s", [](const Matrix& sigma) { return equicorrelated_recipe(sigma).scale; }, py::arg("sigma"));
    m.def("sample_knockoffs",
          [](const Matrix& X, const Matrix& sigma, std::uint64_t seed) {
              return sample_knockoffs(X, sigma, equicorrelated_recipe(sigma), seed);
          },
          py::arg("X"), py::arg("sigma"), py::arg("seed"), "Equicorrelated Gaussian model-X knockoffs.");

    m.def("simulate", [](const std::string& config_json, std::optional<std::size_t> replicates, std::size_t threads) {
              ScenarioConfig config = parse_scenario(config_json);
              if (replicates) config.replicates = *replicates;
              SweepResult r;
              {
                  py::gil_scoped_release release;
                  r = replicate_sweep(config, threads);
              }
              py::list rows;
              for (const auto& s : r.summary)
                  rows.append(py::dict(py::arg("method") = s.method, py::arg("params") = s.params,
                                       py::arg("metric") = s.metric, py::arg("mean") = s.mean, py::arg("se") = s.se,
                                       py::arg("count") = s.count));
              return rows;
          },
          py::arg("config_json"), py::arg("replicates") = py::none(), py::arg("threads") = 1,
          "Summary rows of a simulation sweep.");

    m.def("cli", [](const std::vector<std::string>& args) {
              std::ostringstream out;
              std::ostringstream err;
              const int code = run_cli(args, out, err);
              return py::make_tuple(code, out.str(), err.str());
          },
          py::arg("args"), "Runs the command-line interface; returns (exit code, stdout, stderr).");
}
