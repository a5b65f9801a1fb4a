#include "kelp/cli.hpp"
#include "kelp/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>

using namespace kelp;
namespace fs = std::filesystem;

namespace {

struct Workspace
{
    fs::path root;

    explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("kelp-cli-" + name))
    {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }

    std::string file(const std::string& name, const std::string& text) const
    {
        const std::string path = (root / name).string();
        write_text(path, text);
        return path;
    }
    std::string path(const std::string& name) const { return (root / name).string(); }
};

struct Run
{
    int code = 0;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args)
{
    std::ostringstream out;
    std::ostringstream err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

const char* kPairFamily = R"({"p": 2, "resolutions": [
  {"id": "ind", "groups": [[1], [2]]},
  {"id": "pair", "groups": [[1, 2]]}
]})";

std::string ramp_scores()
{
    std::string csv = "resolution_id,group_index,w\n";
    for (int j = 1; j <= 20; ++j) csv += "ind," + std::to_string(j) + "," + (j <= 10 ? std::to_string(11 - j) : "-0.5") + "\n";
    return csv;
}

} // namespace

TEST_CASE("focused e-BH on the worked pair example rejects only the first feature")
{
    Workspace ws("focused");
    const auto family = ws.file("family.json", kPairFamily);
    const auto ev = ws.file("e.csv", "resolution_id,group_index,evalue\nind,1,8\nind,2,0\npair,1,4\n");
    const std::string header = "resolution_id,group_index,members,evalue,weight\n";
    REQUIRE(run({"focused-ebh", "--family", family, "--evalues", ev, "--alpha", "0.4", "--out", ws.path("f")}).code ==
            kExitOk);
    CHECK(read_text(ws.path("f") + "/rejections.csv") == header + "ind,1,1,8,1\n");
    // Plain e-BH ignores overlap: at R=2 the threshold 3.75 admits the pair too.
    REQUIRE(run({"ebh", "--family", family, "--evalues", ev, "--alpha", "0.4", "--out", ws.path("e")}).code == kExitOk);
    CHECK(read_text(ws.path("e") + "/rejections.csv") == header + "ind,1,1,8,1\npair,1,1;2,4,0.5\n");
}

TEST_CASE("kelp with one resolution reproduces the knockoff filter")
{
    Workspace ws("kelp");
    const auto family = ws.file("family.json", R"({"p": 20, "resolutions": [{"id": "ind", "groups": [)" + [] {
        std::string g;
        for (int j = 1; j <= 20; ++j) g += (j > 1 ? ",[" : "[") + std::to_string(j) + "]";
        return g;
    }() + "]}]}");
    const auto scores = ws.file("w.csv", ramp_scores());
    const std::vector<std::string> args{"kelp", "--family", family, "--scores", scores, "--alpha", "0.2",
                                        "--gamma", "0.2", "--c-policy", "20", "--out", ws.path("a")};
    const Run r = run(args);
    REQUIRE(r.code == kExitOk);
    const std::string rejections = read_text(ws.path("a") + "/rejections.csv");
    const CsvTable table = parse_csv(rejections, {"group_index"});
    REQUIRE(table.rows.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(table.rows[i][1] == std::to_string(i + 1));

    std::vector<std::string> again = args;
    again.back() = ws.path("b");
    REQUIRE(run(again).code == kExitOk);
    for (const std::string name : {"rejections.csv", "certificate.json", "summary.txt"})
        CHECK(read_text(ws.path("a") + "/" + name) == read_text(ws.path("b") + "/" + name));
}

TEST_CASE("kelp input errors exit with code 2 and a report")
{
    Workspace ws("errors");
    const auto family = ws.file("family.json", kPairFamily);
    const auto empty = ws.file("empty.csv", "resolution_id,group_index,w\n");
    const Run r = run({"kelp", "--family", family, "--scores", empty, "--out", ws.path("o")});
    CHECK(r.code == kExitInput);
    CHECK(r.err.find("no scores") != std::string::npos);
    CHECK(read_text(ws.path("o") + "/error.json").find("\"no-scores\"") != std::string::npos);

    const auto scattered = ws.file("scattered.json", R"({"p": 3, "resolutions": [
      {"id": "ind", "groups": [[1], [2], [3]]},
      {"id": "odd", "groups": [[1, 3], [2]]}]})");
    const auto w = ws.file("w.csv", "resolution_id,group_index,w\nind,1,1\nind,2,1\nind,3,1\nodd,1,1\nodd,2,1\n");
    CHECK(run({"kelp", "--family", scattered, "--scores", w, "--solver", "dp", "--out", ws.path("dp")}).code ==
          kExitInput);
    CHECK(run({"kelp", "--family", scattered, "--scores", w, "--solver", "exact", "--out", ws.path("ex")}).code ==
          kExitOk);
    CHECK(run({"kelp", "--family", family, "--scores", w, "--alpha", "1.5"}).code == kExitInput);
    CHECK(run({"kelp", "--bogus"}).code == kExitInput);
}

TEST_CASE("simulate rejects malformed configs and reruns identically")
{
    Workspace ws("simulate");
    const auto bad = ws.file("bad.json", R"({"design": "block-ar1", "replicatez": 3})");
    const Run r = run({"simulate", "--config", bad, "--out", ws.path("bad")});
    CHECK(r.code == kExitInput);
    CHECK(r.err.find("replicatez") != std::string::npos);

    const auto good = ws.file("good.json", R"({"design": "block-ar1", "p": 30, "n": 60, "sparsity": 0.1, "tau": 1,
      "folds": 3, "n_lambda": 20, "methods": ["kelp", "knockoffs-outer"]})");
    for (const std::string dir : {"s1", "s2"})
        REQUIRE(run({"simulate", "--config", good, "--replicates", "1", "--seed", "7", "--out", ws.path(dir)}).code ==
                kExitOk);
    for (const std::string name : {"replicates.csv", "summary.csv", "meta.json"})
        CHECK(read_text(ws.path("s1") + "/" + name) == read_text(ws.path("s2") + "/" + name));
}

TEST_CASE("validate names what fails")
{
    Workspace ws("validate");
    const auto overlap = ws.file("overlap.json", R"({"p": 3, "resolutions": [{"id": "a", "groups": [[1, 2], [2, 3]]}]})");
    Run r = run({"validate", "--family", overlap});
    CHECK(r.code == kExitInput);
    CHECK(r.out.find("FAIL") != std::string::npos);
    CHECK(r.out.find("{1,2}") != std::string::npos);
    CHECK(r.out.find("{2,3}") != std::string::npos);

    const auto family = ws.file("family.json", kPairFamily);
    r = run({"validate", "--family", family, "--c-policy", "2,2"});
    CHECK(r.code == kExitInput);
    CHECK(r.out.find("FAIL budget sum c_m <= |A|") != std::string::npos);

    const auto ev = ws.file("e.csv", "resolution_id,group_index,evalue\nind,1,8\npair,1,4\n");
    const auto w = ws.file("w.csv", "resolution_id,group_index,w\nind,1,1\nind,2,-1\npair,1,0.5\n");
    r = run({"validate", "--family", family, "--evalues", ev, "--scores", w});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("all checks passed") != std::string::npos);

    const auto negative = ws.file("neg.csv", "resolution_id,group_index,evalue\nind,1,-8\n");
    CHECK(run({"validate", "--family", family, "--evalues", negative}).code == kExitInput);
}
