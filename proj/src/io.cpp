#include "kelp/io.hpp"

#include "kelp/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace kelp {

namespace {

std::string trim(const std::string& s)
{
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::size_t column(const CsvTable& table, const std::string& name)
{
    return static_cast<std::size_t>(std::find(table.header.begin(), table.header.end(), name) -
                                    table.header.begin());
}

std::string where(const std::string& source, std::size_t line)
{
    return source + ":" + std::to_string(line);
}

// Resolves (resolution_id, 1-based group_index) of one row.
GroupRef row_ref(const HypothesisFamily& family, const std::string& resolution, const std::string& index,
                 const std::string& location)
{
    const auto m = family.resolution_index(resolution);
    if (!m) throw ParseError("unknown resolution '" + resolution + "'", location);
    const double g = parse_number(index, location);
    const auto& part = family.partition(*m);
    if (g != std::floor(g) || g < 1 || g > static_cast<double>(part.size()))
        throw ParseError("group_index " + index + " outside 1.." + std::to_string(part.size()), location);
    return {*m, static_cast<std::size_t>(g) - 1};
}

} // namespace

CsvTable parse_csv(const std::string& text, const std::vector<std::string>& required_columns,
                   const std::string& source)
{
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto fields = split(t);
        if (table.header.empty()) {
            table.header = std::move(fields);
            for (const auto& name : required_columns) {
                if (column(table, name) == table.header.size())
                    throw ParseError("missing column '" + name + "' in header", where(source, number));
            }
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw ParseError("expected " + std::to_string(table.header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             where(source, number));
        }
        table.rows.push_back(std::move(fields));
        table.lines.push_back(number);
    }
    return table;
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'", path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

std::string format_number(double value)
{
    if (value == kInfinity) return "inf";
    if (value == -kInfinity) return "-inf";
    char buffer[64];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

double parse_number(const std::string& text, const std::string& field)
{
    const std::string t = trim(text);
    if (t == "inf" || t == "Inf" || t == "+inf" || t == "Infinity") return kInfinity;
    if (t == "-inf" || t == "-Inf") return -kInfinity;
    double value = 0.0;
    const char* begin = t.data();
    if (!t.empty() && t.front() == '+') ++begin;
    const auto result = std::from_chars(begin, t.data() + t.size(), value);
    if (t.empty() || result.ec != std::errc{} || result.ptr != t.data() + t.size())
        throw ParseError("not a number: '" + t + "'", field);
    if (std::isnan(value)) throw ParseError("NaN is not allowed", field);
    return value;
}

EValueTable parse_evalue_csv(const std::string& text, const HypothesisFamily& family, const std::string& source)
{
    const CsvTable csv = parse_csv(text, {"resolution_id", "group_index", "evalue"}, source);
    if (csv.header.empty()) throw ParseError("missing header row", source);
    const std::size_t cr = column(csv, "resolution_id");
    const std::size_t cg = column(csv, "group_index");
    const std::size_t ce = column(csv, "evalue");
    EValueTable table(static_cast<double>(family.total_groups()));
    for (std::size_t i = 0; i < csv.rows.size(); ++i) {
        const std::string location = where(source, csv.lines[i]);
        const GroupRef ref = row_ref(family, csv.rows[i][cr], csv.rows[i][cg], location);
        if (table.contains(ref)) throw ParseError("duplicate e-value for a group", location);
        const double e = parse_number(csv.rows[i][ce], location);
        if (e < 0.0) throw InputError("negative-evalue", "e-values must be nonnegative", location);
        table.add(ref, e, Provenance::raw);
    }
    return table;
}

EValueTable load_evalue_csv(const std::string& path, const HypothesisFamily& family)
{
    return parse_evalue_csv(read_text(path), family, path);
}

std::string format_evalue_csv(const EValueTable& table, const HypothesisFamily& family)
{
    std::string out = "resolution_id,group_index,evalue\n";
    for (const GroupRef ref : family.all_refs()) {
        if (!table.contains(ref)) continue;
        out += family.partition(ref.resolution).id + "," + std::to_string(ref.group + 1) + "," +
               format_number(table.value(ref)) + "\n";
    }
    return out;
}

KnockoffScores parse_scores_csv(const std::string& text, const HypothesisFamily& family, const std::string& source)
{
    const CsvTable csv = parse_csv(text, {"resolution_id", "group_index", "w"}, source);
    if (csv.rows.empty()) throw InputError("no-scores", "no scores", source);
    const std::size_t cr = column(csv, "resolution_id");
    const std::size_t cg = column(csv, "group_index");
    const std::size_t cw = column(csv, "w");
    KnockoffScores scores;
    std::vector<std::vector<bool>> seen;
    for (const auto& part : family.partitions()) {
        scores.w.emplace_back(part.size(), 0.0);
        seen.emplace_back(part.size(), false);
    }
    for (std::size_t i = 0; i < csv.rows.size(); ++i) {
        const std::string location = where(source, csv.lines[i]);
        const GroupRef ref = row_ref(family, csv.rows[i][cr], csv.rows[i][cg], location);
        if (seen[ref.resolution][ref.group]) throw ParseError("duplicate score for a group", location);
        const double w = parse_number(csv.rows[i][cw], location);
        if (!std::isfinite(w)) throw ParseError("scores must be finite", location);
        scores.w[ref.resolution][ref.group] = w;
        seen[ref.resolution][ref.group] = true;
    }
    for (std::size_t m = 0; m < seen.size(); ++m) {
        const auto gap = std::find(seen[m].begin(), seen[m].end(), false);
        if (gap != seen[m].end()) {
            throw InputError("missing-score",
                             "resolution '" + family.partition(m).id + "' has no score for group " +
                                 std::to_string(gap - seen[m].begin() + 1),
                             source);
        }
    }
    return scores;
}

KnockoffScores load_scores_csv(const std::string& path, const HypothesisFamily& family)
{
    return parse_scores_csv(read_text(path), family, path);
}

std::string format_scores_csv(const KnockoffScores& scores, const HypothesisFamily& family)
{
    std::string out = "resolution_id,group_index,w\n";
    for (std::size_t m = 0; m < scores.w.size(); ++m)
        for (std::size_t g = 0; g < scores.w[m].size(); ++g)
            out += family.partition(m).id + "," + std::to_string(g + 1) + "," + format_number(scores.w[m][g]) + "\n";
    return out;
}

std::string format_rejections_csv(const RejectionSet& set, const HypothesisFamily& family,
                                  const EValueTable& evalues)
{
    std::string out = "resolution_id,group_index,members,evalue,weight\n";
    for (const GroupRef ref : set.rejected) {
        std::string members;
        for (const std::size_t j : family.members(ref)) {
            if (!members.empty()) members += ";";
            members += std::to_string(j + 1);
        }
        out += family.partition(ref.resolution).id + "," + std::to_string(ref.group + 1) + "," + members + "," +
               format_number(evalues.value(ref)) + "," + format_number(family.weight(ref)) + "\n";
    }
    return out;
}

} // namespace kelp
