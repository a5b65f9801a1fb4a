#pragma once

#include "kelp/elp.hpp"
#include "kelp/etesting.hpp"
#include "kelp/family.hpp"
#include "kelp/kelp.hpp"

#include <string>
#include <vector>

namespace kelp {

/// Comma-separated table with a header row. Blank lines and lines starting
/// with '#' are skipped; fields are trimmed.
struct CsvTable
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines; // source line of each row
};

CsvTable parse_csv(const std::string& text, const std::vector<std::string>& required_columns,
                   const std::string& source = "csv");

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

/// `resolution_id, group_index, evalue` with 1-based group indices. The
/// table numerator is |A| of the family. Missing groups read as e=0.
EValueTable parse_evalue_csv(const std::string& text, const HypothesisFamily& family,
                             const std::string& source = "evalues");
EValueTable load_evalue_csv(const std::string& path, const HypothesisFamily& family);
std::string format_evalue_csv(const EValueTable& table, const HypothesisFamily& family);

/// `resolution_id, group_index, w`. Every group of every resolution needs
/// exactly one score; an empty file fails with "no scores".
KnockoffScores parse_scores_csv(const std::string& text, const HypothesisFamily& family,
                                const std::string& source = "scores");
KnockoffScores load_scores_csv(const std::string& path, const HypothesisFamily& family);
std::string format_scores_csv(const KnockoffScores& scores, const HypothesisFamily& family);

/// `resolution_id, group_index, members, evalue, weight`, members as
/// 1-based indices joined by ';'.
std::string format_rejections_csv(const RejectionSet& set, const HypothesisFamily& family,
                                  const EValueTable& evalues);

/// Shortest round-trip decimal form, "inf" for infinity.
std::string format_number(double value);
double parse_number(const std::string& text, const std::string& field);

} // namespace kelp
