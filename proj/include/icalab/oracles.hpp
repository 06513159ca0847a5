#pragma once

#include <optional>
#include <string>
#include <vector>

namespace icalab::oracles {

// One parsed statement. answer < 0 for a truncated final query "lr=".
struct ParsedFact {
  char left = 0, right = 0;
  char answer = 0;  // 0 when truncated
};

struct ParsedSequence {
  std::vector<ParsedFact> context;
  ParsedFact query;
};

// Accepts comma-separated "ab=c" facts; a leading empty segment is
// ignored and the final fact may be truncated after '='.
ParsedSequence parse_sequence(const std::string& text);

// Reference solvers for the five hypothesized in-context algorithms.
// All operate purely on the text; none consults the generating tables.
bool check_copyable(const std::string& text);
bool check_commutative_copyable(const std::string& text);

// True iff some context fact reveals an identity element that occurs in
// the query pair: "ab=b" reveals a, "ab=a" reveals b.
bool check_identity_solvable(const std::string& text);

struct SolverResult {
  bool solvable = false;
  std::optional<char> answer;
};

// Set difference S_closure - S_cancel; solvable iff exactly one symbol
// remains, and that symbol is the answer.
SolverResult check_cancellation_solvable(const std::string& text);

// Looks for a composing triple {xg=f, gd=y, fd=z} for query xy=.
// With mirrored=true the right-factor decomposition {d x'=..} variant
// {xg=f via g on the left of y} is widened to g d = y with d also
// allowed to split x; the default matches the narrow construction.
SolverResult check_associative_solvable(const std::string& text, bool mirrored = false);

enum class Algorithm { copy, commute, identity, cancel, associate, residual };
const char* algorithm_name(Algorithm a);

// First algorithm in the fixed order (copy, commute, identity, cancel,
// associate) that solves the sequence. Solvers returning an answer count
// only if it matches `truth` (when truth != 0 and require_correct).
Algorithm attribute(const std::string& text, char truth, bool require_correct = true);

struct CoverageRow {
  int k = 0;
  double copy = 0, commute = 0, identity = 0, cancel = 0, associate = 0;
  double model_accuracy = -1;  // < 0 when absent
  double residual = 0;
};

struct CoverageReport {
  std::vector<CoverageRow> rows;
  // AUC = mean per-k solve fraction over the grid, one per algorithm.
  double auc_copy = 0, auc_commute = 0, auc_identity = 0, auc_cancel = 0, auc_associate = 0;
  double auc_total = 0;

  std::string to_csv() const;
};

// Sequentially attributes each (text, truth) sample; samples arrive
// grouped by k.
struct KBucket {
  int k = 0;
  std::vector<std::pair<std::string, char>> samples;
};

CoverageReport coverage_pipeline(const std::vector<KBucket>& buckets,
                                 bool require_correct = true);

}  // namespace icalab::oracles
