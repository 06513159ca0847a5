#include "icalab/oracles.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "icalab/errors.hpp"

namespace icalab::oracles {

namespace {

ParsedFact parse_fact(const std::string& piece, bool allow_truncated) {
  // "ab=c" or, for a final query, "ab="
  if (piece.size() == 4 && piece[2] == '=')
    return ParsedFact{piece[0], piece[1], piece[3]};
  if (allow_truncated && piece.size() == 3 && piece[2] == '=')
    return ParsedFact{piece[0], piece[1], 0};
  throw DataError("malformed fact: '" + piece + "'");
}

}  // namespace

ParsedSequence parse_sequence(const std::string& text) {
  std::vector<std::string> pieces;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      pieces.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) pieces.push_back(cur);
  // tolerate a leading empty segment (",ab=c,..." dumps)
  if (!pieces.empty() && pieces.front().empty()) pieces.erase(pieces.begin());
  if (pieces.empty()) throw DataError("empty sequence");

  ParsedSequence seq;
  for (size_t i = 0; i + 1 < pieces.size(); ++i)
    seq.context.push_back(parse_fact(pieces[i], false));
  seq.query = parse_fact(pieces.back(), true);
  return seq;
}

bool check_copyable(const std::string& text) {
  ParsedSequence s = parse_sequence(text);
  return std::any_of(s.context.begin(), s.context.end(), [&](const ParsedFact& f) {
    return f.left == s.query.left && f.right == s.query.right;
  });
}

bool check_commutative_copyable(const std::string& text) {
  ParsedSequence s = parse_sequence(text);
  return std::any_of(s.context.begin(), s.context.end(), [&](const ParsedFact& f) {
    return f.left == s.query.right && f.right == s.query.left;
  });
}

bool check_identity_solvable(const std::string& text) {
  ParsedSequence s = parse_sequence(text);
  for (const ParsedFact& f : s.context) {
    char candidate = 0;
    if (f.answer == f.left) candidate = f.right;        // ab=a: b acts as identity
    else if (f.answer == f.right) candidate = f.left;   // ab=b: a acts as identity
    if (candidate && (candidate == s.query.left || candidate == s.query.right)) return true;
  }
  return false;
}

SolverResult check_cancellation_solvable(const std::string& text) {
  ParsedSequence s = parse_sequence(text);
  char qL = s.query.left, qR = s.query.right;
  std::array<bool, 256> closure{}, cancel{};
  for (const ParsedFact& f : s.context) {
    bool shares = f.left == qL || f.right == qL || f.answer == qL ||
                  f.left == qR || f.right == qR || f.answer == qR;
    if (shares) {
      closure[static_cast<unsigned char>(f.left)] = true;
      closure[static_cast<unsigned char>(f.right)] = true;
      closure[static_cast<unsigned char>(f.answer)] = true;
    }
    if (f.left == qL || f.right == qR)
      cancel[static_cast<unsigned char>(f.answer)] = true;
  }
  char remaining = 0;
  int count = 0;
  for (int c = 1; c < 256; ++c) {
    if (closure[c] && !cancel[c]) {
      ++count;
      remaining = static_cast<char>(c);
    }
  }
  if (count == 1) return {true, remaining};
  return {false, std::nullopt};
}

SolverResult check_associative_solvable(const std::string& text, bool mirrored) {
  ParsedSequence s = parse_sequence(text);
  char x = s.query.left, y = s.query.right;

  // exact-fact existence map, pair -> answer of first occurrence
  std::array<char, 65536> exact{};
  auto key = [](char a, char b) {
    return (static_cast<unsigned char>(a) << 8) | static_cast<unsigned char>(b);
  };
  for (const ParsedFact& f : s.context)
    if (!exact[key(f.left, f.right)]) exact[key(f.left, f.right)] = f.answer;

  // x*g=f and g*d=y compose to (x*g)*d = x*(g*d) = x*y, needing f*d=z.
  for (const ParsedFact& a : s.context) {
    if (a.left != x) continue;
    char g = a.right, f = a.answer;
    for (const ParsedFact& b : s.context) {
      if (b.left != g || b.answer != y) continue;
      char d = b.right;
      if (char z = exact[key(f, d)]) return {true, z};
    }
  }
  if (mirrored) {
    // d*x'=x split on the left factor: d*e=x and f2 = e*y, needing d*f2=z
    for (const ParsedFact& a : s.context) {
      if (a.answer != x) continue;
      char d = a.left, e = a.right;
      if (char f2 = exact[key(e, y)]) {
        if (char z = exact[key(d, f2)]) return {true, z};
      }
    }
  }
  return {false, std::nullopt};
}

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::copy: return "copy";
    case Algorithm::commute: return "commute";
    case Algorithm::identity: return "identity";
    case Algorithm::cancel: return "cancel";
    case Algorithm::associate: return "associate";
    case Algorithm::residual: return "residual";
  }
  return "?";
}

Algorithm attribute(const std::string& text, char truth, bool require_correct) {
  if (check_copyable(text)) return Algorithm::copy;
  if (check_commutative_copyable(text)) return Algorithm::commute;
  if (check_identity_solvable(text)) return Algorithm::identity;
  auto accept = [&](const SolverResult& r) {
    return r.solvable && (!require_correct || truth == 0 || (r.answer && *r.answer == truth));
  };
  if (accept(check_cancellation_solvable(text))) return Algorithm::cancel;
  if (accept(check_associative_solvable(text))) return Algorithm::associate;
  return Algorithm::residual;
}

CoverageReport coverage_pipeline(const std::vector<KBucket>& buckets, bool require_correct) {
  CoverageReport rep;
  for (const KBucket& bucket : buckets) {
    if (bucket.samples.empty()) throw DataError("empty k bucket in coverage pipeline");
    CoverageRow row;
    row.k = bucket.k;
    for (const auto& [text, truth] : bucket.samples) {
      switch (attribute(text, truth, require_correct)) {
        case Algorithm::copy: row.copy += 1; break;
        case Algorithm::commute: row.commute += 1; break;
        case Algorithm::identity: row.identity += 1; break;
        case Algorithm::cancel: row.cancel += 1; break;
        case Algorithm::associate: row.associate += 1; break;
        case Algorithm::residual: row.residual += 1; break;
      }
    }
    double n = static_cast<double>(bucket.samples.size());
    row.copy /= n;
    row.commute /= n;
    row.identity /= n;
    row.cancel /= n;
    row.associate /= n;
    row.residual /= n;
    rep.rows.push_back(row);
  }
  double m = static_cast<double>(rep.rows.size());
  for (const CoverageRow& r : rep.rows) {
    rep.auc_copy += r.copy / m;
    rep.auc_commute += r.commute / m;
    rep.auc_identity += r.identity / m;
    rep.auc_cancel += r.cancel / m;
    rep.auc_associate += r.associate / m;
  }
  rep.auc_total = rep.auc_copy + rep.auc_commute + rep.auc_identity + rep.auc_cancel +
                  rep.auc_associate;
  return rep;
}

std::string CoverageReport::to_csv() const {
  std::ostringstream os;
  bool with_model = !rows.empty() && rows.front().model_accuracy >= 0;
  os << "k,copy,commute,identity,cancel,associate";
  if (with_model) os << ",model_accuracy";
  os << ",residual\n";
  os.precision(6);
  os << std::fixed;
  for (const CoverageRow& r : rows) {
    os << r.k << ',' << r.copy << ',' << r.commute << ',' << r.identity << ',' << r.cancel
       << ',' << r.associate;
    if (with_model) os << ',' << r.model_accuracy;
    os << ',' << r.residual << '\n';
  }
  return os.str();
}

}  // namespace icalab::oracles
