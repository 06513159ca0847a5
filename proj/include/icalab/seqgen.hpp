#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icalab/groups.hpp"
#include "icalab/rng.hpp"

namespace icalab::seqgen {

// Token layout: variables 0..n_vars-1, then '=' and ','. Variables print
// as the letters 'a'.. in all text I/O.
struct Vocab {
  int n_vars = 16;

  int eq() const { return n_vars; }
  int comma() const { return n_vars + 1; }
  int size() const { return n_vars + 2; }

  char alias(int token) const;
  int token_of_alias(char c) const;  // -1 if not a variable letter
  std::string decode(std::span<const int> tokens) const;
  std::vector<int> encode(const std::string& text) const;
};

struct GroupPool {
  std::vector<groups::MagmaTable> tables;

  int min_order() const;
  int max_order() const;
};

struct GenConfig {
  double p_mix = 0.7;
  int n_vars = 16;
  // Mixture growth stops at the first sampled group that does not fit.
  // The alternative keeps drawing until no pool group fits at all.
  bool stop_on_misfit = true;
  // Per-fact structure choice proportional to order^2 (uniform over all
  // (structure, left, right) triples). false = uniform over structures.
  bool weight_by_pairs = true;
};

// The structures chosen for one sequence, as indices into the pool.
// A structure may appear more than once (sampling with replacement);
// each occurrence gets its own disjoint variable block.
struct MixtureSample {
  std::vector<int> pool_ids;
  int total_order = 0;
};

// Bijection from mixture elements onto distinct variable tokens.
// tokens[g][e] is the variable token of element e of mixture member g.
struct LatentMap {
  std::vector<std::vector<int>> tokens;

  int token_of(int member, int element) const { return tokens[member][element]; }
  // (member, element) owning a variable token, or (-1, -1).
  std::pair<int, int> element_of(int token) const;
};

struct Fact {
  int member = 0;  // index into the mixture
  groups::Element left, right, answer;
};

struct SequenceSample {
  MixtureSample mixture;
  LatentMap map;
  std::vector<Fact> facts;
  std::vector<int> tokens;            // 5 tokens per fact: l r = a ,
  std::optional<int> target;          // answer token when truncated at '='
  std::optional<int> injected_at;     // fact index of a spliced-in statement

  int fact_count() const { return static_cast<int>(facts.size()); }
};

// Slot classes of the 5-token fact frame, for attention aggregation.
enum class Slot { left, right, predictive, answer, separator };
Slot slot_of_position(int pos);
const char* slot_name(Slot s);

MixtureSample sample_mixture(const GroupPool& pool, const GenConfig& cfg, Rng& rng);

LatentMap assign_variables(const GroupPool& pool, const MixtureSample& mix,
                           const Vocab& vocab, Rng& rng);

// Draws i.i.d. facts from a fixed mixture, optionally weighting members
// by order^2 (uniform over all (member, left, right) triples).
class FactSampler {
 public:
  FactSampler(const GroupPool& pool, const MixtureSample& mix, bool weight_by_pairs);
  Fact operator()(Rng& rng) const;

 private:
  const GroupPool& pool_;
  const MixtureSample& mix_;
  std::vector<double> cum_w_;
};

// Rebuild the token stream from the fact list (full facts, no truncation).
void retokenize(SequenceSample& s, const Vocab& vocab);

// k i.i.d. facts over the sampled mixture, tokenized as
// "l r = a ," per fact (5k tokens, no BOS).
SequenceSample generate_sequence(const GroupPool& pool, int k, const GenConfig& cfg,
                                 const Vocab& vocab, Rng& rng);

// Prefix ending right after fact_index's predictive token; the answer
// token is returned via SequenceSample::target.
SequenceSample truncate_to_query(const SequenceSample& s, int fact_index);

// Text form: facts joined by ',', truncated sequences end with '='.
std::string to_text(const SequenceSample& s, const Vocab& vocab);

// Re-derive the fact list from a token stream (used by round-trip checks).
std::vector<std::array<int, 3>> decode_facts(std::span<const int> tokens, const Vocab& vocab);

}  // namespace icalab::seqgen
