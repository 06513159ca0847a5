#include "icalab/seqgen.hpp"

#include <algorithm>
#include <array>

#include "icalab/errors.hpp"

namespace icalab::seqgen {

char Vocab::alias(int token) const {
  if (token < 0 || token >= size()) throw DataError("token id out of range");
  if (token == eq()) return '=';
  if (token == comma()) return ',';
  return static_cast<char>('a' + token);
}

int Vocab::token_of_alias(char c) const {
  if (c >= 'a' && c < 'a' + n_vars) return c - 'a';
  return -1;
}

std::string Vocab::decode(std::span<const int> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) out.push_back(alias(t));
  return out;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '=') out.push_back(eq());
    else if (c == ',') out.push_back(comma());
    else {
      int v = token_of_alias(c);
      if (v < 0) throw DataError(std::string("unknown character in sequence: '") + c + "'");
      out.push_back(v);
    }
  }
  return out;
}

int GroupPool::min_order() const {
  int m = 1 << 30;
  for (const auto& t : tables) m = std::min(m, t.order());
  return m;
}

int GroupPool::max_order() const {
  int m = 0;
  for (const auto& t : tables) m = std::max(m, t.order());
  return m;
}

std::pair<int, int> LatentMap::element_of(int token) const {
  for (size_t g = 0; g < tokens.size(); ++g)
    for (size_t e = 0; e < tokens[g].size(); ++e)
      if (tokens[g][e] == token) return {static_cast<int>(g), static_cast<int>(e)};
  return {-1, -1};
}

Slot slot_of_position(int pos) {
  switch (pos % 5) {
    case 0: return Slot::left;
    case 1: return Slot::right;
    case 2: return Slot::predictive;
    case 3: return Slot::answer;
    default: return Slot::separator;
  }
}

const char* slot_name(Slot s) {
  switch (s) {
    case Slot::left: return "left";
    case Slot::right: return "right";
    case Slot::predictive: return "predictive";
    case Slot::answer: return "answer";
    case Slot::separator: return "separator";
  }
  return "?";
}

MixtureSample sample_mixture(const GroupPool& pool, const GenConfig& cfg, Rng& rng) {
  if (pool.tables.empty()) throw ConfigError("group pool is empty");
  if (pool.min_order() > cfg.n_vars)
    throw ConfigError("no pool structure fits within the variable budget");
  if (cfg.p_mix < 0.0 || cfg.p_mix > 1.0) throw ConfigError("p_mix must be in [0,1]");

  MixtureSample mix;
  int first = rng.below(static_cast<int>(pool.tables.size()));
  mix.pool_ids.push_back(first);
  mix.total_order = pool.tables[first].order();
  for (;;) {
    if (cfg.n_vars - mix.total_order < pool.min_order()) break;  // nothing can fit
    if (rng.uniform() >= cfg.p_mix) break;
    int gi = rng.below(static_cast<int>(pool.tables.size()));
    int o = pool.tables[gi].order();
    if (mix.total_order + o > cfg.n_vars) {
      if (cfg.stop_on_misfit) break;
      continue;
    }
    mix.pool_ids.push_back(gi);
    mix.total_order += o;
  }
  return mix;
}

LatentMap assign_variables(const GroupPool& pool, const MixtureSample& mix,
                           const Vocab& vocab, Rng& rng) {
  if (mix.total_order > vocab.n_vars)
    throw DataError("mixture does not fit in the variable vocabulary");
  std::vector<int> perm(vocab.n_vars);
  for (int i = 0; i < vocab.n_vars; ++i) perm[i] = i;
  rng.shuffle(perm);
  LatentMap map;
  int off = 0;
  for (int gi : mix.pool_ids) {
    int o = pool.tables[gi].order();
    map.tokens.emplace_back(perm.begin() + off, perm.begin() + off + o);
    off += o;
  }
  return map;
}

FactSampler::FactSampler(const GroupPool& pool, const MixtureSample& mix,
                         bool weight_by_pairs)
    : pool_(pool), mix_(mix), cum_w_(mix.pool_ids.size()) {
  double acc = 0.0;
  for (size_t i = 0; i < mix.pool_ids.size(); ++i) {
    int o = pool.tables[mix.pool_ids[i]].order();
    acc += weight_by_pairs ? static_cast<double>(o) * o : 1.0;
    cum_w_[i] = acc;
  }
}

Fact FactSampler::operator()(Rng& rng) const {
  double r = rng.uniform() * cum_w_.back();
  size_t m = 0;
  while (r >= cum_w_[m]) ++m;
  const auto& t = pool_.tables[mix_.pool_ids[m]];
  int a = rng.below(t.order()), b = rng.below(t.order());
  return Fact{static_cast<int>(m), {a}, {b}, {t.product(a, b)}};
}

void retokenize(SequenceSample& s, const Vocab& vocab) {
  s.tokens.clear();
  s.tokens.reserve(s.facts.size() * 5);
  for (const Fact& f : s.facts) {
    s.tokens.push_back(s.map.token_of(f.member, f.left.index));
    s.tokens.push_back(s.map.token_of(f.member, f.right.index));
    s.tokens.push_back(vocab.eq());
    s.tokens.push_back(s.map.token_of(f.member, f.answer.index));
    s.tokens.push_back(vocab.comma());
  }
}

SequenceSample generate_sequence(const GroupPool& pool, int k, const GenConfig& cfg,
                                 const Vocab& vocab, Rng& rng) {
  if (k < 1) throw ConfigError("fact count must be >= 1");
  SequenceSample s;
  s.mixture = sample_mixture(pool, cfg, rng);
  s.map = assign_variables(pool, s.mixture, vocab, rng);
  FactSampler sample(pool, s.mixture, cfg.weight_by_pairs);
  s.facts.reserve(k);
  for (int i = 0; i < k; ++i) s.facts.push_back(sample(rng));
  retokenize(s, vocab);
  return s;
}

SequenceSample truncate_to_query(const SequenceSample& s, int fact_index) {
  if (fact_index < 0 || fact_index >= s.fact_count())
    throw DataError("fact index out of range");
  SequenceSample out = s;
  size_t cut = static_cast<size_t>(fact_index) * 5 + 3;  // keep l r =
  out.target = s.tokens[cut];                            // the answer token
  out.tokens.assign(s.tokens.begin(), s.tokens.begin() + cut);
  out.facts.resize(static_cast<size_t>(fact_index) + 1);
  return out;
}

std::string to_text(const SequenceSample& s, const Vocab& vocab) {
  return vocab.decode(s.tokens);
}

std::vector<std::array<int, 3>> decode_facts(std::span<const int> tokens, const Vocab& vocab) {
  std::vector<std::array<int, 3>> facts;
  size_t n = tokens.size();
  size_t full = n / 5;
  for (size_t i = 0; i < full; ++i) {
    const int* f = tokens.data() + i * 5;
    if (f[2] != vocab.eq() || f[4] != vocab.comma())
      throw DataError("token stream is not fact-aligned");
    facts.push_back({f[0], f[1], f[3]});
  }
  if (n % 5 == 3) {  // truncated query "l r ="
    const int* f = tokens.data() + full * 5;
    if (f[2] != vocab.eq()) throw DataError("truncated query must end at '='");
    facts.push_back({f[0], f[1], -1});
  } else if (n % 5 != 0) {
    throw DataError("token stream length is not a whole number of facts");
  }
  return facts;
}

}  // namespace icalab::seqgen
