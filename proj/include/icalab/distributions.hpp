#pragma once

#include <array>
#include <string>

#include "icalab/seqgen.hpp"

namespace icalab::distributions {

enum class Kind { copy, commute, identity, associate, cancel, holdout, random_ };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& s);

struct MakeConfig {
  seqgen::GenConfig gen;
  int retry_budget = 100;      // per sample, then the mixture is resampled
  int mixture_retries = 100;   // mixtures tried before giving up
  bool mirrored_associate = false;
};

// Builds one sample of the requested kind: a base sequence is drawn and
// surgically edited (offending facts resampled, constraint facts written
// into random slots) so the marginal fact distribution stays close to
// training. The result is truncated at the final '=' with target set.
seqgen::SequenceSample make(Kind kind, const seqgen::GroupPool& pool, int k,
                            const MakeConfig& cfg, const seqgen::Vocab& vocab, Rng& rng);

// Splices a 5-token statement "l r = a ," (tokens, possibly false) in
// front of fact `position`. Length grows by one fact; injected_at records
// the edit.
seqgen::SequenceSample inject_fact(const seqgen::SequenceSample& s,
                                   std::array<int, 3> fact_tokens, int position,
                                   const seqgen::Vocab& vocab);

}  // namespace icalab::distributions
