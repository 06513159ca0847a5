#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icalab/distributions.hpp"
#include "icalab/model.hpp"
#include "icalab/seqgen.hpp"

namespace icalab::train {

struct TrainConfig {
  int batch_size = 128;
  double lr = 1e-5;            // linear warmup to lr, then constant
  int warmup_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;  // decoupled, matrices and embeddings only
  double grad_clip = 1.0;      // global norm; <= 0 disables
  int k = 200;                 // facts per training sequence
  double p_mix = 0.7;
  std::string pool = "C3-C10,D3-D5";
  int total_steps = 100000;
  int eval_every = 250;
  int checkpoint_every = 1000;
  int eval_samples = 128;
  uint64_t master_seed = 42;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& json);
};

// The configuration the acceptance runs use: small enough for one
// workstation, large enough that the d>=512 capacity threshold is met.
model::ModelConfig desk_model_config();
TrainConfig desk_train_config();

// Pool spec: comma-separated names Cn, Dn, Q8, Z2^3, CnxCm, plus ranges
// like C3-C10 / D3-D5. Random structures SGn, QGn, Mn derive from `seed`.
seqgen::GroupPool build_pool(const std::string& spec, uint64_t seed = 0);

struct SkillMetrics {
  double structural_acc = 0;
  double closure_top1 = 0;
  double closure_topk = 0;
  double query_promotion = 0;
  double copy_acc = 0;
  double commute_acc = 0;
  double identity_acc = 0;
  double cancel_acc = 0;
  double associate_acc = 0;
  double holdout_acc = 0;

  static const char* csv_header();  // includes step and loss columns
  std::string csv_row(int step, double loss) const;
};

// Top-K closure match at one left-slot position (fact index >= 0) of a
// sequence: K counts the distinct same-structure variables seen up to and
// including that slot; returns (top-1 hit, |topK ∩ seen| / K).
std::pair<bool, double> closure_topk(model::Net<float>& net,
                                     const seqgen::SequenceSample& s, int fact_index,
                                     const seqgen::Vocab& vocab);

// The per-checkpoint skill battery: `n` samples per metric, forwards
// chunked through `net` (which owns the parameters).
SkillMetrics eval_checkpoint(model::Net<float>& net, const seqgen::GroupPool& pool, int k,
                             const seqgen::GenConfig& gen, const seqgen::Vocab& vocab,
                             uint64_t seed, int n = 128);

struct AdamWState {
  model::ModelParams<float> m, v;
  int64_t t = 0;
};

class AdamW {
 public:
  AdamW(const model::ModelConfig& cfg, double beta1, double beta2, double weight_decay);

  void step(model::ModelParams<float>& params, const model::ModelParams<float>& grads,
            double lr);

  AdamWState& state() { return state_; }
  const AdamWState& state() const { return state_; }

 private:
  double beta1_, beta2_, weight_decay_;
  AdamWState state_;
};

// Container format: magic "ICAL", u32 version, length-prefixed JSON
// header, then named parameter blobs as little-endian f32 with shapes.
struct Checkpoint {
  model::ModelParams<float> params;
  std::optional<AdamWState> optimizer;
  int step = 0;
  std::string train_config_json;  // empty when absent
};

void save_checkpoint(const std::filesystem::path& path,
                     const model::ModelParams<float>& params, const AdamWState* optimizer,
                     int step, const std::string& train_config_json = "");
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  model::ModelParams<float> params;
  std::vector<std::pair<int, SkillMetrics>> metric_history;
  double final_loss = 0;
};

// On-the-fly data, fresh sequences every step, deterministic per master
// seed. Writes metrics.csv and periodic checkpoints under run_dir;
// resumes bit-exactly from resume_path when given.
TrainResult run_training(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::filesystem::path& run_dir,
                         const std::optional<std::filesystem::path>& resume_path = {},
                         bool quiet = false);

}  // namespace icalab::train
