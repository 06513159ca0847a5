#include "icalab/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "icalab/errors.hpp"
#include "icalab/oracles.hpp"

namespace icalab::train {

using model::ModelConfig;
using model::ModelParams;
using model::Net;
using seqgen::GroupPool;
using seqgen::SequenceSample;
using seqgen::Vocab;

void TrainConfig::validate() const {
  if (batch_size < 1 || lr <= 0 || warmup_steps < 0 || k < 1 || total_steps < 1 ||
      eval_every < 1 || checkpoint_every < 1 || eval_samples < 1)
    throw ConfigError("train config fields must be positive");
  if (p_mix < 0 || p_mix > 1) throw ConfigError("p_mix must be in [0,1]");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("adam betas must be in [0,1)");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["warmup_steps"] = warmup_steps;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["weight_decay"] = weight_decay;
  j["grad_clip"] = grad_clip;
  j["k"] = k;
  j["p_mix"] = p_mix;
  j["pool"] = pool;
  j["total_steps"] = total_steps;
  j["eval_every"] = eval_every;
  j["checkpoint_every"] = checkpoint_every;
  j["eval_samples"] = eval_samples;
  j["master_seed"] = master_seed;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.k = j.at("k").get<int>();
  c.p_mix = j.at("p_mix").get<double>();
  c.pool = j.at("pool").get<std::string>();
  c.total_steps = j.at("total_steps").get<int>();
  c.eval_every = j.at("eval_every").get<int>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.eval_samples = j.at("eval_samples").get<int>();
  c.master_seed = j.at("master_seed").get<uint64_t>();
  c.validate();
  return c;
}

ModelConfig desk_model_config() {
  ModelConfig c;
  c.n_layers = 4;
  c.n_heads = 4;
  c.d_model = 512;
  c.vocab_size = 18;
  c.max_seq_len = 256;
  return c;
}

TrainConfig desk_train_config() {
  TrainConfig c;
  c.batch_size = 32;
  c.k = 30;
  c.total_steps = 20000;
  c.lr = 3e-4;  // batch 32 needs a much hotter schedule than the 1e-5 / batch-128 recipe
  c.warmup_steps = 1000;
  c.eval_every = 250;
  c.checkpoint_every = 2000;
  return c;
}

namespace {

groups::MagmaTable build_structure(const std::string& name, uint64_t seed) {
  auto num_after = [&](size_t at) { return std::stoi(name.substr(at)); };
  if (name == "Q8") return groups::build_quaternion();
  if (name == "Z2^3")
    return groups::build_direct_product(
        groups::build_direct_product(groups::build_cyclic(2), groups::build_cyclic(2)),
        groups::build_cyclic(2));
  auto x = name.find('x');
  if (x != std::string::npos) {
    auto a = build_structure(name.substr(0, x), seed);
    auto b = build_structure(name.substr(x + 1), seed + 1);
    return groups::build_direct_product(a, b);
  }
  if (name.size() >= 2 && name[0] == 'C') return groups::build_cyclic(num_after(1));
  if (name.size() >= 2 && name[0] == 'D') return groups::build_dihedral(num_after(1));
  if (name.rfind("SG", 0) == 0) {
    Rng rng = Rng::stream(seed, ("pool." + name).c_str());
    return groups::build_random_semigroup(num_after(2), rng);
  }
  if (name.rfind("QG", 0) == 0) {
    Rng rng = Rng::stream(seed, ("pool." + name).c_str());
    return groups::build_random_quasigroup(num_after(2), rng);
  }
  if (name.size() >= 2 && name[0] == 'M') {
    Rng rng = Rng::stream(seed, ("pool." + name).c_str());
    return groups::build_random_magma(num_after(1), rng);
  }
  throw ConfigError("unknown structure name in pool spec: " + name);
}

}  // namespace

GroupPool build_pool(const std::string& spec, uint64_t seed) {
  GroupPool pool;
  std::string cur;
  std::vector<std::string> entries;
  for (char ch : spec) {
    if (ch == ',') {
      entries.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) entries.push_back(cur);
  for (const std::string& e : entries) {
    if (e.empty()) continue;
    auto dash = e.find('-');
    if (dash != std::string::npos && dash > 1 && (e[0] == 'C' || e[0] == 'D') &&
        e[dash + 1] == e[0]) {
      int lo = std::stoi(e.substr(1, dash - 1));
      int hi = std::stoi(e.substr(dash + 2));
      for (int n = lo; n <= hi; ++n)
        pool.tables.push_back(e[0] == 'C' ? groups::build_cyclic(n)
                                          : groups::build_dihedral(n));
    } else {
      pool.tables.push_back(build_structure(e, seed));
    }
  }
  if (pool.tables.empty()) throw ConfigError("pool spec produced no structures");
  return pool;
}

const char* SkillMetrics::csv_header() {
  return "step,loss,structural_acc,closure_top1,closure_topk,query_promotion,copy_acc,"
         "commute_acc,identity_acc,cancel_acc,associate_acc,holdout_acc";
}

std::string SkillMetrics::csv_row(int step, double loss) const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", step, loss,
                structural_acc, closure_top1, closure_topk, query_promotion, copy_acc,
                commute_acc, identity_acc, cancel_acc, associate_acc, holdout_acc);
  return buf;
}

namespace {

// Distinct variables of the queried fact's structure seen in tokens[0..pos].
std::set<int> seen_members(const SequenceSample& s, int member, int pos) {
  std::set<int> member_tokens(s.map.tokens[static_cast<size_t>(member)].begin(),
                              s.map.tokens[static_cast<size_t>(member)].end());
  std::set<int> seen;
  for (int i = 0; i <= pos; ++i)
    if (member_tokens.count(s.tokens[static_cast<size_t>(i)]))
      seen.insert(s.tokens[static_cast<size_t>(i)]);
  return seen;
}

std::pair<bool, double> closure_from_logits(const SequenceSample& s, int fact_index,
                                            const float* logits_row, const Vocab& vocab) {
  int pos = fact_index * 5;
  int member = s.facts[static_cast<size_t>(fact_index)].member;
  std::set<int> seen = seen_members(s, member, pos);
  int K = static_cast<int>(seen.size());
  std::vector<int> order(static_cast<size_t>(vocab.n_vars));
  for (int v = 0; v < vocab.n_vars; ++v) order[static_cast<size_t>(v)] = v;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return logits_row[a] > logits_row[b]; });
  bool top1 = seen.count(order[0]) > 0;
  int hit = 0;
  for (int i = 0; i < K; ++i) hit += seen.count(order[static_cast<size_t>(i)]) > 0;
  return {top1, static_cast<double>(hit) / K};
}

}  // namespace

std::pair<bool, double> closure_topk(Net<float>& net, const SequenceSample& s,
                                     int fact_index, const Vocab& vocab) {
  if (fact_index < 0 || fact_index >= s.fact_count() ||
      static_cast<size_t>(fact_index) * 5 >= s.tokens.size())
    throw DataError("fact index is not a left-slot of this sequence");
  int len = static_cast<int>(s.tokens.size());
  const auto& logits = net.forward(s.tokens, 1, len);
  int pos = fact_index * 5;
  return closure_from_logits(s, fact_index, logits.data() +
                                              static_cast<size_t>(pos) * net.cfg().vocab_size,
                             vocab);
}

namespace {

// argmax over the variable tokens only
int answer_argmax(const float* logits_row, int n_vars) {
  int best = 0;
  for (int v = 1; v < n_vars; ++v)
    if (logits_row[v] > logits_row[best]) best = v;
  return best;
}

struct EvalAccumulator {
  double struct_hit = 0, struct_n = 0;
  double top1_hit = 0, topk_sum = 0, closure_n = 0;
};

}  // namespace

SkillMetrics eval_checkpoint(Net<float>& net, const GroupPool& pool, int k,
                             const seqgen::GenConfig& gen, const Vocab& vocab,
                             uint64_t seed, int n) {
  const int chunk = 32;
  int V = net.cfg().vocab_size;
  SkillMetrics m;

  // structural + closure metrics over random full sequences
  EvalAccumulator acc;
  {
    std::vector<SequenceSample> samples;
    samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng rng = Rng::stream(seed, "eval.random", static_cast<uint64_t>(i));
      samples.push_back(seqgen::generate_sequence(pool, k, gen, vocab, rng));
    }
    int len = 5 * k;
    for (int base = 0; base < n; base += chunk) {
      int b = std::min(chunk, n - base);
      std::vector<int> toks;
      toks.reserve(static_cast<size_t>(b) * len);
      for (int i = 0; i < b; ++i)
        toks.insert(toks.end(), samples[static_cast<size_t>(base + i)].tokens.begin(),
                    samples[static_cast<size_t>(base + i)].tokens.end());
      const auto& logits = net.forward(toks, b, len);
      for (int i = 0; i < b; ++i) {
        const SequenceSample& s = samples[static_cast<size_t>(base + i)];
        const float* lg = logits.data() + static_cast<size_t>(i) * len * V;
        for (int t = 0; t + 1 < len; ++t) {
          int target = s.tokens[static_cast<size_t>(t) + 1];
          if (target != vocab.eq() && target != vocab.comma()) continue;
          const float* row = lg + static_cast<size_t>(t) * V;
          int best = 0;
          for (int v = 1; v < V; ++v)
            if (row[v] > row[best]) best = v;
          acc.struct_hit += best == target;
          acc.struct_n += 1;
        }
        for (int f = 1; f < k; ++f) {
          int member = s.facts[static_cast<size_t>(f)].member;
          if (seen_members(s, member, f * 5).size() < 2) continue;  // first mention
          auto [top1, match] =
              closure_from_logits(s, f, lg + static_cast<size_t>(f) * 5 * V, vocab);
          acc.top1_hit += top1;
          acc.topk_sum += match;
          acc.closure_n += 1;
        }
      }
    }
    m.structural_acc = acc.struct_n ? acc.struct_hit / acc.struct_n : 0;
    m.closure_top1 = acc.closure_n ? acc.top1_hit / acc.closure_n : 0;
    m.closure_topk = acc.closure_n ? acc.topk_sum / acc.closure_n : 0;
  }

  // answer accuracy per targeted distribution
  distributions::MakeConfig mk;
  mk.gen = gen;
  auto answer_metric = [&](distributions::Kind kind, const char* stream, double* out,
                           double* promo_out) {
    double hit = 0, promo = 0;
    std::vector<SequenceSample> samples;
    samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng rng = Rng::stream(seed, stream, static_cast<uint64_t>(i));
      samples.push_back(distributions::make(kind, pool, k, mk, vocab, rng));
    }
    int len = 5 * k - 2;
    for (int base = 0; base < n; base += chunk) {
      int b = std::min(chunk, n - base);
      std::vector<int> toks;
      toks.reserve(static_cast<size_t>(b) * len);
      for (int i = 0; i < b; ++i)
        toks.insert(toks.end(), samples[static_cast<size_t>(base + i)].tokens.begin(),
                    samples[static_cast<size_t>(base + i)].tokens.end());
      const auto& logits = net.forward(toks, b, len);
      for (int i = 0; i < b; ++i) {
        const SequenceSample& s = samples[static_cast<size_t>(base + i)];
        const float* row =
            logits.data() + (static_cast<size_t>(i) * len + (len - 1)) * V;
        hit += answer_argmax(row, vocab.n_vars) == s.target.value();
        if (promo_out) {
          int qL = s.tokens[s.tokens.size() - 3], qR = s.tokens[s.tokens.size() - 2];
          int b1 = answer_argmax(row, vocab.n_vars);
          int b2 = 0;
          float best2 = -1e30f;
          for (int v = 0; v < vocab.n_vars; ++v)
            if (v != b1 && row[v] > best2) {
              best2 = row[v];
              b2 = v;
            }
          bool top2 = (b1 == qL && b2 == qR) || (b1 == qR && b2 == qL);
          promo += top2;
        }
      }
    }
    *out = hit / n;
    if (promo_out) *promo_out = promo / n;
  };

  answer_metric(distributions::Kind::copy, "eval.copy", &m.copy_acc, nullptr);
  answer_metric(distributions::Kind::commute, "eval.commute", &m.commute_acc, nullptr);
  answer_metric(distributions::Kind::identity, "eval.identity", &m.identity_acc,
                &m.query_promotion);
  answer_metric(distributions::Kind::cancel, "eval.cancel", &m.cancel_acc, nullptr);
  answer_metric(distributions::Kind::associate, "eval.associate", &m.associate_acc,
                nullptr);
  answer_metric(distributions::Kind::holdout, "eval.holdout", &m.holdout_acc, nullptr);
  return m;
}

AdamW::AdamW(const ModelConfig& cfg, double beta1, double beta2, double weight_decay)
    : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay) {
  state_.m = ModelParams<float>::zeros_like(cfg);
  state_.v = ModelParams<float>::zeros_like(cfg);
  state_.t = 0;
}

void AdamW::step(ModelParams<float>& params, const ModelParams<float>& grads, double lr) {
  state_.t += 1;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.t));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.t));
  auto* gp = const_cast<ModelParams<float>*>(&grads);
  visit_params(params, [&](const std::string& name, std::vector<float>& p,
                           const std::vector<int>& shape) {
    std::vector<float>*g = nullptr, *mv = nullptr, *vv = nullptr;
    visit_params(*gp, [&](const std::string& n2, std::vector<float>& t2,
                          const std::vector<int>&) {
      if (n2 == name) g = &t2;
    });
    visit_params(state_.m, [&](const std::string& n2, std::vector<float>& t2,
                               const std::vector<int>&) {
      if (n2 == name) mv = &t2;
    });
    visit_params(state_.v, [&](const std::string& n2, std::vector<float>& t2,
                               const std::vector<int>&) {
      if (n2 == name) vv = &t2;
    });
    bool decay = shape.size() >= 2 && weight_decay_ > 0;
    long nelem = static_cast<long>(p.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < nelem; ++i) {
      size_t ii = static_cast<size_t>(i);
      double gi = (*g)[ii];
      double mi = beta1_ * (*mv)[ii] + (1 - beta1_) * gi;
      double vi = beta2_ * (*vv)[ii] + (1 - beta2_) * gi * gi;
      (*mv)[ii] = static_cast<float>(mi);
      (*vv)[ii] = static_cast<float>(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + 1e-8);
      if (decay) update += weight_decay_ * p[ii];
      p[ii] = static_cast<float>(p[ii] - lr * update);
    }
  });
}

namespace {

constexpr uint32_t kMagic = 0x4c414349;  // "ICAL" little-endian
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
void write_u16(std::ofstream& f, uint16_t v) {
  f.write(reinterpret_cast<const char*>(&v), 2);
}
uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw DataError("checkpoint truncated");
  return v;
}
uint16_t read_u16(std::ifstream& f) {
  uint16_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 2);
  if (!f) throw DataError("checkpoint truncated");
  return v;
}

void write_blob(std::ofstream& f, const std::string& name, const std::vector<float>& data,
                const std::vector<int>& shape) {
  write_u16(f, static_cast<uint16_t>(name.size()));
  f.write(name.data(), static_cast<long>(name.size()));
  f.put(0);  // dtype f32
  f.put(static_cast<char>(shape.size()));
  for (int dim : shape) write_u32(f, static_cast<uint32_t>(dim));
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<long>(data.size() * sizeof(float)));
}

struct BlobIn {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

BlobIn read_blob(std::ifstream& f) {
  BlobIn b;
  uint16_t nlen = read_u16(f);
  b.name.resize(nlen);
  f.read(b.name.data(), nlen);
  int dtype = f.get();
  int ndim = f.get();
  if (!f || dtype != 0 || ndim < 0 || ndim > 4) throw DataError("checkpoint blob corrupt");
  size_t count = 1;
  for (int i = 0; i < ndim; ++i) {
    uint32_t dim = read_u32(f);
    b.shape.push_back(static_cast<int>(dim));
    count *= dim;
  }
  b.data.resize(count);
  f.read(reinterpret_cast<char*>(b.data.data()), static_cast<long>(count * sizeof(float)));
  if (!f) throw DataError("checkpoint truncated");
  return b;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const AdamWState* optimizer, int step,
                     const std::string& train_config_json) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path.string());
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(params.cfg.to_json());
  j["step"] = step;
  j["has_optimizer"] = optimizer != nullptr;
  if (optimizer) j["adam_t"] = optimizer->t;
  if (!train_config_json.empty()) j["train"] = nlohmann::json::parse(train_config_json);
  std::string header = j.dump();

  write_u32(f, kMagic);
  write_u32(f, kVersion);
  write_u32(f, static_cast<uint32_t>(header.size()));
  f.write(header.data(), static_cast<long>(header.size()));

  uint32_t nblobs = 0;
  auto count_blobs = [&](ModelParams<float>& p) {
    visit_params(p, [&](const std::string&, std::vector<float>&, const std::vector<int>&) {
      ++nblobs;
    });
  };
  count_blobs(const_cast<ModelParams<float>&>(params));
  if (optimizer) {
    nblobs *= 3;
  }
  write_u32(f, nblobs);
  visit_params(const_cast<ModelParams<float>&>(params),
               [&](const std::string& name, std::vector<float>& t,
                   const std::vector<int>& shape) { write_blob(f, name, t, shape); });
  if (optimizer) {
    visit_params(const_cast<ModelParams<float>&>(optimizer->m),
                 [&](const std::string& name, std::vector<float>& t,
                     const std::vector<int>& shape) {
                   write_blob(f, "adam.m." + name, t, shape);
                 });
    visit_params(const_cast<ModelParams<float>&>(optimizer->v),
                 [&](const std::string& name, std::vector<float>& t,
                     const std::vector<int>& shape) {
                   write_blob(f, "adam.v." + name, t, shape);
                 });
  }
  if (!f) throw DataError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  if (read_u32(f) != kMagic) throw DataError("not a checkpoint file (bad magic)");
  if (read_u32(f) != kVersion) throw DataError("unsupported checkpoint version");
  uint32_t hlen = read_u32(f);
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (!f) throw DataError("checkpoint truncated");
  nlohmann::json j = nlohmann::json::parse(header);

  Checkpoint out;
  out.params = ModelParams<float>::zeros_like(ModelConfig::from_json(j.at("model").dump()));
  out.step = j.at("step").get<int>();
  if (j.contains("train")) out.train_config_json = j["train"].dump();
  bool has_opt = j.at("has_optimizer").get<bool>();
  if (has_opt) {
    out.optimizer = AdamWState{ModelParams<float>::zeros_like(out.params.cfg),
                               ModelParams<float>::zeros_like(out.params.cfg),
                               j.at("adam_t").get<int64_t>()};
  }

  uint32_t nblobs = read_u32(f);
  for (uint32_t i = 0; i < nblobs; ++i) {
    BlobIn b = read_blob(f);
    ModelParams<float>* dst = &out.params;
    std::string name = b.name;
    if (name.rfind("adam.m.", 0) == 0) {
      if (!out.optimizer) throw DataError("unexpected optimizer blob");
      dst = &out.optimizer->m;
      name = name.substr(7);
    } else if (name.rfind("adam.v.", 0) == 0) {
      if (!out.optimizer) throw DataError("unexpected optimizer blob");
      dst = &out.optimizer->v;
      name = name.substr(7);
    }
    bool placed = false;
    visit_params(*dst, [&](const std::string& n2, std::vector<float>& t2,
                           const std::vector<int>& shape2) {
      if (n2 != name) return;
      if (shape2 != b.shape)
        throw DataError("checkpoint shape mismatch for " + b.name);
      t2 = std::move(b.data);
      placed = true;
    });
    if (!placed) throw DataError("unknown checkpoint blob: " + b.name);
  }
  f.peek();
  if (!f.eof()) throw DataError("trailing bytes after checkpoint blobs");
  return out;
}

namespace {

double grad_global_norm(const ModelParams<float>& grads) {
  double sq = 0;
  visit_params(const_cast<ModelParams<float>&>(grads),
               [&](const std::string&, std::vector<float>& t, const std::vector<int>&) {
                 double local = 0;
                 for (float x : t) local += static_cast<double>(x) * x;
                 sq += local;
               });
  return std::sqrt(sq);
}

void scale_grads(ModelParams<float>& grads, float s) {
  visit_params(grads, [&](const std::string&, std::vector<float>& t,
                          const std::vector<int>&) {
    for (float& x : t) x *= s;
  });
}

void zero_grads(ModelParams<float>& grads) {
  visit_params(grads, [&](const std::string&, std::vector<float>& t,
                          const std::vector<int>&) {
    std::fill(t.begin(), t.end(), 0.0f);
  });
}

}  // namespace

TrainResult run_training(const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::filesystem::path& run_dir,
                         const std::optional<std::filesystem::path>& resume_path,
                         bool quiet) {
  mcfg.validate();
  tcfg.validate();
  if (5 * tcfg.k > mcfg.max_seq_len)
    throw ConfigError("k facts do not fit in max_seq_len");
  std::filesystem::create_directories(run_dir);

  GroupPool pool = build_pool(tcfg.pool, tcfg.master_seed);
  Vocab vocab;
  seqgen::GenConfig gen;
  gen.p_mix = tcfg.p_mix;
  gen.n_vars = vocab.n_vars;

  ModelParams<float> params = ModelParams<float>::init(mcfg, tcfg.master_seed);
  AdamW opt(mcfg, tcfg.beta1, tcfg.beta2, tcfg.weight_decay);
  int start_step = 0;

  if (resume_path) {
    Checkpoint ck = load_checkpoint(*resume_path);
    if (!(ck.params.cfg == mcfg)) throw ConfigError("resume checkpoint has a different model config");
    params = std::move(ck.params);
    if (!ck.optimizer) throw DataError("resume checkpoint lacks optimizer state");
    opt.state() = std::move(*ck.optimizer);
    start_step = ck.step;
  }

  Net<float> net(params);
  ModelParams<float> grads = ModelParams<float>::zeros_like(mcfg);

  auto metrics_path = run_dir / "metrics.csv";
  bool fresh = !resume_path || !std::filesystem::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) metrics << SkillMetrics::csv_header() << "\n";
  metrics.flush();

  TrainResult result;
  int len = 5 * tcfg.k;
  double loss_accum = 0;
  int loss_count = 0;
  std::vector<int> batch_tokens(static_cast<size_t>(tcfg.batch_size) * len);

  for (int step = start_step + 1; step <= tcfg.total_steps; ++step) {
    for (int b = 0; b < tcfg.batch_size; ++b) {
      uint64_t idx = static_cast<uint64_t>(step - 1) * tcfg.batch_size + b;
      Rng rng = Rng::stream(tcfg.master_seed, "train.seq", idx);
      SequenceSample s = seqgen::generate_sequence(pool, tcfg.k, gen, vocab, rng);
      std::copy(s.tokens.begin(), s.tokens.end(),
                batch_tokens.begin() + static_cast<long>(b) * len);
    }

    zero_grads(grads);
    float loss = net.loss_and_grads(batch_tokens, tcfg.batch_size, len, grads);
    if (!std::isfinite(loss)) {
      save_checkpoint(run_dir / "ckpt_diverged.ical", params, &opt.state(), step,
                      tcfg.to_json());
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    loss_accum += loss;
    loss_count += 1;

    if (tcfg.grad_clip > 0) {
      double norm = grad_global_norm(grads);
      if (norm > tcfg.grad_clip)
        scale_grads(grads, static_cast<float>(tcfg.grad_clip / norm));
    }
    double lr = tcfg.lr;
    if (tcfg.warmup_steps > 0)
      lr *= std::min(1.0, static_cast<double>(step) / tcfg.warmup_steps);
    opt.step(params, grads, lr);

    if (step % tcfg.eval_every == 0 || step == tcfg.total_steps) {
      SkillMetrics m = eval_checkpoint(net, pool, tcfg.k, gen, vocab,
                                       Rng::derive(tcfg.master_seed, "eval.seed",
                                                   static_cast<uint64_t>(step)),
                                       tcfg.eval_samples);
      double mean_loss = loss_accum / loss_count;
      loss_accum = 0;
      loss_count = 0;
      metrics << m.csv_row(step, mean_loss) << "\n";
      metrics.flush();
      result.metric_history.emplace_back(step, m);
      result.final_loss = mean_loss;
      if (!quiet)
        std::fprintf(stderr,
                     "step %6d  loss %.4f  struct %.3f  closure %.3f  copy %.3f  "
                     "holdout %.3f\n",
                     step, mean_loss, m.structural_acc, m.closure_top1, m.copy_acc,
                     m.holdout_acc);
    }
    if (step % tcfg.checkpoint_every == 0 || step == tcfg.total_steps) {
      save_checkpoint(run_dir / ("ckpt_" + std::to_string(step) + ".ical"), params,
                      &opt.state(), step, tcfg.to_json());
      save_checkpoint(run_dir / "ckpt_latest.ical", params, &opt.state(), step,
                      tcfg.to_json());
    }
  }

  result.params = std::move(params);
  return result;
}

}  // namespace icalab::train
