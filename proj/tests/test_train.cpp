#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "icalab/blasenv.hpp"
#include "icalab/errors.hpp"
#include "icalab/train.hpp"

using namespace icalab;
using namespace icalab::train;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  blasenv::ensure_fast_kernels(argc, argv);
  return doctest::Context(argc, argv).run();
}

namespace {

model::ModelConfig tiny_cfg() {
  model::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.max_seq_len = 128;
  return c;
}

TrainConfig tiny_train(int steps) {
  TrainConfig t;
  t.batch_size = 4;
  t.k = 6;
  t.lr = 1e-3;
  t.warmup_steps = 10;
  t.total_steps = steps;
  t.eval_every = steps;
  t.checkpoint_every = steps;
  t.eval_samples = 8;
  t.master_seed = 77;
  return t;
}

fs::path tmpdir(const char* name) {
  fs::path p = fs::temp_directory_path() / "icalab_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("pool spec parsing") {
  auto pool = build_pool("C3-C10,D3-D5");
  CHECK(pool.tables.size() == 11);
  CHECK(pool.tables[0].name() == "C3");
  CHECK(pool.tables[10].name() == "D5");

  auto ood = build_pool("C4xC2,Q8,Z2^3", 5);
  for (const auto& t : ood.tables) {
    CHECK(t.order() == 8);
    CHECK(groups::verify_axioms(t).is_group());
  }

  auto rnd = build_pool("SG8,QG8,M8", 9);
  CHECK(groups::verify_axioms(rnd.tables[0]).associative);
  CHECK(groups::verify_axioms(rnd.tables[1]).is_latin);
  CHECK(rnd.tables[2].order() == 8);

  CHECK_THROWS_AS(build_pool("X9"), ConfigError);
  CHECK_THROWS_AS(build_pool(""), ConfigError);
}

TEST_CASE("desk presets") {
  auto m = desk_model_config();
  CHECK(m.n_layers == 4);
  CHECK(m.n_heads == 4);
  CHECK(m.d_model == 512);
  auto t = desk_train_config();
  CHECK(t.batch_size == 32);
  CHECK(t.k == 30);
  CHECK(t.total_steps == 20000);
  CHECK(t.p_mix == 0.7);
}

TEST_CASE("adamw fits a constant batch") {
  auto cfg = tiny_cfg();
  auto params = model::ModelParams<float>::init(cfg, 3);
  model::Net<float> net(params);
  AdamW opt(cfg, 0.9, 0.999, 0.0);

  std::vector<int> toks;
  Rng rng(4);
  for (int i = 0; i < 2 * 40; ++i) toks.push_back(rng.below(18));

  std::vector<float> losses;
  auto grads = model::ModelParams<float>::zeros_like(cfg);
  for (int step = 0; step < 100; ++step) {
    visit_params(grads, [](const std::string&, std::vector<float>& t,
                           const std::vector<int>&) { std::fill(t.begin(), t.end(), 0.f); });
    losses.push_back(net.loss_and_grads(toks, 2, 40, grads));
    opt.step(params, grads, 3e-3);
  }
  CHECK(losses.front() > 2.5);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[static_cast<size_t>(i)] / 10;
    tail += losses[losses.size() - 10 + static_cast<size_t>(i)] / 10;
  }
  CHECK(tail < head * 0.5);  // decreasing trend
  CHECK(tail < 0.7);
}

TEST_CASE("checkpoint round trip is byte identical") {
  auto cfg = tiny_cfg();
  auto params = model::ModelParams<float>::init(cfg, 11);
  AdamW opt(cfg, 0.9, 0.999, 0.01);
  auto dir = tmpdir("ckpt");

  TrainConfig t = tiny_train(4);
  save_checkpoint(dir / "a.ical", params, &opt.state(), 17, t.to_json());
  Checkpoint ck = load_checkpoint(dir / "a.ical");
  CHECK(ck.step == 17);
  CHECK(ck.params.cfg == cfg);
  REQUIRE(ck.optimizer.has_value());
  save_checkpoint(dir / "b.ical", ck.params, &*ck.optimizer, ck.step,
                  ck.train_config_json);
  CHECK(slurp(dir / "a.ical") == slurp(dir / "b.ical"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto dir = tmpdir("ckpt_bad");
  {
    std::ofstream f(dir / "garbage.ical", std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "garbage.ical"), DataError);

  auto cfg = tiny_cfg();
  auto params = model::ModelParams<float>::init(cfg, 1);
  save_checkpoint(dir / "ok.ical", params, nullptr, 1);
  auto bytes = slurp(dir / "ok.ical");
  {
    std::ofstream f(dir / "cut.ical", std::ios::binary);
    f.write(bytes.data(), static_cast<long>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ical"), DataError);
}

TEST_CASE("training resumes bit-exactly") {
  auto cfg = tiny_cfg();
  auto dir_a = tmpdir("resume_a");
  auto dir_b = tmpdir("resume_b");

  TrainConfig t8 = tiny_train(8);
  t8.checkpoint_every = 4;
  run_training(cfg, t8, dir_a, {}, true);

  // second run: take the step-4 checkpoint and continue to 8
  TrainConfig t8b = t8;
  run_training(cfg, t8b, dir_b, dir_a / "ckpt_4.ical", true);

  auto a = load_checkpoint(dir_a / "ckpt_8.ical");
  auto b = load_checkpoint(dir_b / "ckpt_8.ical");
  bool same = true;
  visit_params(a.params, [&](const std::string& name, std::vector<float>& ta,
                             const std::vector<int>&) {
    visit_params(b.params, [&](const std::string& n2, std::vector<float>& tb,
                               const std::vector<int>&) {
      if (n2 == name && ta != tb) same = false;
    });
  });
  CHECK(same);
  CHECK(slurp(dir_a / "ckpt_8.ical") == slurp(dir_b / "ckpt_8.ical"));
}

TEST_CASE("resume rejects mismatched model configs") {
  auto dir = tmpdir("resume_bad");
  auto cfg = tiny_cfg();
  TrainConfig t = tiny_train(2);
  t.checkpoint_every = 2;
  run_training(cfg, t, dir, {}, true);
  auto other = cfg;
  other.d_model = 64;
  CHECK_THROWS_AS(run_training(other, t, dir, dir / "ckpt_2.ical", true), ConfigError);
}

TEST_CASE("untrained model evaluates at chance on answer tasks") {
  auto cfg = tiny_cfg();
  auto params = model::ModelParams<float>::init(cfg, 19);
  model::Net<float> net(params);
  auto pool = build_pool("C3-C6");
  seqgen::Vocab vocab;
  seqgen::GenConfig gen;
  SkillMetrics m = eval_checkpoint(net, pool, 8, gen, vocab, 123, 64);
  for (double acc : {m.copy_acc, m.commute_acc, m.identity_acc, m.holdout_acc}) {
    CHECK(acc >= 0.0);
    CHECK(acc < 0.25);  // chance is 1/16
  }
  CHECK(m.closure_topk > 0.0);
  CHECK(m.closure_topk < 0.6);
}

TEST_CASE("closure top-K at a first mention reduces to top-1") {
  auto cfg = tiny_cfg();
  auto params = model::ModelParams<float>::init(cfg, 23);
  model::Net<float> net(params);
  auto pool = build_pool("C5");
  seqgen::Vocab vocab;
  seqgen::GenConfig gen;
  gen.p_mix = 0;
  Rng rng(9);
  auto s = seqgen::generate_sequence(pool, 6, gen, vocab, rng);
  auto [top1, match] = closure_topk(net, s, 0, vocab);
  CHECK(match == (top1 ? 1.0 : 0.0));
  CHECK_THROWS_AS(closure_topk(net, s, 6, vocab), DataError);
}

TEST_CASE("first training step loss sits near the uniform value") {
  auto cfg = tiny_cfg();
  auto dir = tmpdir("step0");
  TrainConfig t = tiny_train(1);
  t.eval_every = 1;
  auto res = run_training(cfg, t, dir, {}, true);
  CHECK(std::abs(res.final_loss - std::log(18.0)) < 0.05);
}
