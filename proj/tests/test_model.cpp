#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cmath>

#include "icalab/blasenv.hpp"
#include "icalab/errors.hpp"
#include "icalab/model.hpp"
#include "icalab/rng.hpp"

using namespace icalab;
using namespace icalab::model;

int main(int argc, char** argv) {
  blasenv::ensure_fast_kernels(argc, argv);
  return doctest::Context(argc, argv).run();
}

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = 18;
  c.max_seq_len = 64;
  return c;
}

std::vector<int> random_tokens(int n, uint64_t seed, int vocab = 18) {
  Rng rng(seed);
  std::vector<int> t(static_cast<size_t>(n));
  for (int& x : t) x = rng.below(vocab);
  return t;
}

}  // namespace

TEST_CASE("init is deterministic and shaped as configured") {
  auto cfg = tiny_config();
  auto a = ModelParams<float>::init(cfg, 7);
  auto b = ModelParams<float>::init(cfg, 7);
  CHECK(a.embed == b.embed);
  CHECK(a.layers[1].wqkv == b.layers[1].wqkv);
  auto c = ModelParams<float>::init(cfg, 8);
  CHECK(a.embed != c.embed);

  ModelConfig dflt;  // 4 layers, 8 heads, 1024 wide
  CHECK(dflt.head_dim() == 128);
  auto p = ModelParams<float>::zeros_like(dflt);
  double analytic = 4.0 * (4 * 1024.0 * 1024 + 8 * 1024.0 * 1024) + 2 * 18 * 1024.0;
  double actual = static_cast<double>(p.param_count());
  CHECK(std::abs(actual - analytic) / analytic < 0.05);

  ModelConfig bad = dflt;
  bad.d_model = 1001;  // not divisible by 8
  CHECK_THROWS_AS(ModelParams<float>::zeros_like(bad), ConfigError);
}

TEST_CASE("attention weights are row-stochastic and causal") {
  auto cfg = tiny_config();
  auto params = ModelParams<float>::init(cfg, 1);
  Net<float> net(params);
  int T = 12;
  auto toks = random_tokens(T, 3);
  ActivationTrace<float> trace;
  TraceSpec spec;
  spec.attn_weights = true;
  net.forward(toks, 1, T, {}, &trace, spec);
  for (int l = 0; l < cfg.n_layers; ++l) {
    for (int h = 0; h < cfg.n_heads; ++h) {
      for (int t = 0; t < T; ++t) {
        const float* row =
            trace.attn_weights[static_cast<size_t>(l)].data() +
            (static_cast<size_t>(h) * T + t) * T;
        double sum = 0;
        for (int s = 0; s < T; ++s) {
          if (s > t) CHECK(row[s] == 0.0f);
          sum += row[s];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("per-head outputs sum to the layer attention output") {
  auto cfg = tiny_config();
  auto params = ModelParams<float>::init(cfg, 2);
  Net<float> net(params);
  int T = 10;
  auto toks = random_tokens(T, 5);
  ActivationTrace<float> trace;
  TraceSpec spec;
  spec.attn_out = true;
  spec.head_out = true;
  net.forward(toks, 1, T, {}, &trace, spec);
  for (int l = 0; l < cfg.n_layers; ++l) {
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < cfg.d_model; ++i) {
        double sum = 0;
        for (int h = 0; h < cfg.n_heads; ++h)
          sum += trace.head_out[static_cast<size_t>(l)]
                     [((static_cast<size_t>(t)) * cfg.n_heads + h) * cfg.d_model + i];
        double ref = trace.attn_out[static_cast<size_t>(l)]
                     [static_cast<size_t>(t) * cfg.d_model + i];
        CHECK(std::abs(sum - ref) < 1e-5);
      }
    }
  }
}

TEST_CASE("causality: later tokens never affect earlier logits") {
  auto cfg = tiny_config();
  auto params = ModelParams<float>::init(cfg, 9);
  Net<float> net(params);
  int T = 16, V = cfg.vocab_size;
  auto toks = random_tokens(T, 11);
  auto base = net.forward(toks, 1, T);
  for (int flip : {5, 10, 15}) {
    auto toks2 = toks;
    toks2[static_cast<size_t>(flip)] = (toks2[static_cast<size_t>(flip)] + 1) % V;
    Net<float> net2(params);
    auto alt = net2.forward(toks2, 1, T);
    for (int t = 0; t < flip; ++t)
      for (int v = 0; v < V; ++v)
        CHECK(alt[static_cast<size_t>(t) * V + v] == base[static_cast<size_t>(t) * V + v]);
  }
}

TEST_CASE("rotary scores depend only on position differences") {
  int dh = 8;
  Rng rng(13);
  std::vector<double> q(static_cast<size_t>(dh)), k(static_cast<size_t>(dh));
  for (auto& x : q) x = rng.normal();
  for (auto& x : k) x = rng.normal();
  auto score = [&](int tq, int tk) {
    auto qr = q;
    auto kr = k;
    rope_rotate(std::span<double>(qr), tq, 10000.0);
    rope_rotate(std::span<double>(kr), tk, 10000.0);
    double s = 0;
    for (int i = 0; i < dh; ++i) s += qr[static_cast<size_t>(i)] * kr[static_cast<size_t>(i)];
    return s;
  };
  for (int delta : {1, 7, 40}) {
    double a = score(9, 4);
    double b = score(9 + delta, 4 + delta);
    CHECK(a == doctest::Approx(b).epsilon(1e-10));
  }
}

TEST_CASE("swapping two token embedding and unembedding rows permutes logits") {
  auto cfg = tiny_config();
  auto params = ModelParams<float>::init(cfg, 21);
  int u = 3, v = 7, d = cfg.d_model, V = cfg.vocab_size;
  auto swapped = params;
  for (int i = 0; i < d; ++i) {
    std::swap(swapped.embed[static_cast<size_t>(u) * d + i],
              swapped.embed[static_cast<size_t>(v) * d + i]);
    std::swap(swapped.unembed[static_cast<size_t>(u) * d + i],
              swapped.unembed[static_cast<size_t>(v) * d + i]);
  }
  int T = 9;
  auto toks = random_tokens(T, 31);
  auto toks_swapped = toks;
  for (int& t : toks_swapped) t = t == u ? v : (t == v ? u : t);

  Net<float> net(params), net_swapped(swapped);
  auto lg = net.forward(toks, 1, T);
  auto lg2 = net_swapped.forward(toks_swapped, 1, T);
  for (int t = 0; t < T; ++t) {
    for (int w = 0; w < V; ++w) {
      int w2 = w == u ? v : (w == v ? u : w);
      CHECK(lg[static_cast<size_t>(t) * V + w] ==
            doctest::Approx(lg2[static_cast<size_t>(t) * V + w2]).epsilon(1e-5));
    }
  }
}

TEST_CASE("untrained loss sits at the uniform-predictor value") {
  ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.n_heads = 4;
  cfg.d_model = 512;
  cfg.max_seq_len = 256;
  auto params = ModelParams<float>::init(cfg, 5);
  Net<float> net(params);
  int B = 4, T = 50;
  auto toks = random_tokens(B * T, 77);
  auto grads = ModelParams<float>::zeros_like(cfg);
  float loss = net.loss_and_grads(toks, B, T, grads);
  CHECK(std::abs(loss - std::log(18.0)) < 0.05);
  for (float x : net.forward(toks, B, T)) CHECK(std::isfinite(x));
}

TEST_CASE("analytic gradients match central finite differences") {
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, 123);
  int B = 2, T = 10;
  auto toks = random_tokens(B * T, 55);

  auto grads = ModelParams<double>::zeros_like(cfg);
  Net<double> net(params);
  net.loss_and_grads(toks, B, T, grads);

  auto loss_at = [&](ModelParams<double>& p) {
    Net<double> n(p);
    auto g = ModelParams<double>::zeros_like(cfg);
    return n.loss_and_grads(toks, B, T, g);
  };

  double max_rel = 0;
  int checked = 0;
  Rng pick(999);
  visit_params(params, [&](const std::string& name, std::vector<double>& t,
                           const std::vector<int>&) {
    auto& gt = [&]() -> std::vector<double>& {
      std::vector<double>* out = nullptr;
      visit_params(grads, [&](const std::string& n2, std::vector<double>& t2,
                              const std::vector<int>&) {
        if (n2 == name) out = &t2;
      });
      return *out;
    }();
    // 24 random coordinates per tensor keeps the sweep dense but fast
    for (int rep = 0; rep < 24; ++rep) {
      size_t i = static_cast<size_t>(pick.below(static_cast<int>(t.size())));
      double h = 1e-5 * std::max(1.0, std::abs(t[i]));
      double orig = t[i];
      t[i] = orig + h;
      double lp = loss_at(params);
      t[i] = orig - h;
      double lm = loss_at(params);
      t[i] = orig;
      double fd = (lp - lm) / (2 * h);
      double g = gt[i];
      double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8});
      max_rel = std::max(max_rel, rel);
      ++checked;
    }
  });
  CHECK(checked > 300);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("duplicated batch entries contribute identically") {
  auto cfg = tiny_config();
  auto params = ModelParams<double>::init(cfg, 3);
  int T = 8;
  auto one = random_tokens(T, 41);
  std::vector<int> two = one;
  two.insert(two.end(), one.begin(), one.end());

  Net<double> n1(params), n2(params);
  auto g1 = ModelParams<double>::zeros_like(cfg);
  auto g2 = ModelParams<double>::zeros_like(cfg);
  double l1 = n1.loss_and_grads(one, 1, T, g1);
  double l2 = n2.loss_and_grads(two, 2, T, g2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  // gradients match too: the duplicate halves the per-example weight
  CHECK(g1.layers[0].wqkv[5] == doctest::Approx(g2.layers[0].wqkv[5]).epsilon(1e-9));
}

TEST_CASE("additive hooks with zero direction are exact no-ops") {
  auto cfg = tiny_config();
  auto params = ModelParams<float>::init(cfg, 17);
  int T = 12;
  auto toks = random_tokens(T, 19);
  Net<float> net(params);
  auto base = net.forward(toks, 1, T);
  std::vector<float> base_copy = base;

  Hook<float> hk;
  hk.site = Hook<float>::Site::attn_layer;
  hk.layer = cfg.n_layers - 1;
  hk.position = T - 1;
  hk.replaces = false;
  hk.edit = [](std::span<float>) {};  // adds nothing
  Net<float> net2(params);
  auto steered = net2.forward(toks, 1, T, {hk});
  CHECK(steered == base_copy);  // bitwise
}

TEST_CASE("overlong and malformed inputs are rejected") {
  auto cfg = tiny_config();
  auto params = ModelParams<float>::init(cfg, 1);
  Net<float> net(params);
  auto toks = random_tokens(cfg.max_seq_len + 1, 2);
  CHECK_THROWS_AS(net.forward(toks, 1, cfg.max_seq_len + 1), DataError);
  std::vector<int> bad = {1, 2, 99};
  CHECK_THROWS_AS(net.forward(bad, 1, 3), DataError);
}
