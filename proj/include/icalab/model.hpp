#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "icalab/rng.hpp"

namespace icalab::model {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 8;
  int d_model = 1024;
  int vocab_size = 18;
  int max_seq_len = 1001;
  double rope_base = 10000.0;
  int mlp_ratio = 4;

  int head_dim() const { return d_model / n_heads; }
  int d_ff() const { return mlp_ratio * d_model; }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& json);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LayerParams {
  std::vector<T> ln1_g;   // (d)
  std::vector<T> wqkv;    // (d, 3d)
  std::vector<T> wo;      // (d, d)
  std::vector<T> ln2_g;   // (d)
  std::vector<T> wup;     // (d, d_ff)
  std::vector<T> wdown;   // (d_ff, d)
};

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<T> embed;     // (V, d)
  std::vector<LayerParams<T>> layers;
  std::vector<T> lnf_g;     // (d)
  std::vector<T> unembed;   // (V, d)

  // Zero-valued parameter set with the same shapes (gradient/optimizer slots).
  static ModelParams zeros_like(const ModelConfig& cfg);
  // Scaled-normal init: std 0.02 everywhere, output projections (wo, wdown)
  // scaled by 1/sqrt(2*n_layers), norm gains at 1. Deterministic per seed.
  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  size_t param_count() const;
  template <typename U>
  ModelParams<U> cast() const;
};

// Stable iteration over named parameter tensors; the single source of
// truth for checkpoint blob order and optimizer slot order.
template <typename T, typename F>
void visit_params(ModelParams<T>& p, F&& f) {
  int d = p.cfg.d_model, dff = p.cfg.d_ff(), v = p.cfg.vocab_size;
  f("embed", p.embed, std::vector<int>{v, d});
  for (int l = 0; l < p.cfg.n_layers; ++l) {
    std::string pre = "layers." + std::to_string(l) + ".";
    f(pre + "ln1_g", p.layers[l].ln1_g, std::vector<int>{d});
    f(pre + "wqkv", p.layers[l].wqkv, std::vector<int>{d, 3 * d});
    f(pre + "wo", p.layers[l].wo, std::vector<int>{d, d});
    f(pre + "ln2_g", p.layers[l].ln2_g, std::vector<int>{d});
    f(pre + "wup", p.layers[l].wup, std::vector<int>{d, dff});
    f(pre + "wdown", p.layers[l].wdown, std::vector<int>{dff, d});
  }
  f("lnf_g", p.lnf_g, std::vector<int>{d});
  f("unembed", p.unembed, std::vector<int>{v, d});
}

// What the forward pass should capture.
struct TraceSpec {
  bool residuals = false;     // residual stream after each block
  bool attn_out = false;      // per-layer attention output a^l (pre residual add)
  bool head_out = false;      // per-head outputs a^(l,h) through their wo slice
  bool attn_weights = false;  // per-head causal attention matrices

  bool any() const { return residuals || attn_out || head_out || attn_weights; }
};

template <typename T>
struct ActivationTrace {
  int batch = 0, seq_len = 0;
  // indexed [layer]; shapes noted per entry
  std::vector<std::vector<T>> residual;      // (B, T, d)
  std::vector<std::vector<T>> attn_out;      // (B, T, d)
  std::vector<std::vector<T>> head_out;      // (B, T, H, d)
  std::vector<std::vector<T>> attn_weights;  // (B, H, T, T)
};

// In-place edit of one activation vector during the forward pass.
// Hooks address sequence 0 of the batch.
template <typename T>
struct Hook {
  enum class Site { head, attn_layer, residual };
  Site site = Site::attn_layer;
  int layer = 0;
  int head = 0;      // Site::head only
  int position = 0;  // token index
  // Mutates the d-sized activation row (for Site::head, the head's
  // d-sized output contribution).
  std::function<void(std::span<T>)> edit;
  // Replacement hooks cut the gradient path to the original producer;
  // additive edits leave it intact.
  bool replaces = true;
};

// Position of the rotary embedding applied to q/k head vectors.
template <typename T>
void rope_rotate(std::span<T> head_vec, int position, double base);

template <typename T>
class Net {
 public:
  explicit Net(const ModelParams<T>& params);

  // Batched forward over B sequences of length len. Returns logits
  // (B, len, vocab). Caches everything backward() needs. Not reentrant:
  // one Net instance serves one thread.
  const std::vector<T>& forward(std::span<const int> tokens, int batch, int len,
                                const std::vector<Hook<T>>& hooks = {},
                                ActivationTrace<T>* trace = nullptr,
                                const TraceSpec& spec = {});

  // Mean next-token cross-entropy over all positions plus exact
  // parameter gradients (accumulated into grads, which must be
  // zeros_like-shaped).
  T loss_and_grads(std::span<const int> tokens, int batch, int len,
                   ModelParams<T>& grads);

  // Loss of one target token at the final position of sequence 0, with
  // gradients taken only w.r.t. the activation a hook injected at
  // (attn_layer, layer, position). forward() with that hook must have
  // run already. Returns -log p(target).
  T backward_to_injection(int target_token, int layer, int position,
                          std::span<T> grad_out);

  const ModelConfig& cfg() const { return params_.cfg; }

 private:
  struct LayerWork {
    std::vector<T> ln1_out, ln1_mean, ln1_rstd;
    std::vector<T> qkv;       // (B, T, 3d), q/k already rotated
    std::vector<T> attw;      // (B, H, T, T)
    std::vector<T> ctx;       // (B, T, d) attention-weighted V per head
    std::vector<T> attn_out;  // (B, T, d) after wo and hooks
    std::vector<T> x_mid;     // (B, T, d) residual after attention
    std::vector<T> ln2_out, ln2_mean, ln2_rstd;
    std::vector<T> mlp_pre;   // (B, T, d_ff)
    std::vector<T> mlp_tanh;  // cached tanh of the gelu inner term
    std::vector<T> mlp_act;   // (B, T, d_ff)
  };

  void run_backward(const std::vector<T>& dlogits, ModelParams<T>* grads,
                    int probe_layer, int probe_position, std::span<T> probe_out);

  void build_rope_tables(int len);

  const ModelParams<T>& params_;
  int batch_ = 0, len_ = 0;
  int rope_len_ = 0;
  std::vector<T> rope_cos_, rope_sin_;
  std::vector<int> tokens_;
  std::vector<T> resid_;        // (L+1, B, T, d) residual stream boundaries
  std::vector<LayerWork> work_;
  std::vector<T> lnf_out_, lnf_mean_, lnf_rstd_;
  std::vector<T> logits_;
  std::vector<Hook<T>> hooks_;

  // backward scratch
  std::vector<T> d_resid_, d_tmp_, d_qkv_, d_ctx_, d_ff_a_, d_ff_b_, d_attw_;
};

extern template class Net<float>;
extern template class Net<double>;
extern template struct ModelParams<float>;
extern template struct ModelParams<double>;
extern template void rope_rotate<float>(std::span<float>, int, double);
extern template void rope_rotate<double>(std::span<double>, int, double);

}  // namespace icalab::model
