#include "icalab/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>

#include "icalab/errors.hpp"
#include "icalab/tensor.hpp"

namespace icalab::model {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || vocab_size < 2 || max_seq_len < 1 ||
      mlp_ratio < 1 || rope_base <= 1.0)
    throw ConfigError("model config fields must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_model"] = d_model;
  j["vocab_size"] = vocab_size;
  j["max_seq_len"] = max_seq_len;
  j["rope_base"] = rope_base;
  j["mlp_ratio"] = mlp_ratio;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.validate();
  return c;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.cfg = cfg;
  int d = cfg.d_model, dff = cfg.d_ff(), v = cfg.vocab_size;
  p.embed.assign(static_cast<size_t>(v) * d, T(0));
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : p.layers) {
    l.ln1_g.assign(static_cast<size_t>(d), T(0));
    l.wqkv.assign(static_cast<size_t>(d) * 3 * d, T(0));
    l.wo.assign(static_cast<size_t>(d) * d, T(0));
    l.ln2_g.assign(static_cast<size_t>(d), T(0));
    l.wup.assign(static_cast<size_t>(d) * dff, T(0));
    l.wdown.assign(static_cast<size_t>(dff) * d, T(0));
  }
  p.lnf_g.assign(static_cast<size_t>(d), T(0));
  p.unembed.assign(static_cast<size_t>(v) * d, T(0));
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, uint64_t seed) {
  ModelParams<T> p = zeros_like(cfg);
  double out_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  visit_params(p, [&](const std::string& name, std::vector<T>& t, const std::vector<int>&) {
    Rng rng = Rng::stream(seed, ("init." + name).c_str());
    if (name.ends_with("ln1_g") || name.ends_with("ln2_g") || name == "lnf_g") {
      std::fill(t.begin(), t.end(), T(1));
      return;
    }
    bool scaled = name.ends_with(".wo") || name.ends_with(".wdown") || name == "unembed";
    double std_dev = scaled ? out_std : 0.02;
    for (T& x : t) x = static_cast<T>(rng.normal() * std_dev);
  });
  return p;
}

template <typename T>
size_t ModelParams<T>::param_count() const {
  size_t n = 0;
  visit_params(const_cast<ModelParams<T>&>(*this),
               [&](const std::string&, std::vector<T>& t, const std::vector<int>&) {
                 n += t.size();
               });
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = ModelParams<U>::zeros_like(cfg);
  auto copy = [](const std::vector<T>& a, std::vector<U>& b) {
    for (size_t i = 0; i < a.size(); ++i) b[i] = static_cast<U>(a[i]);
  };
  copy(embed, out.embed);
  for (int l = 0; l < cfg.n_layers; ++l) {
    copy(layers[l].ln1_g, out.layers[l].ln1_g);
    copy(layers[l].wqkv, out.layers[l].wqkv);
    copy(layers[l].wo, out.layers[l].wo);
    copy(layers[l].ln2_g, out.layers[l].ln2_g);
    copy(layers[l].wup, out.layers[l].wup);
    copy(layers[l].wdown, out.layers[l].wdown);
  }
  copy(lnf_g, out.lnf_g);
  copy(unembed, out.unembed);
  return out;
}

template <typename T>
void rope_rotate(std::span<T> head_vec, int position, double base) {
  int dh = static_cast<int>(head_vec.size());
  int half = dh / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::pow(base, -2.0 * i / dh);
    double ang = position * freq;
    T c = static_cast<T>(std::cos(ang)), s = static_cast<T>(std::sin(ang));
    T a = head_vec[i], b = head_vec[i + half];
    head_vec[i] = a * c - b * s;
    head_vec[i + half] = a * s + b * c;
  }
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// Rational tanh approximation (|err| < 1e-6), clamped where tanh saturates.
// Branch-free and auto-vectorizable, unlike libm tanhf.
inline float fast_tanh(float x) {
  float cx = x < -7.90531110763549805f ? -7.90531110763549805f
             : (x > 7.90531110763549805f ? 7.90531110763549805f : x);
  float x2 = cx * cx;
  float p = cx * (x2 * (x2 * (x2 * (x2 * (x2 * (x2 * -2.76076847742355e-16f +
                                                2.00018790482477e-13f) +
                                           -8.60467152213735e-11f) +
                                      5.12229709037114e-08f) +
                                 1.48572235717979e-05f) +
                            6.37261928875436e-04f) +
                  4.89352455891786e-03f);
  float q = x2 * (x2 * (x2 * (x2 * 1.19825839466702e-06f + 1.18534705686654e-04f) +
                        2.26843463243900e-03f) +
                  1.18534705686654e-02f) +
            4.89352518554385e-03f;
  return p / q;
}
inline double fast_tanh(double x) { return std::tanh(x); }

// y = (x - mean) * rstd * g, row-wise over (rows, d)
template <typename T>
void layernorm_forward(const T* x, const T* g, int rows, int d, T* y, T* mean, T* rstd) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<size_t>(r) * d;
    T* yr = y + static_cast<size_t>(r) * d;
    double m = 0;
    for (int i = 0; i < d; ++i) m += xr[i];
    m /= d;
    double v = 0;
    for (int i = 0; i < d; ++i) {
      double c = xr[i] - m;
      v += c * c;
    }
    v /= d;
    double rs = 1.0 / std::sqrt(v + kLnEps);
    mean[r] = static_cast<T>(m);
    rstd[r] = static_cast<T>(rs);
    for (int i = 0; i < d; ++i) yr[i] = static_cast<T>((xr[i] - m) * rs * g[i]);
  }
}

// dx += backprop of dy through the norm; dg accumulated serially.
template <typename T>
void layernorm_backward(const T* x, const T* g, const T* mean, const T* rstd, const T* dy,
                        int rows, int d, T* dx, T* dg, bool accumulate_dx) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<size_t>(r) * d;
    const T* dyr = dy + static_cast<size_t>(r) * d;
    T* dxr = dx + static_cast<size_t>(r) * d;
    double m = mean[r], rs = rstd[r];
    double s1 = 0, s2 = 0;
    for (int i = 0; i < d; ++i) {
      double xhat = (xr[i] - m) * rs;
      double dxhat = static_cast<double>(dyr[i]) * g[i];
      s1 += dxhat;
      s2 += dxhat * xhat;
    }
    s1 /= d;
    s2 /= d;
    for (int i = 0; i < d; ++i) {
      double xhat = (xr[i] - m) * rs;
      double dxhat = static_cast<double>(dyr[i]) * g[i];
      double v = rs * (dxhat - s1 - xhat * s2);
      if (accumulate_dx) dxr[i] += static_cast<T>(v);
      else dxr[i] = static_cast<T>(v);
    }
  }
  if (dg) {
    for (int r = 0; r < rows; ++r) {
      const T* xr = x + static_cast<size_t>(r) * d;
      const T* dyr = dy + static_cast<size_t>(r) * d;
      double m = mean[r], rs = rstd[r];
      for (int i = 0; i < d; ++i) dg[i] += static_cast<T>(dyr[i] * (xr[i] - m) * rs);
    }
  }
}

template <typename T>
void gelu_forward(const T* x, int n, T* tanh_u, T* y) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    T v = x[i];
    T t = fast_tanh(static_cast<T>(kGeluC) * (v + static_cast<T>(kGeluA) * v * v * v));
    tanh_u[i] = t;
    y[i] = static_cast<T>(0.5) * v * (T(1) + t);
  }
}

template <typename T>
void gelu_backward(const T* x, const T* tanh_u, const T* dy, int n, T* dx) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    double v = x[i], t = tanh_u[i];
    double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    double g = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    dx[i] = static_cast<T>(dy[i] * g);
  }
}

}  // namespace

template <typename T>
Net<T>::Net(const ModelParams<T>& params) : params_(params) {
  params_.cfg.validate();
}

template <typename T>
void Net<T>::build_rope_tables(int len) {
  if (rope_len_ >= len) return;
  int dh = params_.cfg.head_dim();
  int half = dh / 2;
  rope_cos_.assign(static_cast<size_t>(len) * half, T(0));
  rope_sin_.assign(static_cast<size_t>(len) * half, T(0));
  for (int t = 0; t < len; ++t)
    for (int i = 0; i < half; ++i) {
      double ang = t * std::pow(params_.cfg.rope_base, -2.0 * i / dh);
      rope_cos_[static_cast<size_t>(t) * half + i] = static_cast<T>(std::cos(ang));
      rope_sin_[static_cast<size_t>(t) * half + i] = static_cast<T>(std::sin(ang));
    }
  rope_len_ = len;
}

template <typename T>
const std::vector<T>& Net<T>::forward(std::span<const int> tokens, int batch, int len,
                                      const std::vector<Hook<T>>& hooks,
                                      ActivationTrace<T>* trace, const TraceSpec& spec) {
  const ModelConfig& c = params_.cfg;
  if (len > c.max_seq_len) throw DataError("sequence exceeds max_seq_len");
  if (tokens.size() != static_cast<size_t>(batch) * len)
    throw DataError("token buffer does not match batch * len");
  for (int t : tokens)
    if (t < 0 || t >= c.vocab_size) throw DataError("token id out of vocabulary");

  batch_ = batch;
  len_ = len;
  tokens_.assign(tokens.begin(), tokens.end());
  hooks_ = hooks;
  for (const auto& h : hooks_) {
    if (h.layer < 0 || h.layer >= c.n_layers || h.position < 0 || h.position >= len ||
        (h.site == Hook<T>::Site::head && (h.head < 0 || h.head >= c.n_heads)))
      throw DataError("hook site out of range");
  }

  int d = c.d_model, H = c.n_heads, dh = c.head_dim(), dff = c.d_ff(), V = c.vocab_size;
  size_t rows = static_cast<size_t>(batch) * len;
  size_t plane = rows * d;

  ensure_size(resid_, plane * (c.n_layers + 1));
  work_.resize(static_cast<size_t>(c.n_layers));
  for (auto& w : work_) {
    ensure_size(w.ln1_out, plane);
    ensure_size(w.ln1_mean, rows);
    ensure_size(w.ln1_rstd, rows);
    ensure_size(w.qkv, plane * 3);
    ensure_size(w.attw, static_cast<size_t>(batch) * H * len * len);
    ensure_size(w.ctx, plane);
    ensure_size(w.attn_out, plane);
    ensure_size(w.x_mid, plane);
    ensure_size(w.ln2_out, plane);
    ensure_size(w.ln2_mean, rows);
    ensure_size(w.ln2_rstd, rows);
    ensure_size(w.mlp_pre, rows * dff);
    ensure_size(w.mlp_act, rows * dff);
  }
  ensure_size(lnf_out_, plane);
  ensure_size(lnf_mean_, rows);
  ensure_size(lnf_rstd_, rows);
  ensure_size(logits_, rows * V);

  if (trace) {
    trace->batch = batch;
    trace->seq_len = len;
    auto prep = [&](std::vector<std::vector<T>>& v, size_t n, bool on) {
      v.assign(on ? static_cast<size_t>(c.n_layers) : 0, {});
      for (auto& e : v) e.assign(n, T(0));
    };
    prep(trace->residual, plane, spec.residuals);
    prep(trace->attn_out, plane, spec.attn_out);
    prep(trace->head_out, plane * H, spec.head_out);
    prep(trace->attn_weights, static_cast<size_t>(batch) * H * len * len, spec.attn_weights);
  }

  build_rope_tables(len);

  // embedding lookup
  T* x0 = resid_.data();
  for (size_t r = 0; r < rows; ++r)
    std::memcpy(x0 + r * d, params_.embed.data() + static_cast<size_t>(tokens_[r]) * d,
                sizeof(T) * d);

  bool want_head_out = spec.head_out && trace;
  bool any_head_hooks = false;
  for (const auto& h : hooks_) any_head_hooks |= h.site == Hook<T>::Site::head;

  std::vector<T> head_buf;  // (H, T, d) per batch item when needed

  for (int l = 0; l < c.n_layers; ++l) {
    LayerWork& w = work_[l];
    const LayerParams<T>& lp = params_.layers[static_cast<size_t>(l)];
    const T* x = resid_.data() + static_cast<size_t>(l) * plane;
    T* x_next = resid_.data() + static_cast<size_t>(l + 1) * plane;

    layernorm_forward(x, lp.ln1_g.data(), static_cast<int>(rows), d, w.ln1_out.data(),
                      w.ln1_mean.data(), w.ln1_rstd.data());
    gemm(false, false, static_cast<int>(rows), 3 * d, d, T(1), w.ln1_out.data(), d,
         lp.wqkv.data(), 3 * d, T(0), w.qkv.data(), 3 * d);

    // rotary phases on q and k
    int half = dh / 2;
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < len; ++t) {
        T* base = w.qkv.data() + (static_cast<size_t>(b) * len + t) * 3 * d;
        const T* ct = rope_cos_.data() + static_cast<size_t>(t) * half;
        const T* st = rope_sin_.data() + static_cast<size_t>(t) * half;
        for (int h = 0; h < H; ++h) {
          for (int part = 0; part < 2; ++part) {
            T* v = base + static_cast<size_t>(part) * d + static_cast<size_t>(h) * dh;
            for (int i = 0; i < half; ++i) {
              T a = v[i], bb = v[i + half];
              v[i] = a * ct[i] - bb * st[i];
              v[i + half] = a * st[i] + bb * ct[i];
            }
          }
        }
      }

    // causal attention: scores and context as strided GEMMs over the
    // packed qkv buffer, softmax on the lower triangle
    T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
#pragma omp parallel for schedule(dynamic, 1) collapse(2)
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < H; ++h) {
        const T* qkv = w.qkv.data() + static_cast<size_t>(b) * len * 3 * d;
        const T* q = qkv + static_cast<size_t>(h) * dh;
        const T* k = qkv + d + static_cast<size_t>(h) * dh;
        const T* v = qkv + 2 * d + static_cast<size_t>(h) * dh;
        T* attw = w.attw.data() + (static_cast<size_t>(b) * H + h) * len * len;
        gemm_st(false, true, len, len, dh, inv_sqrt, q, 3 * d, k, 3 * d, T(0), attw, len);
        for (int t = 0; t < len; ++t) {
          T* row = attw + static_cast<size_t>(t) * len;
          T maxv = row[0];
          for (int s = 1; s <= t; ++s) maxv = std::max(maxv, row[s]);
          double denom = 0;
          for (int s = 0; s <= t; ++s) {
            double e = std::exp(static_cast<double>(row[s] - maxv));
            row[s] = static_cast<T>(e);
            denom += e;
          }
          T inv_denom = static_cast<T>(1.0 / denom);
          for (int s = 0; s <= t; ++s) row[s] *= inv_denom;
          for (int s = t + 1; s < len; ++s) row[s] = 0;
        }
        gemm_st(false, false, len, dh, len, T(1), attw, len, v, 3 * d, T(0),
                w.ctx.data() + static_cast<size_t>(b) * len * d + static_cast<size_t>(h) * dh,
                d);
      }

    if (want_head_out || any_head_hooks) {
      // per-head contributions through their slice of wo
      ensure_size(head_buf, static_cast<size_t>(H) * len * d);
      for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < H; ++h) {
          gemm_st(false, false, len, d, dh, T(1),
               w.ctx.data() + (static_cast<size_t>(b) * len) * d + static_cast<size_t>(h) * dh,
               d, lp.wo.data() + static_cast<size_t>(h) * dh * d, d, T(0),
               head_buf.data() + static_cast<size_t>(h) * len * d, d);
        }
        if (b == 0) {
          for (const auto& hk : hooks_) {
            if (hk.site == Hook<T>::Site::head && hk.layer == l)
              hk.edit(std::span<T>(head_buf.data() +
                                       static_cast<size_t>(hk.head) * len * d +
                                       static_cast<size_t>(hk.position) * d,
                                   d));
          }
        }
        if (want_head_out) {
          // trace layout (B, T, H, d)
          for (int h = 0; h < H; ++h)
            for (int t = 0; t < len; ++t)
              std::memcpy(trace->head_out[static_cast<size_t>(l)].data() +
                              ((static_cast<size_t>(b) * len + t) * H + h) * d,
                          head_buf.data() + (static_cast<size_t>(h) * len + t) * d,
                          sizeof(T) * d);
        }
        T* out = w.attn_out.data() + static_cast<size_t>(b) * len * d;
        std::memset(out, 0, sizeof(T) * static_cast<size_t>(len) * d);
        for (int h = 0; h < H; ++h) {
          const T* hb = head_buf.data() + static_cast<size_t>(h) * len * d;
          for (size_t i = 0; i < static_cast<size_t>(len) * d; ++i) out[i] += hb[i];
        }
      }
    } else {
      gemm(false, false, static_cast<int>(rows), d, d, T(1), w.ctx.data(), d, lp.wo.data(),
           d, T(0), w.attn_out.data(), d);
    }

    for (const auto& hk : hooks_)
      if (hk.site == Hook<T>::Site::attn_layer && hk.layer == l)
        hk.edit(std::span<T>(w.attn_out.data() + static_cast<size_t>(hk.position) * d, d));

#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(plane); ++i)
      w.x_mid[static_cast<size_t>(i)] = x[i] + w.attn_out[static_cast<size_t>(i)];

    layernorm_forward(w.x_mid.data(), lp.ln2_g.data(), static_cast<int>(rows), d,
                      w.ln2_out.data(), w.ln2_mean.data(), w.ln2_rstd.data());
    gemm(false, false, static_cast<int>(rows), dff, d, T(1), w.ln2_out.data(), d,
         lp.wup.data(), dff, T(0), w.mlp_pre.data(), dff);

    ensure_size(w.mlp_tanh, rows * dff);
    gelu_forward(w.mlp_pre.data(), static_cast<int>(rows * dff), w.mlp_tanh.data(),
                 w.mlp_act.data());
    gemm(false, false, static_cast<int>(rows), d, dff, T(1), w.mlp_act.data(), dff,
         lp.wdown.data(), d, T(0), x_next, d);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(plane); ++i)
      x_next[static_cast<size_t>(i)] += w.x_mid[static_cast<size_t>(i)];

    for (const auto& hk : hooks_)
      if (hk.site == Hook<T>::Site::residual && hk.layer == l)
        hk.edit(std::span<T>(x_next + static_cast<size_t>(hk.position) * d, d));

    if (trace) {
      if (spec.residuals)
        std::memcpy(trace->residual[static_cast<size_t>(l)].data(), x_next, sizeof(T) * plane);
      if (spec.attn_out)
        std::memcpy(trace->attn_out[static_cast<size_t>(l)].data(), w.attn_out.data(),
                    sizeof(T) * plane);
      if (spec.attn_weights)
        std::memcpy(trace->attn_weights[static_cast<size_t>(l)].data(), w.attw.data(),
                    sizeof(T) * static_cast<size_t>(batch) * H * len * len);
    }
  }

  const T* x_final = resid_.data() + static_cast<size_t>(c.n_layers) * plane;
  layernorm_forward(x_final, params_.lnf_g.data(), static_cast<int>(rows), d,
                    lnf_out_.data(), lnf_mean_.data(), lnf_rstd_.data());
  gemm(false, true, static_cast<int>(rows), V, d, T(1), lnf_out_.data(), d,
       params_.unembed.data(), d, T(0), logits_.data(), V);
  return logits_;
}

template <typename T>
T Net<T>::loss_and_grads(std::span<const int> tokens, int batch, int len,
                         ModelParams<T>& grads) {
  if (len < 2) throw DataError("next-token loss needs sequences of length >= 2");
  forward(tokens, batch, len);
  const ModelConfig& c = params_.cfg;
  int V = c.vocab_size;
  size_t rows = static_cast<size_t>(batch) * len;
  std::vector<T> dlogits(rows * V, T(0));

  long count = static_cast<long>(batch) * (len - 1);
  double loss = 0;
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t + 1 < len; ++t) {
      size_t r = static_cast<size_t>(b) * len + t;
      const T* lg = logits_.data() + r * V;
      int target = tokens_[r + 1];
      double maxv = lg[0];
      for (int i = 1; i < V; ++i) maxv = std::max<double>(maxv, lg[i]);
      double denom = 0;
      for (int i = 0; i < V; ++i) denom += std::exp(lg[i] - maxv);
      double logp = lg[target] - maxv - std::log(denom);
      loss -= logp;
      T* dl = dlogits.data() + r * V;
      for (int i = 0; i < V; ++i)
        dl[i] = static_cast<T>(std::exp(lg[i] - maxv) / denom / count);
      dl[target] -= static_cast<T>(1.0 / count);
    }
  }
  loss /= count;
  run_backward(dlogits, &grads, -1, -1, {});
  return static_cast<T>(loss);
}

template <typename T>
T Net<T>::backward_to_injection(int target_token, int layer, int position,
                                std::span<T> grad_out) {
  const ModelConfig& c = params_.cfg;
  bool found = false;
  for (const auto& h : hooks_)
    found |= h.site == Hook<T>::Site::attn_layer && h.layer == layer &&
             h.position == position && h.replaces;
  if (!found)
    throw DataError("backward_to_injection requires a replacing attn_layer hook from the "
                    "preceding forward");
  int V = c.vocab_size;
  size_t rows = static_cast<size_t>(batch_) * len_;
  std::vector<T> dlogits(rows * V, T(0));
  size_t r = static_cast<size_t>(len_) - 1;  // final position of sequence 0
  const T* lg = logits_.data() + r * V;
  double maxv = lg[0];
  for (int i = 1; i < V; ++i) maxv = std::max<double>(maxv, lg[i]);
  double denom = 0;
  for (int i = 0; i < V; ++i) denom += std::exp(lg[i] - maxv);
  double logp = lg[target_token] - maxv - std::log(denom);
  T* dl = dlogits.data() + r * V;
  for (int i = 0; i < V; ++i) dl[i] = static_cast<T>(std::exp(lg[i] - maxv) / denom);
  dl[target_token] -= T(1);
  run_backward(dlogits, nullptr, layer, position, grad_out);
  return static_cast<T>(-logp);
}

template <typename T>
void Net<T>::run_backward(const std::vector<T>& dlogits, ModelParams<T>* grads,
                          int probe_layer, int probe_position, std::span<T> probe_out) {
  const ModelConfig& c = params_.cfg;
  int d = c.d_model, H = c.n_heads, dh = c.head_dim(), dff = c.d_ff(), V = c.vocab_size;
  int batch = batch_, len = len_;
  size_t rows = static_cast<size_t>(batch) * len;
  size_t plane = rows * d;

  for (const auto& h : hooks_)
    if (h.site == Hook<T>::Site::head && h.replaces)
      throw DataError("backward through replaced head outputs is not supported");

  ensure_size(d_resid_, plane);
  ensure_size(d_tmp_, plane);
  ensure_size(d_qkv_, plane * 3);
  ensure_size(d_ctx_, plane);
  ensure_size(d_ff_a_, rows * dff);
  ensure_size(d_ff_b_, rows * dff);

  // unembedding and final norm
  if (grads)
    gemm(true, false, V, d, static_cast<int>(rows), T(1), dlogits.data(), V,
         lnf_out_.data(), d, T(1), grads->unembed.data(), d);
  gemm(false, false, static_cast<int>(rows), d, V, T(1), dlogits.data(), V,
       params_.unembed.data(), d, T(0), d_tmp_.data(), d);
  const T* x_final = resid_.data() + static_cast<size_t>(c.n_layers) * plane;
  layernorm_backward(x_final, params_.lnf_g.data(), lnf_mean_.data(), lnf_rstd_.data(),
                     d_tmp_.data(), static_cast<int>(rows), d, d_resid_.data(),
                     grads ? grads->lnf_g.data() : nullptr, false);

  for (int l = c.n_layers - 1; l >= 0; --l) {
    LayerWork& w = work_[static_cast<size_t>(l)];
    const LayerParams<T>& lp = params_.layers[static_cast<size_t>(l)];
    LayerParams<T>* lg = grads ? &grads->layers[static_cast<size_t>(l)] : nullptr;
    const T* x = resid_.data() + static_cast<size_t>(l) * plane;

    // a replacing residual hook cuts the gradient into this block's output
    for (const auto& hk : hooks_)
      if (hk.site == Hook<T>::Site::residual && hk.layer == l && hk.replaces)
        std::fill_n(d_resid_.data() + static_cast<size_t>(hk.position) * d, d, T(0));

    // MLP backward: d_resid is the gradient at x_next
    if (lg)
      gemm(true, false, dff, d, static_cast<int>(rows), T(1), w.mlp_act.data(), dff,
           d_resid_.data(), d, T(1), lg->wdown.data(), d);
    gemm(false, true, static_cast<int>(rows), dff, d, T(1), d_resid_.data(), d,
         lp.wdown.data(), d, T(0), d_ff_a_.data(), dff);
    gelu_backward(w.mlp_pre.data(), w.mlp_tanh.data(), d_ff_a_.data(),
                  static_cast<int>(rows * dff), d_ff_b_.data());
    if (lg)
      gemm(true, false, d, dff, static_cast<int>(rows), T(1), w.ln2_out.data(), d,
           d_ff_b_.data(), dff, T(1), lg->wup.data(), dff);
    gemm(false, true, static_cast<int>(rows), d, dff, T(1), d_ff_b_.data(), dff,
         lp.wup.data(), dff, T(0), d_tmp_.data(), d);
    // d_resid becomes gradient at x_mid: residual add + norm path
    layernorm_backward(w.x_mid.data(), lp.ln2_g.data(), w.ln2_mean.data(),
                       w.ln2_rstd.data(), d_tmp_.data(), static_cast<int>(rows), d,
                       d_resid_.data(), lg ? lg->ln2_g.data() : nullptr, true);

    // gradient at the attention output (post-hook value)
    if (probe_layer == l && !probe_out.empty()) {
      const T* src = d_resid_.data() + static_cast<size_t>(probe_position) * d;
      for (int i = 0; i < d; ++i) probe_out[i] = src[i];
    }
    // replacing attn hooks: upstream attention produced nothing at that row
    bool attn_cut = false;
    for (const auto& hk : hooks_)
      attn_cut |= hk.site == Hook<T>::Site::attn_layer && hk.layer == l && hk.replaces;
    const T* d_attn = d_resid_.data();
    std::vector<T> d_attn_cutbuf;
    if (attn_cut) {
      d_attn_cutbuf.assign(d_resid_.begin(), d_resid_.begin() + static_cast<long>(plane));
      for (const auto& hk : hooks_)
        if (hk.site == Hook<T>::Site::attn_layer && hk.layer == l && hk.replaces)
          std::fill_n(d_attn_cutbuf.data() + static_cast<size_t>(hk.position) * d, d, T(0));
      d_attn = d_attn_cutbuf.data();
    }

    if (lg)
      gemm(true, false, d, d, static_cast<int>(rows), T(1), w.ctx.data(), d, d_attn, d,
           T(1), lg->wo.data(), d);
    gemm(false, true, static_cast<int>(rows), d, d, T(1), d_attn, d, lp.wo.data(), d, T(0),
         d_ctx_.data(), d);

    std::fill(d_qkv_.begin(), d_qkv_.begin() + static_cast<long>(plane * 3), T(0));
    T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    ensure_size(d_attw_, static_cast<size_t>(omp_get_max_threads()) * len * len);
#pragma omp parallel for schedule(dynamic, 1) collapse(2)
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < H; ++h) {
        const T* qkv = w.qkv.data() + static_cast<size_t>(b) * len * 3 * d;
        const T* q = qkv + static_cast<size_t>(h) * dh;
        const T* k = qkv + d + static_cast<size_t>(h) * dh;
        const T* v = qkv + 2 * d + static_cast<size_t>(h) * dh;
        T* dq = d_qkv_.data() + static_cast<size_t>(b) * len * 3 * d + static_cast<size_t>(h) * dh;
        T* dk = dq + d;
        T* dv = dq + 2 * d;
        const T* attw = w.attw.data() + (static_cast<size_t>(b) * H + h) * len * len;
        const T* dctx = d_ctx_.data() + static_cast<size_t>(b) * len * d + static_cast<size_t>(h) * dh;
        T* dattw = d_attw_.data() + static_cast<size_t>(omp_get_thread_num()) * len * len;
        // dV = attw^T dctx ; dAttw = dctx V^T
        gemm_st(true, false, len, dh, len, T(1), attw, len, dctx, d, T(1), dv, 3 * d);
        gemm_st(false, true, len, len, dh, T(1), dctx, d, v, 3 * d, T(0), dattw, len);
        // softmax backward onto the scaled scores; zeros above the
        // diagonal survive because attw is zero there
        for (int t = 0; t < len; ++t) {
          const T* arow = attw + static_cast<size_t>(t) * len;
          T* drow = dattw + static_cast<size_t>(t) * len;
          double dot_sum = 0;
          for (int s = 0; s <= t; ++s) dot_sum += static_cast<double>(drow[s]) * arow[s];
          for (int s = 0; s <= t; ++s)
            drow[s] = static_cast<T>(arow[s] * (drow[s] - dot_sum)) * inv_sqrt;
          for (int s = t + 1; s < len; ++s) drow[s] = 0;
        }
        // dQ += dScores K ; dK += dScores^T Q
        gemm_st(false, false, len, dh, len, T(1), dattw, len, k, 3 * d, T(1), dq, 3 * d);
        gemm_st(true, false, len, dh, len, T(1), dattw, len, q, 3 * d, T(1), dk, 3 * d);
      }

    // inverse rotation on dq, dk
    int half_bwd = dh / 2;
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < len; ++t) {
        T* base = d_qkv_.data() + (static_cast<size_t>(b) * len + t) * 3 * d;
        const T* ct = rope_cos_.data() + static_cast<size_t>(t) * half_bwd;
        const T* st = rope_sin_.data() + static_cast<size_t>(t) * half_bwd;
        for (int h = 0; h < H; ++h) {
          for (int rot_part = 0; rot_part < 2; ++rot_part) {
            T* v = base + static_cast<size_t>(rot_part) * d + static_cast<size_t>(h) * dh;
            for (int i = 0; i < half_bwd; ++i) {
              T a = v[i], bb = v[i + half_bwd];
              v[i] = a * ct[i] + bb * st[i];
              v[i + half_bwd] = -a * st[i] + bb * ct[i];
            }
          }
        }
      }

    if (lg)
      gemm(true, false, d, 3 * d, static_cast<int>(rows), T(1), w.ln1_out.data(), d,
           d_qkv_.data(), 3 * d, T(1), lg->wqkv.data(), 3 * d);
    gemm(false, true, static_cast<int>(rows), d, 3 * d, T(1), d_qkv_.data(), 3 * d,
         lp.wqkv.data(), 3 * d, T(0), d_tmp_.data(), d);
    // gradient at x: the attention residual path plus the norm path
    layernorm_backward(x, lp.ln1_g.data(), w.ln1_mean.data(), w.ln1_rstd.data(),
                       d_tmp_.data(), static_cast<int>(rows), d, d_resid_.data(),
                       lg ? lg->ln1_g.data() : nullptr, true);
  }

  if (grads) {
    for (size_t r = 0; r < rows; ++r) {
      T* dst = grads->embed.data() + static_cast<size_t>(tokens_[r]) * d;
      const T* src = d_resid_.data() + r * d;
      for (int i = 0; i < d; ++i) dst[i] += src[i];
    }
  }
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template class Net<float>;
template class Net<double>;
template void rope_rotate<float>(std::span<float>, int, double);
template void rope_rotate<double>(std::span<double>, int, double);

}  // namespace icalab::model
