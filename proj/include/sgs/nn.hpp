#pragma once
// Model building blocks on top of the tensor engine: parameter registry,
// linear layers, the shared transformer layer, Adam, and a central-difference
// gradient checker.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgs/rng.hpp"
#include "sgs/tensor.hpp"

namespace sgs {

// Ordered name -> tensor registry. Iteration order is insertion order, which
// fixes the optimizer update order and the checkpoint layout.
template <class S>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  void add(const std::string& name, const Tensor<S>& t) {
    for (auto& [n, _] : items)
      if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
    items.emplace_back(name, t);
  }

  Tensor<S>* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  std::vector<Tensor<S>> tensors() const {
    std::vector<Tensor<S>> out;
    out.reserve(items.size());
    for (auto& [n, t] : items) out.push_back(t);
    return out;
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (auto& [name, t] : items) n += t.numel();
    return n;
  }
};

template <class S>
Tensor<S> normal_param(Shape shape, Rng& rng, double stddev = 0.02) {
  auto t = Tensor<S>::zeros(std::move(shape), true);
  auto v = t.mutable_value();
  for (auto& x : v) x = static_cast<S>(rng.normal() * stddev);
  return t;
}

template <class S>
Tensor<S> zeros_param(Shape shape) {
  return Tensor<S>::zeros(std::move(shape), true);
}

template <class S>
Tensor<S> ones_param(Shape shape) {
  return Tensor<S>::filled(std::move(shape), S(1), true);
}

// ---------------------------------------------------------------------------
// Linear layer
// ---------------------------------------------------------------------------

template <class S>
struct Linear {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out], absent when use_bias is false
  bool use_bias = true;

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool with_bias = true)
      : w(normal_param<S>({in, out}, rng)), use_bias(with_bias) {
    if (use_bias) b = zeros_param<S>({out});
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return use_bias ? add_rowwise(matmul(x, w), b) : matmul(x, w);
  }

  void collect(ParamMap<S>& map, const std::string& prefix) const {
    map.add(prefix + ".w", w);
    if (use_bias) map.add(prefix + ".b", b);
  }
};

// ---------------------------------------------------------------------------
// Transformer layer
//
// Post-norm composition: multi-head attention, residual add, layer norm,
// two-layer feed-forward, residual add, layer norm. Per-token encodings,
// when supplied, are added to the attention queries and keys only; the value
// path and the residual stream see the raw input.
// ---------------------------------------------------------------------------

struct TransformerLayerConfig {
  int dim = 32;
  int heads = 4;
  int ffn_mult = 4;
  bool causal = false;
  bool use_norm = true;
  double ln_eps = 1e-5;
};

template <class S>
struct TransformerLayer {
  TransformerLayerConfig cfg;
  Linear<S> wq, wk, wv, wo;
  Linear<S> ff1, ff2;
  Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;

  TransformerLayer() = default;
  TransformerLayer(TransformerLayerConfig config, Rng& rng) : cfg(config) {
    if (cfg.dim <= 0 || cfg.heads <= 0 || cfg.dim % cfg.heads != 0)
      throw std::invalid_argument("transformer layer: dim must be a positive multiple of heads");
    wq = Linear<S>(cfg.dim, cfg.dim, rng);
    // No key bias: it shifts every attention logit in a row by the same
    // amount and row softmax cancels constant shifts, so the parameter
    // could never receive gradient or affect the output.
    wk = Linear<S>(cfg.dim, cfg.dim, rng, /*with_bias=*/false);
    wv = Linear<S>(cfg.dim, cfg.dim, rng);
    wo = Linear<S>(cfg.dim, cfg.dim, rng);
    ff1 = Linear<S>(cfg.dim, cfg.dim * cfg.ffn_mult, rng);
    ff2 = Linear<S>(cfg.dim * cfg.ffn_mult, cfg.dim, rng);
    ln1_g = ones_param<S>({cfg.dim});
    ln1_b = zeros_param<S>({cfg.dim});
    ln2_g = ones_param<S>({cfg.dim});
    ln2_b = zeros_param<S>({cfg.dim});
  }

  // x: [n, dim]; encodings (optional): [n, dim], added to queries and keys.
  Tensor<S> operator()(const Tensor<S>& x, const Tensor<S>* encodings = nullptr) const {
    require_rank(x, 2, "transformer_layer");
    if (x.extent(1) != cfg.dim)
      throw std::invalid_argument("transformer_layer: input dim mismatch");
    if (encodings && encodings->shape() != x.shape())
      throw std::invalid_argument("transformer_layer: encoding shape mismatch");

    Tensor<S> qk_in = encodings ? add(x, *encodings) : x;
    Tensor<S> q = wq(qk_in);
    Tensor<S> k = wk(qk_in);
    Tensor<S> v = wv(x);

    const int dh = cfg.dim / cfg.heads;
    std::vector<Tensor<S>> heads;
    heads.reserve(static_cast<size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      auto qh = slice_cols(q, h * dh, dh);
      auto kh = slice_cols(k, h * dh, dh);
      auto vh = slice_cols(v, h * dh, dh);
      heads.push_back(scaled_dot_attention(qh, kh, vh, cfg.causal));
    }
    Tensor<S> attn = wo(concat_cols(heads));

    Tensor<S> h1 = add(x, attn);
    if (cfg.use_norm) h1 = layer_norm(h1, ln1_g, ln1_b, S(cfg.ln_eps));
    Tensor<S> ff = ff2(gelu(ff1(h1)));
    Tensor<S> h2 = add(h1, ff);
    if (cfg.use_norm) h2 = layer_norm(h2, ln2_g, ln2_b, S(cfg.ln_eps));
    return h2;
  }

  void collect(ParamMap<S>& map, const std::string& prefix) const {
    wq.collect(map, prefix + ".wq");
    wk.collect(map, prefix + ".wk");
    wv.collect(map, prefix + ".wv");
    wo.collect(map, prefix + ".wo");
    ff1.collect(map, prefix + ".ff1");
    ff2.collect(map, prefix + ".ff2");
    map.add(prefix + ".ln1.g", ln1_g);
    map.add(prefix + ".ln1.b", ln1_b);
    map.add(prefix + ".ln2.g", ln2_g);
    map.add(prefix + ".ln2.b", ln2_b);
  }

  void zero_all_weights() {
    for (Linear<S>* lin : {&wq, &wk, &wv, &wo, &ff1, &ff2}) {
      auto wv_ = lin->w.mutable_value();
      std::fill(wv_.begin(), wv_.end(), S(0));
      if (!lin->use_bias) continue;
      auto bv_ = lin->b.mutable_value();
      std::fill(bv_.begin(), bv_.end(), S(0));
    }
  }
};

// Mean squared deviation per element.
template <class S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
  auto d = sub(a, b);
  return mean_all(mul(d, d));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class S>
class Adam {
 public:
  Adam(ParamMap<S> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, t] : params_.items) {
      m_.emplace_back(t.numel(), S(0));
      v_.emplace_back(t.numel(), S(0));
    }
  }

  // Applies one update from the accumulated gradients, then clears them.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t p = 0; p < params_.items.size(); ++p) {
      auto& tensor = params_.items[p].second;
      auto val = tensor.mutable_value();
      auto grad = tensor.mutable_grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (size_t i = 0; i < val.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        m[i] = static_cast<S>(beta1_ * m[i] + (1.0 - beta1_) * g);
        v[i] = static_cast<S>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
        const double mh = static_cast<double>(m[i]) / bc1;
        const double vh = static_cast<double>(v[i]) / bc2;
        val[i] = static_cast<S>(val[i] - lr_ * mh / (std::sqrt(vh) + eps_));
      }
      tensor.zero_grad();
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  const ParamMap<S>& params() const { return params_; }

 private:
  ParamMap<S> params_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<S>> m_, v_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
  size_t param_index = 0;
  size_t element = 0;
  double analytic = 0;
  double numeric = 0;
};

// Compares reverse-mode gradients against central finite differences for
// every element of every parameter. Returns the maximum relative error
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <class S, class F>
double grad_check(F&& f, std::vector<Tensor<S>> params, double eps,
                  GradCheckReport* report = nullptr) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor<S> loss = f();
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  backward(loss);

  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  double max_rel = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    auto vals = params[p].mutable_value();
    for (size_t i = 0; i < vals.size(); ++i) {
      const S saved = vals[i];
      double lp, lm;
      {
        NoGradGuard ng;
        vals[i] = static_cast<S>(saved + eps);
        lp = static_cast<double>(f().item());
        vals[i] = static_cast<S>(saved - eps);
        lm = static_cast<double>(f().item());
      }
      vals[i] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw std::runtime_error("grad_check: non-finite loss during finite differences");
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[p][i]);
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > max_rel) {
        max_rel = rel;
        if (report) *report = GradCheckReport{p, i, a, numeric};
      }
    }
  }
  return max_rel;
}

template <class S>
void zero_grads(ParamMap<S>& params) {
  for (auto& [name, t] : params.items) t.zero_grad();
}

}  // namespace sgs
