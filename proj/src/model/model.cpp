#include "ctaf/model/model.hpp"

#include <cmath>
#include <numbers>

#include "ctaf/common/errors.hpp"

namespace ctaf::model {

using num::Graph;
using num::Rng;
using num::Tensor;
using num::Var;

void ModelConfig::validate() const {
  if (eeg_channels == 0 || phys_channels == 0)
    throw ConfigError("model: channel counts must be positive");
  if (d == 0 || heads == 0 || d % heads != 0)
    throw ConfigError("model: d must be a positive multiple of heads");
  if (layers == 0) throw ConfigError("model: layers must be >= 1");
  if (conv_k == 0 || conv_k % 2 == 0)
    throw ConfigError("model: conv_k must be odd");
  if (time_freqs == 0) throw ConfigError("model: time_freqs must be >= 1");
  if (!(base_period > 0.0))
    throw ConfigError("model: base_period must be positive");
  if (proj_dim == 0) throw ConfigError("model: proj_dim must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"eeg_channels", c.eeg_channels},
                     {"phys_channels", c.phys_channels},
                     {"d", c.d},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"conv_k", c.conv_k},
                     {"time_freqs", c.time_freqs},
                     {"base_period", c.base_period},
                     {"use_time", c.use_time},
                     {"concat_time", c.concat_time},
                     {"proj_dim", c.proj_dim}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.eeg_channels = j.value("eeg_channels", c.eeg_channels);
  c.phys_channels = j.value("phys_channels", c.phys_channels);
  c.d = j.value("d", c.d);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.conv_k = j.value("conv_k", c.conv_k);
  c.time_freqs = j.value("time_freqs", c.time_freqs);
  c.base_period = j.value("base_period", c.base_period);
  c.use_time = j.value("use_time", c.use_time);
  c.concat_time = j.value("concat_time", c.concat_time);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
}

Tensor time_features(const std::vector<double>& t, std::size_t freqs,
                     double base_period) {
  Tensor out({t.size(), 2 * freqs});
  double w0 = 2.0 * std::numbers::pi / base_period;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double w = w0;
    for (std::size_t f = 0; f < freqs; ++f) {
      out.at2(i, 2 * f) = std::sin(t[i] * w);
      out.at2(i, 2 * f + 1) = std::cos(t[i] * w);
      w *= 2.0;
    }
  }
  return out;
}

BatchInputs make_inputs(const data::Batch& batch) {
  const std::size_t B = batch.windows.size();
  BatchInputs in;
  in.batch = B;
  in.s_e = batch.se;
  in.s_p = batch.sp;
  const std::size_t ce = B ? batch.windows[0].eeg.channels() : 0;
  const std::size_t cp = B ? batch.windows[0].phys.channels() : 0;
  in.x_e = Tensor({B, batch.se, ce});
  in.t_e = Tensor({B, batch.se});
  in.m_e = Tensor({B, batch.se});
  in.x_p = Tensor({B, batch.sp, cp});
  in.t_p = Tensor({B, batch.sp});
  in.m_p = Tensor({B, batch.sp});
  in.y = Tensor({B, 2});
  in.has_label.assign(B, false);
  for (std::size_t w = 0; w < B; ++w) {
    const data::ClipWindow& cw = batch.windows[w];
    for (std::size_t s = 0; s < batch.se; ++s) {
      for (std::size_t c = 0; c < ce; ++c)
        in.x_e.at3(w, s, c) = cw.eeg.X.at2(s, c);
      in.t_e.at2(w, s) = cw.eeg.t[s] - cw.win_start;
      in.m_e.at2(w, s) = cw.eeg.m[s];
    }
    for (std::size_t s = 0; s < batch.sp; ++s) {
      for (std::size_t c = 0; c < cp; ++c)
        in.x_p.at3(w, s, c) = cw.phys.X.at2(s, c);
      in.t_p.at2(w, s) = cw.phys.t[s] - cw.win_start;
      in.m_p.at2(w, s) = cw.phys.m[s];
    }
    if (cw.label) {
      in.has_label[w] = true;
      in.y.at2(w, 0) = cw.label->arousal;
      in.y.at2(w, 1) = cw.label->valence;
    }
  }
  return in;
}

Var TapeContext::P(const std::string& name) {
  auto it = bound.find(name);
  if (it != bound.end()) return it->second;
  Var v = g.leaf(params.get(name), true, name);
  bound.emplace(name, v);
  return v;
}

std::map<std::string, Tensor> TapeContext::take_grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : bound)
    if (g.has_grad(var)) out.emplace(name, g.grad(var));
  return out;
}

namespace {

Tensor normal_init(Rng rng, std::vector<std::size_t> shape, double std_dev) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std_dev);
  return t;
}

void add_linear(num::ParamStore& ps, const Rng& root, const std::string& name,
                std::size_t in, std::size_t out, bool bias = true,
                double bias_std = 0.0) {
  ps.add(name + ".w",
         normal_init(root.derive(name + ".w"), {in, out}, 1.0 / std::sqrt(double(in))));
  if (bias) {
    ps.add(name + ".b", bias_std > 0.0
                            ? normal_init(root.derive(name + ".b"), {out}, bias_std)
                            : Tensor::full({out}, 0.0));
  }
}

void add_layer_norm(num::ParamStore& ps, const std::string& name, std::size_t d) {
  ps.add(name + ".g", Tensor::full({d}, 1.0));
  ps.add(name + ".b", Tensor::full({d}, 0.0));
}

void add_encoder(num::ParamStore& ps, const Rng& root, const ModelConfig& cfg,
                 const std::string& name, std::size_t channels) {
  const std::size_t in_dim =
      cfg.concat_time ? channels + 2 * cfg.time_freqs : channels;
  add_linear(ps, root, name + ".in", in_dim, cfg.d);
  if (!cfg.concat_time)
    add_linear(ps, root, name + ".time", 2 * cfg.time_freqs, cfg.d, false);
  ps.add(name + ".conv.w",
         normal_init(root.derive(name + ".conv.w"), {cfg.conv_k, cfg.d, cfg.d},
                     1.0 / std::sqrt(double(cfg.conv_k * cfg.d))));
  ps.add(name + ".conv.b", Tensor::full({cfg.d}, 0.0));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = name + ".l" + std::to_string(l);
    add_layer_norm(ps, lp + ".ln1", cfg.d);
    add_linear(ps, root, lp + ".attn.q", cfg.d, cfg.d);
    add_linear(ps, root, lp + ".attn.k", cfg.d, cfg.d);
    add_linear(ps, root, lp + ".attn.v", cfg.d, cfg.d);
    add_linear(ps, root, lp + ".attn.o", cfg.d, cfg.d);
    add_layer_norm(ps, lp + ".ln2", cfg.d);
    add_linear(ps, root, lp + ".ffn.1", cfg.d, 4 * cfg.d);
    add_linear(ps, root, lp + ".ffn.2", 4 * cfg.d, cfg.d);
  }
  add_layer_norm(ps, name + ".out", cfg.d);
}

// Head biases start non-zero so a zero input row still lands away from the
// normalization singularity (the bias path keeps the pre-normalized output
// off the origin).
void add_head(num::ParamStore& ps, const Rng& root, const std::string& name,
              std::size_t in, std::size_t hidden, std::size_t out) {
  add_linear(ps, root, name + ".1", in, hidden, true, 0.1);
  add_linear(ps, root, name + ".2", hidden, out, true, 0.1);
}

Tensor broadcast_mask(const Tensor& m, std::size_t depth) {
  const std::size_t B = m.dim(0), S = m.dim(1);
  Tensor out({B, S, depth});
  for (std::size_t w = 0; w < B; ++w)
    for (std::size_t s = 0; s < S; ++s) {
      const double v = m.at2(w, s);
      for (std::size_t c = 0; c < depth; ++c) out.at3(w, s, c) = v;
    }
  return out;
}

// [B, Sq, Sk] tensor whose row (w, s, :) is m_q(w, s).
Tensor query_mask(const Tensor& mq, std::size_t sk) {
  const std::size_t B = mq.dim(0), Sq = mq.dim(1);
  Tensor out({B, Sq, sk});
  for (std::size_t w = 0; w < B; ++w)
    for (std::size_t s = 0; s < Sq; ++s) {
      const double v = mq.at2(w, s);
      for (std::size_t u = 0; u < sk; ++u) out.at3(w, s, u) = v;
    }
  return out;
}

std::vector<bool> empty_windows(const Tensor& m) {
  const std::size_t B = m.dim(0), S = m.dim(1);
  std::vector<bool> empty(B, false);
  for (std::size_t w = 0; w < B; ++w) {
    double sum = 0.0;
    for (std::size_t s = 0; s < S; ++s) sum += m.at2(w, s);
    empty[w] = (sum == 0.0);
  }
  return empty;
}

struct Fwd {
  TapeContext& ctx;
  const ModelConfig& cfg;

  Graph& g() { return ctx.g; }

  Var linear(Var x, const std::string& name) {
    return g().add_bias(g().matmul(x, ctx.P(name + ".w")), ctx.P(name + ".b"));
  }

  Var layer_norm(Var x, const std::string& name) {
    return g().layer_norm(x, ctx.P(name + ".g"), ctx.P(name + ".b"));
  }

  Var self_attention(Var h, const Tensor& mask, const std::string& name) {
    const int heads = static_cast<int>(cfg.heads);
    const double dh = double(cfg.d) / double(cfg.heads);
    Var q = g().split_heads(linear(h, name + ".q"), heads);
    Var k = g().split_heads(linear(h, name + ".k"), heads);
    Var v = g().split_heads(linear(h, name + ".v"), heads);
    Var logits = g().scale(g().bmm_nt(q, k), 1.0 / std::sqrt(dh));
    Var attn = g().masked_softmax(logits, mask, heads);
    Var mixed = g().merge_heads(g().bmm(attn, v), heads);
    return linear(mixed, name + ".o");
  }

  // Cross-attention carries no biases so that a direction with no valid
  // keys contributes exactly zero and the residual survives unchanged.
  Var cross_attention(Var hq, Var hk, const Tensor& key_mask,
                      const std::string& name, Var* align) {
    const int heads = static_cast<int>(cfg.heads);
    const double dh = double(cfg.d) / double(cfg.heads);
    Var q = g().split_heads(g().matmul(hq, ctx.P(name + ".q.w")), heads);
    Var k = g().split_heads(g().matmul(hk, ctx.P(name + ".k.w")), heads);
    Var v = g().split_heads(g().matmul(hk, ctx.P(name + ".v.w")), heads);
    Var logits = g().scale(g().bmm_nt(q, k), 1.0 / std::sqrt(dh));
    Var attn = g().masked_softmax(logits, key_mask, heads);
    *align = g().head_mean(attn, heads);
    Var mixed = g().merge_heads(g().bmm(attn, v), heads);
    return g().add(hq, g().matmul(mixed, ctx.P(name + ".o.w")));
  }

  Var encode(const std::string& name, Var x, const Tensor& t,
             const Tensor& mask) {
    const std::size_t B = t.dim(0), S = t.dim(1);
    Tensor phi({B, S, 2 * cfg.time_freqs});
    if (cfg.use_time) {
      for (std::size_t w = 0; w < B; ++w) {
        std::vector<double> tw(S);
        for (std::size_t s = 0; s < S; ++s) tw[s] = t.at2(w, s);
        Tensor f = time_features(tw, cfg.time_freqs, cfg.base_period);
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t c = 0; c < 2 * cfg.time_freqs; ++c)
            phi.at3(w, s, c) = f.at2(s, c);
      }
    }
    Var phic = g().constant(std::move(phi), name + ".phi");
    Var h;
    if (cfg.concat_time) {
      h = linear(g().concat_last(x, phic), name + ".in");
    } else {
      h = g().add(linear(x, name + ".in"),
                  g().matmul(phic, ctx.P(name + ".time.w")));
    }
    h = g().add_bias(g().conv1d_masked(h, mask, ctx.P(name + ".conv.w")),
                     ctx.P(name + ".conv.b"));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string lp = name + ".l" + std::to_string(l);
      h = g().add(h, self_attention(layer_norm(h, lp + ".ln1"), mask,
                                    lp + ".attn"));
      Var f = layer_norm(h, lp + ".ln2");
      f = linear(g().gelu(linear(f, lp + ".ffn.1")), lp + ".ffn.2");
      h = g().add(h, f);
    }
    return layer_norm(h, name + ".out");
  }

  // 2-layer MLP head followed by row normalization; returns the
  // pre-normalization output through `pre`.
  Var project(Var x, const std::string& name, Var* pre) {
    Var hidden = g().gelu(linear(x, name + ".1"));
    Var out = linear(hidden, name + ".2");
    if (pre) *pre = out;
    return g().l2norm_rows(out);
  }

  // Replaces rows of z for windows with no valid token by the learned
  // substitute vector.
  Var substitute_empty(Var z, const std::vector<bool>& empty,
                       const std::string& null_name) {
    const std::size_t B = node_rows(z);
    bool any = false;
    for (bool e : empty) any = any || e;
    if (!any) return z;
    Tensor keep({B, cfg.d}), drop({B, cfg.d});
    for (std::size_t w = 0; w < B; ++w)
      for (std::size_t c = 0; c < cfg.d; ++c) {
        keep.at2(w, c) = empty[w] ? 0.0 : 1.0;
        drop.at2(w, c) = empty[w] ? 1.0 : 0.0;
      }
    Var null_rows = g().add_bias(
        g().constant(Tensor::full({B, cfg.d}, 0.0)), ctx.P(null_name));
    return g().add(g().mul(z, g().constant(std::move(keep))),
                   g().mul(null_rows, g().constant(std::move(drop))));
  }

  std::size_t node_rows(Var v) { return g().val(v).dim(0); }
};

}  // namespace

void CtafModel::init(const ModelConfig& config, const Rng& root) {
  config.validate();
  cfg = config;
  params = num::ParamStore{};
  const Rng init = root.derive("model.init");
  add_encoder(params, init, cfg, "enc_e", cfg.eeg_channels);
  add_encoder(params, init, cfg, "enc_p", cfg.phys_channels);
  for (const char* dir : {"cross.e2p", "cross.p2e"}) {
    for (const char* m : {".q", ".k", ".v", ".o"}) {
      const std::string name = std::string(dir) + m + ".w";
      params.add(name, normal_init(init.derive(name), {cfg.d, cfg.d},
                                   1.0 / std::sqrt(double(cfg.d))));
    }
  }
  params.add("pool.q", normal_init(init.derive("pool.q"), {cfg.d},
                                   1.0 / std::sqrt(double(cfg.d))));
  params.add("null.e", normal_init(init.derive("null.e"), {cfg.d},
                                   1.0 / std::sqrt(double(cfg.d))));
  params.add("null.p", normal_init(init.derive("null.p"), {cfg.d},
                                   1.0 / std::sqrt(double(cfg.d))));
  add_linear(params, init, "gate.1", 2 * cfg.d, cfg.d);
  add_linear(params, init, "gate.2", cfg.d, cfg.d);
  add_head(params, init, "head_e", cfg.d, cfg.d, cfg.proj_dim);
  add_head(params, init, "head_p", cfg.d, cfg.d, cfg.proj_dim);
  add_head(params, init, "head_f", cfg.d, cfg.d, cfg.proj_dim);
  add_head(params, init, "head_tok_e", cfg.d, cfg.d, cfg.proj_dim);
  add_head(params, init, "head_tok_p", cfg.d, cfg.d, cfg.proj_dim);
  add_head(params, init, "sup", cfg.d, cfg.d, 2);
}

Var CtafModel::encode(TapeContext& ctx, const std::string& stream, Var x,
                      const Tensor& t, const Tensor& mask) const {
  Fwd f{ctx, cfg};
  return f.encode(stream == "e" ? "enc_e" : "enc_p", x, t, mask);
}

ForwardVars CtafModel::forward(TapeContext& ctx, const BatchInputs& in) const {
  if (in.batch == 0) throw DataError("forward: empty batch");
  if (in.s_e != in.s_p)
    throw DataError(
        "forward: fused token combination needs equal sequence lengths, got " +
        std::to_string(in.s_e) + " vs " + std::to_string(in.s_p));
  Fwd f{ctx, cfg};
  Graph& g = ctx.g;
  const std::size_t B = in.batch, S = in.s_e;

  ForwardVars out;
  out.empty_e = empty_windows(in.m_e);
  out.empty_p = empty_windows(in.m_p);
  for (std::size_t w = 0; w < B; ++w) {
    if (out.empty_e[w] && out.empty_p[w])
      throw DataError("forward: window " + std::to_string(w) +
                      " has no valid token in either modality");
    out.fallback_e2p = out.fallback_e2p || out.empty_p[w];
    out.fallback_p2e = out.fallback_p2e || out.empty_e[w];
  }

  out.x_e = ctx.inputs_need_grad ? g.leaf(in.x_e, true, "x_e")
                                 : g.constant(in.x_e, "x_e");
  out.x_p = ctx.inputs_need_grad ? g.leaf(in.x_p, true, "x_p")
                                 : g.constant(in.x_p, "x_p");
  out.h_e = f.encode("enc_e", out.x_e, in.t_e, in.m_e);
  out.h_p = f.encode("enc_p", out.x_p, in.t_p, in.m_p);

  Var a_e2p_raw, a_p2e_raw;
  Var ht_e_raw =
      f.cross_attention(out.h_e, out.h_p, in.m_p, "cross.e2p", &a_e2p_raw);
  Var ht_p_raw =
      f.cross_attention(out.h_p, out.h_e, in.m_e, "cross.p2e", &a_p2e_raw);
  out.a_e2p = g.mul(a_e2p_raw, g.constant(query_mask(in.m_e, in.s_p)));
  out.a_p2e = g.mul(a_p2e_raw, g.constant(query_mask(in.m_p, in.s_e)));
  out.ht_e = g.mul(ht_e_raw, g.constant(broadcast_mask(in.m_e, cfg.d)));
  out.ht_p = g.mul(ht_p_raw, g.constant(broadcast_mask(in.m_p, cfg.d)));

  Var z_e_mean = g.masked_mean_tokens(out.ht_e, in.m_e, 1e-8);
  Var z_p_mean = g.masked_mean_tokens(out.ht_p, in.m_p, 1e-8);
  out.z_e = f.substitute_empty(z_e_mean, out.empty_e, "null.e");
  out.z_p = f.substitute_empty(z_p_mean, out.empty_p, "null.p");

  // Fused tokens: masked rows are already zero, so this is the plain mean
  // of the two cross-attended states wherever both are valid.
  Var tokens = g.scale(g.add(out.ht_e, out.ht_p), 0.5);
  Tensor m_union({B, S});
  for (std::size_t w = 0; w < B; ++w)
    for (std::size_t s = 0; s < S; ++s)
      m_union.at2(w, s) =
          (in.m_e.at2(w, s) != 0.0 || in.m_p.at2(w, s) != 0.0) ? 1.0 : 0.0;
  Var scores = g.matmul(tokens, g.reshape(ctx.P("pool.q"), {cfg.d, 1}));
  scores = g.scale(g.reshape(scores, {B, 1, S}), 1.0 / std::sqrt(double(cfg.d)));
  Var alpha = g.reshape(g.masked_softmax(scores, m_union, 1), {B, S});
  out.z_tok = g.pool_weighted(tokens, alpha);

  Var gate_in = g.concat_last(out.z_e, out.z_p);
  Var gate_hidden = g.gelu(f.linear(gate_in, "gate.1"));
  out.gate = g.sigmoid(f.linear(gate_hidden, "gate.2"));
  Var inv_gate = g.add_scalar(g.scale(out.gate, -1.0), 1.0);
  out.z_gate = g.add(g.mul(out.gate, out.z_e), g.mul(inv_gate, out.z_p));
  out.z_f = g.scale(g.add(out.z_gate, out.z_tok), 0.5);

  out.p_e = f.project(out.z_e, "head_e", &out.pre_e);
  out.p_p = f.project(out.z_p, "head_p", &out.pre_p);
  out.p_f = f.project(out.z_f, "head_f", &out.pre_f);
  out.ptok_e_raw = f.project(out.ht_e, "head_tok_e", nullptr);
  out.ptok_p_raw = f.project(out.ht_p, "head_tok_p", nullptr);
  out.ptok_e =
      g.mul(out.ptok_e_raw, g.constant(broadcast_mask(in.m_e, cfg.proj_dim)));
  out.ptok_p =
      g.mul(out.ptok_p_raw, g.constant(broadcast_mask(in.m_p, cfg.proj_dim)));

  Var sup_hidden = g.gelu(f.linear(out.z_f, "sup.1"));
  out.y_hat = f.linear(sup_hidden, "sup.2");
  return out;
}

FusionOutput extract(const Graph& g, const ForwardVars& f) {
  FusionOutput out;
  out.ht_e = g.val(f.ht_e);
  out.ht_p = g.val(f.ht_p);
  out.a_e2p = g.val(f.a_e2p);
  out.a_p2e = g.val(f.a_p2e);
  out.z_e = g.val(f.z_e);
  out.z_p = g.val(f.z_p);
  out.gate = g.val(f.gate);
  out.z_gate = g.val(f.z_gate);
  out.z_tok = g.val(f.z_tok);
  out.z_f = g.val(f.z_f);
  out.p_e = g.val(f.p_e);
  out.p_p = g.val(f.p_p);
  out.p_f = g.val(f.p_f);
  out.ptok_e = g.val(f.ptok_e);
  out.ptok_p = g.val(f.ptok_p);
  out.y_hat = g.val(f.y_hat);
  out.empty_e = f.empty_e;
  out.empty_p = f.empty_p;
  return out;
}

}  // namespace ctaf::model
