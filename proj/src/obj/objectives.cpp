#include "ctaf/obj/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ctaf/common/errors.hpp"

namespace ctaf::obj {

using num::Graph;
using num::Rng;
using num::Tensor;
using num::Var;

void LossWeights::validate() const {
  if (!(temp > 0.0)) throw ConfigError("loss temperature must be > 0");
  if (!(sigma_align > 0.0)) throw ConfigError("sigma_align must be > 0");
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0))
      throw ConfigError(std::string(name) + " must be >= 0");
  };
  nonneg(beta_align, "beta_align");
  nonneg(alpha_fuse, "alpha_fuse");
  nonneg(lambda_inv, "lambda_inv");
  nonneg(lambda_var, "lambda_var");
  nonneg(lambda_cov, "lambda_cov");
  nonneg(lambda_view, "lambda_view");
  nonneg(lambda_cons, "lambda_cons");
  nonneg(lambda_sup, "lambda_sup");
  nonneg(jitter_amp, "jitter_amp");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"temp", w.temp},
                     {"beta_align", w.beta_align},
                     {"alpha_fuse", w.alpha_fuse},
                     {"lambda_inv", w.lambda_inv},
                     {"lambda_var", w.lambda_var},
                     {"lambda_cov", w.lambda_cov},
                     {"lambda_view", w.lambda_view},
                     {"lambda_cons", w.lambda_cons},
                     {"lambda_sup", w.lambda_sup},
                     {"sigma_align", w.sigma_align},
                     {"jitter_amp", w.jitter_amp},
                     {"fuse_on_projections", w.fuse_on_projections}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.temp = j.value("temp", w.temp);
  w.beta_align = j.value("beta_align", w.beta_align);
  w.alpha_fuse = j.value("alpha_fuse", w.alpha_fuse);
  w.lambda_inv = j.value("lambda_inv", w.lambda_inv);
  w.lambda_var = j.value("lambda_var", w.lambda_var);
  w.lambda_cov = j.value("lambda_cov", w.lambda_cov);
  w.lambda_view = j.value("lambda_view", w.lambda_view);
  w.lambda_cons = j.value("lambda_cons", w.lambda_cons);
  w.lambda_sup = j.value("lambda_sup", w.lambda_sup);
  w.sigma_align = j.value("sigma_align", w.sigma_align);
  w.jitter_amp = j.value("jitter_amp", w.jitter_amp);
  w.fuse_on_projections = j.value("fuse_on_projections", w.fuse_on_projections);
}

LabelStats compute_label_stats(const std::vector<data::ClipWindow>& windows) {
  LabelStats s;
  std::array<double, 2> sum{0.0, 0.0};
  for (const auto& w : windows) {
    if (!w.label) continue;
    sum[0] += w.label->arousal;
    sum[1] += w.label->valence;
    ++s.labeled;
  }
  if (s.labeled == 0) return s;
  const double n = static_cast<double>(s.labeled);
  s.mu = {sum[0] / n, sum[1] / n};
  std::array<double, 2> sq{0.0, 0.0};
  for (const auto& w : windows) {
    if (!w.label) continue;
    const double da = w.label->arousal - s.mu[0];
    const double dv = w.label->valence - s.mu[1];
    sq[0] += da * da;
    sq[1] += dv * dv;
  }
  for (int k = 0; k < 2; ++k) {
    const double sd = std::sqrt(sq[k] / n);
    s.sigma[k] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Tensor gaussian_targets(const Tensor& t_q, const Tensor& t_k,
                        const Tensor& m_q, const Tensor& m_k, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_targets: sigma must be > 0");
  if (t_q.rank() != 2 || t_k.rank() != 2 || !t_q.same_shape(m_q) ||
      !t_k.same_shape(m_k) || t_q.dim(0) != t_k.dim(0))
    throw DataError("gaussian_targets: expected matching [B,S] inputs");
  const std::size_t b = t_q.dim(0), sq = t_q.dim(1), sk = t_k.dim(1);
  Tensor w({b, sq, sk});
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < sq; ++s) {
      if (m_q.at2(i, s) == 0.0) continue;
      // Shift exponents by the row max over valid keys so narrow widths
      // underflow to an exact one-hot instead of a 0/0 row.
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t u = 0; u < sk; ++u) {
        if (m_k.at2(i, u) == 0.0) continue;
        const double dt = t_q.at2(i, s) - t_k.at2(i, u);
        best = std::max(best, -dt * dt * inv2s2);
      }
      if (best == -std::numeric_limits<double>::infinity()) continue;
      double norm = 0.0;
      for (std::size_t u = 0; u < sk; ++u) {
        if (m_k.at2(i, u) == 0.0) continue;
        const double dt = t_q.at2(i, s) - t_k.at2(i, u);
        const double e = std::exp(-dt * dt * inv2s2 - best);
        w.at3(i, s, u) = e;
        norm += e;
      }
      for (std::size_t u = 0; u < sk; ++u) w.at3(i, s, u) /= norm;
    }
  }
  return w;
}

Var info_nce(Graph& g, Var z_a, Var z_b, double temp) {
  if (!(temp > 0.0)) throw ConfigError("info_nce: temperature must be > 0");
  const std::size_t b = g.val(z_a).dim(0);
  if (b < 2) return g.constant(Tensor::scalar(0.0), "info_nce_single");
  auto direction = [&](Var q, Var k) {
    Var logits = g.scale(g.matmul_nt(q, k), 1.0 / temp);
    Var lse = g.logsumexp_rows(logits);
    Var matched = g.diag2d(logits);
    return g.scale(g.sum_all(g.sub(lse, matched)), 1.0 / static_cast<double>(b));
  };
  return g.scale(g.add(direction(z_a, z_b), direction(z_b, z_a)), 0.5);
}

namespace {

// One cross-entropy direction: softmax over keys of scaled similarities
// against fixed Gaussian targets, averaged over query rows that have a
// target distribution.
Var ce_direction(Graph& g, Var ptok_q, Var ptok_k, const Tensor& t_q,
                 const Tensor& t_k, const Tensor& m_q, const Tensor& m_k,
                 double sigma, double temp, AlignStats* stats) {
  Tensor w = gaussian_targets(t_q, t_k, m_q, m_k, sigma);
  const std::size_t b = w.dim(0), sq = w.dim(1), sk = w.dim(2);
  std::size_t counted = 0, skipped = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < sq; ++s) {
      if (m_q.at2(i, s) == 0.0) continue;
      double rowsum = 0.0;
      for (std::size_t u = 0; u < sk; ++u) rowsum += w.at3(i, s, u);
      if (rowsum > 0.0)
        ++counted;
      else
        ++skipped;
    }
  }
  if (stats) {
    stats->counted_rows += counted;
    stats->skipped_rows += skipped;
  }
  if (counted == 0) return g.constant(Tensor::scalar(0.0), "align_empty");
  Var logits = g.scale(g.bmm_nt(ptok_q, ptok_k), 1.0 / temp);
  Var probs = g.masked_softmax(logits, m_k, 1);
  Var logp = g.log(g.add_scalar(probs, 1e-30));
  Var weighted = g.mul(logp, g.constant(std::move(w), "align_targets"));
  return g.scale(g.sum_all(weighted), -1.0 / static_cast<double>(counted));
}

}  // namespace

Var soft_alignment_loss(Graph& g, Var ptok_e, Var ptok_p, const Tensor& t_e,
                        const Tensor& t_p, const Tensor& m_e, const Tensor& m_p,
                        double sigma, double temp, AlignStats* stats) {
  Var row = ce_direction(g, ptok_e, ptok_p, t_e, t_p, m_e, m_p, sigma, temp,
                         stats);
  Var col = ce_direction(g, ptok_p, ptok_e, t_p, t_e, m_p, m_e, sigma, temp,
                         stats);
  return g.scale(g.add(row, col), 0.5);
}

Var fuse_loss(Graph& g, Var z_f, Var z_e, Var z_p) {
  const std::size_t b = g.val(z_f).dim(0);
  Var target = g.scale(g.add(z_e, z_p), 0.5);
  Var diff = g.sub(z_f, target);
  return g.scale(g.sum_all(g.mul(diff, diff)), 1.0 / static_cast<double>(b));
}

VicregTerms vicreg(Graph& g, Var p_e, Var p_p) {
  VicregTerms out;
  const std::size_t b = g.val(p_e).dim(0);
  const std::size_t d = g.val(p_e).dim(1);
  Var diff = g.sub(p_e, p_p);
  out.inv = g.scale(g.sum_all(g.mul(diff, diff)), 1.0 / static_cast<double>(b));
  if (b < 2) return out;
  out.var_cov_defined = true;
  auto spread = [&](Var p) {
    Var centered = g.sub_rowvec(p, g.mean_rows(p));
    Var var_d = g.scale(g.sum_rows(g.mul(centered, centered)),
                        1.0 / static_cast<double>(b - 1));
    Var stddev = g.sqrt(g.add_scalar(var_d, 1e-12));
    Var hinge = g.relu(g.add_scalar(g.scale(stddev, -1.0), 1.0));
    Var var_term = g.scale(g.sum_all(hinge), 1.0 / static_cast<double>(d));
    Var cov_term;
    if (d >= 2) {
      Var cov = g.scale(g.matmul_tn(centered, centered),
                        1.0 / static_cast<double>(b - 1));
      Var sq_sum = g.sum_all(g.mul(cov, cov));
      Var dg = g.diag2d(cov);
      Var diag_sq = g.sum_all(g.mul(dg, dg));
      cov_term = g.scale(g.sub(sq_sum, diag_sq),
                         1.0 / static_cast<double>(d * (d - 1)));
    } else {
      cov_term = g.constant(Tensor::scalar(0.0), "cov_1d");
    }
    return std::pair<Var, Var>{var_term, cov_term};
  };
  auto [var_e, cov_e] = spread(p_e);
  auto [var_p, cov_p] = spread(p_p);
  out.var = g.scale(g.add(var_e, var_p), 0.5);
  out.cov = g.scale(g.add(cov_e, cov_p), 0.5);
  return out;
}

Var view_contrast(Graph& g, Var p_e1, Var p_e2, Var p_p1, Var p_p2,
                  double temp) {
  Var e = info_nce(g, p_e1, p_e2, temp);
  Var p = info_nce(g, p_p1, p_p2, temp);
  return g.scale(g.add(e, p), 0.5);
}

Var consistency_loss(Graph& g, Var z_f1, Var z_f2) {
  const std::size_t b = g.val(z_f1).dim(0);
  Var diff = g.sub(z_f1, z_f2);
  return g.scale(g.sum_all(g.mul(diff, diff)), 1.0 / static_cast<double>(b));
}

Var supervised_loss(Graph& g, Var y_hat, const Tensor& y,
                    const std::vector<bool>& has_label, const LabelStats& stats,
                    bool* any_labeled) {
  const std::size_t b = y.dim(0);
  std::size_t n = 0;
  Tensor target(y.shape());
  Tensor keep(y.shape());
  for (std::size_t i = 0; i < b; ++i) {
    if (!has_label[i]) continue;
    ++n;
    for (std::size_t k = 0; k < 2; ++k) {
      target.at2(i, k) = (y.at2(i, k) - stats.mu[k]) / stats.sigma[k];
      keep.at2(i, k) = 1.0;
    }
  }
  if (any_labeled) *any_labeled = n > 0;
  if (n == 0) return g.constant(Tensor::scalar(0.0), "sup_unlabeled");
  Var diff = g.mul(g.sub(y_hat, g.constant(std::move(target), "sup_target")),
                   g.constant(std::move(keep), "sup_keep"));
  return g.scale(g.sum_all(g.mul(diff, diff)), 1.0 / static_cast<double>(n));
}

Var total_loss(Graph& g, const TermVars& terms, const LossWeights& w,
               LossBreakdown* out) {
  struct Entry {
    Var v;
    double weight;
    double* slot;
  };
  LossBreakdown bd;
  const Entry entries[] = {
      {terms.con, 1.0, &bd.con},        {terms.align, w.beta_align, &bd.align},
      {terms.fuse, w.alpha_fuse, &bd.fuse}, {terms.inv, w.lambda_inv, &bd.inv},
      {terms.var, w.lambda_var, &bd.var},   {terms.cov, w.lambda_cov, &bd.cov},
      {terms.view, w.lambda_view, &bd.view},
      {terms.cons, w.lambda_cons, &bd.cons},
      {terms.sup, w.lambda_sup, &bd.sup}};
  Var total;
  for (const auto& e : entries) {
    if (!e.v.valid()) continue;
    *e.slot = g.val(e.v)[0];
    Var scaled = g.scale(e.v, e.weight);
    total = total.valid() ? g.add(total, scaled) : scaled;
  }
  if (!total.valid()) total = g.constant(Tensor::scalar(0.0), "total_empty");
  bd.total = g.val(total)[0];
  if (out) *out = bd;
  return total;
}

LossWeights schedule(std::size_t step, std::size_t total_steps,
                     const LossWeights& maxima) {
  double r = 1.0;
  if (total_steps > 0)
    r = std::min(1.0, 2.0 * static_cast<double>(step) /
                          static_cast<double>(total_steps));
  LossWeights w = maxima;
  w.beta_align = maxima.beta_align * r;
  w.jitter_amp = maxima.jitter_amp * r;
  return w;
}

namespace {

std::size_t valid_tokens(const Tensor& m, std::size_t w, std::size_t s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s; ++i) n += (m.at2(w, i) == 1.0);
  return n;
}

void zero_stream(Tensor& x, Tensor& m, std::size_t w) {
  const std::size_t s = x.dim(1), c = x.dim(2);
  for (std::size_t i = 0; i < s; ++i) {
    m.at2(w, i) = 0.0;
    for (std::size_t k = 0; k < c; ++k) x.at3(w, i, k) = 0.0;
  }
}

}  // namespace

model::BatchInputs modality_dropout(model::BatchInputs in, double rate,
                                    const Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw ConfigError("modality_dropout: rate must be in [0, 1]");
  if (rate == 0.0) return in;
  for (std::size_t w = 0; w < in.batch; ++w) {
    Rng wr = rng.derive("mdrop", {static_cast<std::uint64_t>(w)});
    if (wr.uniform01() >= rate) continue;
    const bool drop_e = wr.uniform01() < 0.5;
    const std::size_t other = drop_e ? valid_tokens(in.m_p, w, in.s_p)
                                     : valid_tokens(in.m_e, w, in.s_e);
    if (other == 0) continue;
    if (drop_e)
      zero_stream(in.x_e, in.m_e, w);
    else
      zero_stream(in.x_p, in.m_p, w);
  }
  return in;
}

namespace {

// Monotone piecewise-linear remap through three knots, extended linearly
// beyond the window ends.
struct Warp {
  double x0, x1, x2, y0, y1, y2;

  double operator()(double t) const {
    if (t <= x1) {
      const double slope = (y1 - y0) / (x1 - x0);
      return y0 + slope * (t - x0);
    }
    const double slope = (y2 - y1) / (x2 - x1);
    return y1 + slope * (t - x1);
  }
};

Warp draw_warp(Rng& rng, double window_len, double frac) {
  const double half = window_len / 2.0;
  auto bump = [&]() { return rng.uniform01() * 2.0 * frac * window_len -
                             frac * window_len; };
  return Warp{0.0, half, window_len,
              0.0 + bump(), half + bump(), window_len + bump()};
}

void jitter_times(Tensor& t, std::size_t w, std::size_t s, const Warp& warp,
                  Rng& rng, double amp) {
  for (std::size_t i = 0; i < s; ++i) {
    const double d = amp > 0.0 ? rng.uniform01() * 2.0 * amp - amp : 0.0;
    t.at2(w, i) = warp(t.at2(w, i)) + d;
  }
}

// Applies one shared drop pattern to both modalities, skipping any drop that
// would leave a previously non-empty stream without valid tokens.
void apply_extra_mask(model::BatchInputs& v, std::size_t w, double rate,
                      Rng& rng) {
  std::size_t left_e = valid_tokens(v.m_e, w, v.s_e);
  std::size_t left_p = valid_tokens(v.m_p, w, v.s_p);
  const std::size_t bins = std::max(v.s_e, v.s_p);
  for (std::size_t i = 0; i < bins; ++i) {
    if (rng.uniform01() >= rate) continue;
    if (i < v.s_e && v.m_e.at2(w, i) == 1.0 && left_e > 1) {
      v.m_e.at2(w, i) = 0.0;
      --left_e;
    }
    if (i < v.s_p && v.m_p.at2(w, i) == 1.0 && left_p > 1) {
      v.m_p.at2(w, i) = 0.0;
      --left_p;
    }
  }
}

}  // namespace

std::pair<model::BatchInputs, model::BatchInputs> make_views(
    const model::BatchInputs& in, const ViewConfig& cfg, const Rng& rng) {
  if (!(cfg.jitter_amp >= 0.0))
    throw ConfigError("make_views: jitter_amp must be >= 0");
  if (!(cfg.warp_frac >= 0.0 && cfg.warp_frac < 0.25))
    throw ConfigError("make_views: warp_frac must be in [0, 0.25)");
  if (!(cfg.extra_mask_rate >= 0.0 && cfg.extra_mask_rate < 1.0))
    throw ConfigError("make_views: extra_mask_rate must be in [0, 1)");
  if (!(cfg.window_len > 0.0))
    throw ConfigError("make_views: window_len must be > 0");
  model::BatchInputs v1 = in;
  model::BatchInputs v2 = in;
  for (std::size_t w = 0; w < in.batch; ++w) {
    const Rng wr = rng.derive("view", {static_cast<std::uint64_t>(w)});
    Rng warp_rng = wr.derive("warp", {});
    const Warp warp = draw_warp(warp_rng, cfg.window_len, cfg.warp_frac);
    Rng mask_rng = wr.derive("mask", {});
    apply_extra_mask(v1, w, cfg.extra_mask_rate, mask_rng);
    for (std::size_t i = 0; i < in.s_e; ++i)
      v2.m_e.at2(w, i) = v1.m_e.at2(w, i);
    for (std::size_t i = 0; i < in.s_p; ++i)
      v2.m_p.at2(w, i) = v1.m_p.at2(w, i);
    Rng j1e = wr.derive("jitter_e", {1});
    Rng j1p = wr.derive("jitter_p", {1});
    Rng j2e = wr.derive("jitter_e", {2});
    Rng j2p = wr.derive("jitter_p", {2});
    jitter_times(v1.t_e, w, in.s_e, warp, j1e, cfg.jitter_amp);
    jitter_times(v1.t_p, w, in.s_p, warp, j1p, cfg.jitter_amp);
    jitter_times(v2.t_e, w, in.s_e, warp, j2e, cfg.jitter_amp);
    jitter_times(v2.t_p, w, in.s_p, warp, j2p, cfg.jitter_amp);
  }
  return {std::move(v1), std::move(v2)};
}

ObjectiveResult compute_objective(const model::CtafModel& m,
                                  model::TapeContext& ctx,
                                  const model::BatchInputs& original,
                                  const model::BatchInputs& view1,
                                  const model::BatchInputs& view2,
                                  const LossWeights& w,
                                  const LabelStats& stats) {
  w.validate();
  Graph& g = ctx.g;
  ObjectiveResult r;
  r.fwd1 = m.forward(ctx, view1);
  TermVars terms;
  terms.con = info_nce(g, r.fwd1.p_e, r.fwd1.p_p, w.temp);
  terms.align = soft_alignment_loss(g, r.fwd1.ptok_e_raw, r.fwd1.ptok_p_raw,
                                    original.t_e, original.t_p, view1.m_e,
                                    view1.m_p, w.sigma_align, w.temp, &r.align);
  if (w.fuse_on_projections)
    terms.fuse = fuse_loss(g, r.fwd1.p_f, r.fwd1.p_e, r.fwd1.p_p);
  else
    terms.fuse = fuse_loss(g, r.fwd1.z_f, r.fwd1.z_e, r.fwd1.z_p);
  VicregTerms vt = vicreg(g, r.fwd1.pre_e, r.fwd1.pre_p);
  terms.inv = vt.inv;
  terms.var = vt.var;
  terms.cov = vt.cov;
  r.vicreg_spread_skipped = !vt.var_cov_defined;
  if (w.lambda_view > 0.0 || w.lambda_cons > 0.0) {
    r.fwd2 = m.forward(ctx, view2);
    r.second_view_ran = true;
    terms.view = view_contrast(g, r.fwd1.p_e, r.fwd2.p_e, r.fwd1.p_p,
                               r.fwd2.p_p, w.temp);
    terms.cons = consistency_loss(g, r.fwd1.z_f, r.fwd2.z_f);
  }
  terms.sup = supervised_loss(g, r.fwd1.y_hat, view1.y, view1.has_label, stats,
                              &r.any_labeled);
  r.total = total_loss(g, terms, w, &r.breakdown);
  return r;
}

}  // namespace ctaf::obj
