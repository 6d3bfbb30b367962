#include "ctaf/eval/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>

#include "ctaf/common/errors.hpp"
#include "ctaf/num/graph.hpp"
#include "ctaf/train/optim.hpp"
#include "ctaf/train/trainer.hpp"

namespace ctaf::eval {

using num::Rng;
using num::Tensor;

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Cosine via dot(a,b) / sqrt(dot(a,a) * dot(b,b)); bitwise-equal inputs land
// on exactly 1 because sqrt(x*x) round-trips in IEEE arithmetic.
double cosine(const double* a, const double* b, std::size_t n) {
  const double ab = dot(a, b, n);
  const double aa = dot(a, a, n);
  const double bb = dot(b, b, n);
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

Tensor squeeze_vec(const Tensor& t) {
  Tensor out({t.dim(1)});
  for (std::size_t i = 0; i < t.dim(1); ++i) out[i] = t.at2(0, i);
  return out;
}

Tensor squeeze_mat(const Tensor& t) {
  Tensor out({t.dim(1), t.dim(2)});
  for (std::size_t r = 0; r < t.dim(1); ++r)
    for (std::size_t c = 0; c < t.dim(2); ++c) out.at2(r, c) = t.at3(0, r, c);
  return out;
}

std::vector<bool> mask_bits(const std::vector<double>& m) {
  std::vector<bool> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] > 0.5;
  return out;
}

void check_tau(double tau) {
  if (!(std::isfinite(tau) && tau >= 0.0))
    throw ConfigError("tolerance tau must be finite and non-negative");
}

void check_token_window(const Tensor& proj, const std::vector<double>& t,
                        const std::vector<bool>& m, const char* side) {
  if (proj.rank() != 2)
    throw DataError(std::string("token projections must be [S, P] on the ") +
                    side + " side");
  if (proj.dim(0) != t.size() || proj.dim(0) != m.size())
    throw DataError(std::string("token count mismatch on the ") + side +
                    " side");
}

struct PoolCounts {
  std::size_t hits = 0;
  std::size_t queries = 0;
  double mass = 0.0;
  std::size_t skipped = 0;
};

// Macro-average of per-subject rates; `per_window` adds one window of counts
// into the subject's pool.
template <typename PerWindow>
double macro_over_subjects(const std::vector<WindowEmbedding>& windows,
                           RetrievalStats* stats, PerWindow per_window,
                           bool chance) {
  if (windows.empty()) throw DataError("no windows to evaluate");
  std::map<std::string, PoolCounts> pools;
  for (const auto& w : windows) per_window(w, pools[w.subject]);
  std::vector<std::string> subjects;
  std::vector<double> rates;
  std::size_t skipped = 0, total_queries = 0;
  for (const auto& [subject, pool] : pools) {
    skipped += pool.skipped;
    total_queries += pool.queries;
    if (pool.queries == 0) continue;
    const double num =
        chance ? pool.mass : static_cast<double>(pool.hits);
    subjects.push_back(subject);
    rates.push_back(num / static_cast<double>(pool.queries));
  }
  if (stats) {
    stats->subjects = subjects;
    stats->rates = rates;
    stats->skipped_windows = skipped;
    stats->total_queries = total_queries;
  }
  if (rates.empty()) return 0.0;
  double sum = 0.0;
  for (double r : rates) sum += r;
  return sum / static_cast<double>(rates.size());
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = p * static_cast<double>(n - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  const std::size_t j = std::min(i + 1, n - 1);
  const double frac = pos - static_cast<double>(i);
  return sorted[i] + frac * (sorted[j] - sorted[i]);
}

}  // namespace

std::vector<WindowEmbedding> embed_windows(
    const model::CtafModel& m, const std::vector<data::ClipWindow>& windows,
    std::size_t batch_size) {
  std::vector<model::FusionOutput> outs =
      train::embed_dataset(m, windows, batch_size);
  std::vector<WindowEmbedding> res;
  res.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const data::ClipWindow& w = windows[i];
    const model::FusionOutput& f = outs[i];
    WindowEmbedding e;
    e.subject = w.subject;
    e.clip = w.clip;
    e.clip_e = squeeze_vec(f.p_e);
    e.clip_p = squeeze_vec(f.p_p);
    e.tok_e = squeeze_mat(f.ptok_e);
    e.tok_p = squeeze_mat(f.ptok_p);
    e.fused = squeeze_vec(f.z_f);
    e.y_hat = squeeze_vec(f.y_hat);
    e.t_e = w.eeg.t;
    e.t_p = w.phys.t;
    e.m_e = mask_bits(w.eeg.m);
    e.m_p = mask_bits(w.phys.m);
    e.label = w.label;
    res.push_back(std::move(e));
  }
  return res;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("quantile of an empty set");
  if (!(p >= 0.0 && p <= 1.0))
    throw ConfigError("quantile position must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

CiValue bootstrap_ci(const std::vector<double>& values, const Rng& rng,
                     std::size_t n_resamples, double level) {
  if (values.empty()) throw DataError("bootstrap over an empty set");
  if (!(level > 0.0 && level < 1.0))
    throw ConfigError("bootstrap level must lie in (0, 1)");
  if (n_resamples == 0) throw ConfigError("bootstrap needs resamples");
  const std::size_t n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  CiValue out;
  out.mean = sum / static_cast<double>(n);
  if (n == 1) {
    out.lo = out.hi = out.mean;
    out.degenerate = true;
    return out;
  }
  Rng r = rng;
  std::vector<double> means(n_resamples);
  for (std::size_t k = 0; k < n_resamples; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      s += values[static_cast<std::size_t>(r.uniform_int(n))];
    means[k] = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  out.lo = quantile_sorted(means, (1.0 - level) / 2.0);
  out.hi = quantile_sorted(means, (1.0 + level) / 2.0);
  return out;
}

CosineMargin cosine_margin(const Tensor& emb_e, const Tensor& emb_p) {
  if (emb_e.rank() != 2 || !emb_e.same_shape(emb_p))
    throw DataError("cosine margin expects matching [N, P] stacks");
  const std::size_t n = emb_e.dim(0), p = emb_e.dim(1);
  if (n == 0) throw DataError("cosine margin over zero windows");
  CosineMargin out;
  out.windows = n;
  double pos = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    pos += cosine(emb_e.data() + i * p, emb_p.data() + i * p, p);
  out.cos_pos = pos / static_cast<double>(n);
  if (n >= 2) {
    double neg = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      neg += cosine(emb_e.data() + i * p,
                    emb_p.data() + ((i + 1) % n) * p, p);
    out.cos_neg = neg / static_cast<double>(n);
    out.neg_defined = true;
  }
  return out;
}

RetrievalCounts retrieve_window(const Tensor& proj_q, const Tensor& proj_k,
                                const std::vector<double>& t_q,
                                const std::vector<double>& t_k,
                                const std::vector<bool>& m_q,
                                const std::vector<bool>& m_k, double tau) {
  check_tau(tau);
  check_token_window(proj_q, t_q, m_q, "query");
  check_token_window(proj_k, t_k, m_k, "target");
  if (proj_q.dim(1) != proj_k.dim(1))
    throw DataError("query and target projections differ in width");
  const std::size_t p = proj_q.dim(1);
  RetrievalCounts out;
  bool any_target = false;
  for (bool b : m_k) any_target = any_target || b;
  if (!any_target) {
    out.no_targets = true;
    return out;
  }
  for (std::size_t q = 0; q < t_q.size(); ++q) {
    if (!m_q[q]) continue;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < t_k.size(); ++k) {
      if (!m_k[k]) continue;
      const double sim = dot(proj_q.data() + q * p, proj_k.data() + k * p, p);
      if (sim > best) {
        best = sim;
        arg = k;
      }
    }
    ++out.queries;
    if (std::abs(t_q[q] - t_k[arg]) <= tau) ++out.hits;
  }
  return out;
}

ChanceMass chance_window(const std::vector<double>& t_q,
                         const std::vector<double>& t_k,
                         const std::vector<bool>& m_q,
                         const std::vector<bool>& m_k, double tau) {
  check_tau(tau);
  if (t_q.size() != m_q.size() || t_k.size() != m_k.size())
    throw DataError("timestamp and mask lengths differ");
  ChanceMass out;
  std::size_t targets = 0;
  for (bool b : m_k) targets += b ? 1 : 0;
  if (targets == 0) {
    out.no_targets = true;
    return out;
  }
  for (std::size_t q = 0; q < t_q.size(); ++q) {
    if (!m_q[q]) continue;
    std::size_t within = 0;
    for (std::size_t k = 0; k < t_k.size(); ++k)
      if (m_k[k] && std::abs(t_q[q] - t_k[k]) <= tau) ++within;
    out.mass += static_cast<double>(within) / static_cast<double>(targets);
    ++out.queries;
  }
  return out;
}

double chance_rate(const std::vector<double>& t_q,
                   const std::vector<double>& t_k,
                   const std::vector<bool>& m_q, const std::vector<bool>& m_k,
                   double tau) {
  const ChanceMass c = chance_window(t_q, t_k, m_q, m_k, tau);
  if (c.queries == 0) return 0.0;
  return c.mass / static_cast<double>(c.queries);
}

double retrieval_at_tau(const std::vector<WindowEmbedding>& windows,
                        double tau, Direction dir, RetrievalStats* stats) {
  check_tau(tau);
  return macro_over_subjects(
      windows, stats,
      [&](const WindowEmbedding& w, PoolCounts& pool) {
        const bool e2p = dir == Direction::e2p;
        const RetrievalCounts c = retrieve_window(
            e2p ? w.tok_e : w.tok_p, e2p ? w.tok_p : w.tok_e,
            e2p ? w.t_e : w.t_p, e2p ? w.t_p : w.t_e,
            e2p ? w.m_e : w.m_p, e2p ? w.m_p : w.m_e, tau);
        pool.hits += c.hits;
        pool.queries += c.queries;
        pool.skipped += c.no_targets ? 1 : 0;
      },
      false);
}

double chance_at_tau(const std::vector<WindowEmbedding>& windows, double tau,
                     Direction dir, RetrievalStats* stats) {
  check_tau(tau);
  return macro_over_subjects(
      windows, stats,
      [&](const WindowEmbedding& w, PoolCounts& pool) {
        const bool e2p = dir == Direction::e2p;
        const ChanceMass c = chance_window(
            e2p ? w.t_e : w.t_p, e2p ? w.t_p : w.t_e,
            e2p ? w.m_e : w.m_p, e2p ? w.m_p : w.m_e, tau);
        pool.mass += c.mass;
        pool.queries += c.queries;
        pool.skipped += c.no_targets ? 1 : 0;
      },
      true);
}

AlignmentReport alignment_report(const std::vector<WindowEmbedding>& windows,
                                 double tau, const Rng& rng,
                                 std::size_t n_resamples) {
  check_tau(tau);
  if (windows.empty()) throw DataError("no windows to evaluate");
  std::map<std::string, std::vector<const WindowEmbedding*>> by_subject;
  for (const auto& w : windows) by_subject[w.subject].push_back(&w);

  AlignmentReport rep;
  rep.tau = tau;
  std::vector<double> pos_vals, neg_vals, e2p_vals, p2e_vals;
  for (const auto& [subject, group] : by_subject) {
    const std::size_t n = group.size();
    const std::size_t p = group.front()->clip_e.numel();
    Tensor stack_e({n, p}), stack_p({n, p});
    for (std::size_t i = 0; i < n; ++i) {
      if (group[i]->clip_e.numel() != p || group[i]->clip_p.numel() != p)
        throw DataError("clip projection widths differ within a subject");
      for (std::size_t c = 0; c < p; ++c) {
        stack_e.at2(i, c) = group[i]->clip_e[c];
        stack_p.at2(i, c) = group[i]->clip_p[c];
      }
    }
    const CosineMargin cm = cosine_margin(stack_e, stack_p);

    PoolCounts e2p, p2e;
    for (const WindowEmbedding* w : group) {
      const RetrievalCounts a = retrieve_window(w->tok_e, w->tok_p, w->t_e,
                                                w->t_p, w->m_e, w->m_p, tau);
      e2p.hits += a.hits;
      e2p.queries += a.queries;
      const RetrievalCounts b = retrieve_window(w->tok_p, w->tok_e, w->t_p,
                                                w->t_e, w->m_p, w->m_e, tau);
      p2e.hits += b.hits;
      p2e.queries += b.queries;
    }

    SubjectAlignment row;
    row.subject = subject;
    row.windows = n;
    row.cos_pos = cm.cos_pos;
    row.cos_neg = cm.cos_neg;
    row.cos_neg_defined = cm.neg_defined;
    row.retr_e2p = e2p.queries == 0 ? 0.0
                                    : static_cast<double>(e2p.hits) /
                                          static_cast<double>(e2p.queries);
    row.retr_p2e = p2e.queries == 0 ? 0.0
                                    : static_cast<double>(p2e.hits) /
                                          static_cast<double>(p2e.queries);
    rep.subjects.push_back(row);

    pos_vals.push_back(row.cos_pos);
    if (row.cos_neg_defined) neg_vals.push_back(row.cos_neg);
    e2p_vals.push_back(row.retr_e2p);
    p2e_vals.push_back(row.retr_p2e);
  }

  rep.cos_pos = bootstrap_ci(pos_vals, rng.derive("cos_pos"), n_resamples);
  if (!neg_vals.empty())
    rep.cos_neg = bootstrap_ci(neg_vals, rng.derive("cos_neg"), n_resamples);
  else
    rep.cos_neg.degenerate = true;
  rep.retr_e2p = bootstrap_ci(e2p_vals, rng.derive("retr_e2p"), n_resamples);
  rep.retr_p2e = bootstrap_ci(p2e_vals, rng.derive("retr_p2e"), n_resamples);
  return rep;
}

BinEdges fit_bin_edges(const std::vector<double>& train_labels) {
  if (train_labels.empty()) throw DataError("no labels to fit bin edges");
  bool integral = true;
  for (double l : train_labels)
    integral = integral && std::abs(l - std::round(l)) <= 1e-9;
  BinEdges e;
  if (integral) return e;
  e.lo = quantile(train_labels, 1.0 / 3.0);
  e.hi = quantile(train_labels, 2.0 / 3.0);
  e.tertile = true;
  return e;
}

int bin_of(double label, const BinEdges& e) {
  if (label < e.lo) return 0;
  if (label < e.hi) return 1;
  return 2;
}

ProbeMetrics score_bins(const std::vector<int>& truth,
                        const std::vector<int>& pred) {
  if (truth.empty() || truth.size() != pred.size())
    throw DataError("truth and prediction lists must match and be non-empty");
  std::size_t correct = 0;
  std::size_t tp[3] = {0, 0, 0}, fp[3] = {0, 0, 0}, fn[3] = {0, 0, 0};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] > 2 || pred[i] < 0 || pred[i] > 2)
      throw DataError("bins must lie in {0, 1, 2}");
    if (truth[i] == pred[i]) {
      ++correct;
      ++tp[truth[i]];
    } else {
      ++fn[truth[i]];
      ++fp[pred[i]];
    }
  }
  ProbeMetrics out;
  out.test_windows = truth.size();
  out.accuracy =
      static_cast<double>(correct) / static_cast<double>(truth.size());
  double f1_sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    if (denom > 0.0) f1_sum += 2.0 * static_cast<double>(tp[c]) / denom;
  }
  out.macro_f1 = f1_sum / 3.0;
  return out;
}

LinearProbe fit_probe(const Tensor& x, const std::vector<int>& y) {
  if (x.rank() != 2 || x.dim(0) != y.size() || y.empty())
    throw DataError("probe expects [N, D] features with one label per row");
  const std::size_t n = x.dim(0), d = x.dim(1);

  std::vector<int> classes;
  for (int v : y) {
    if (v < 0 || v > 2) throw DataError("bins must lie in {0, 1, 2}");
    if (std::find(classes.begin(), classes.end(), v) == classes.end())
      classes.push_back(v);
  }
  std::sort(classes.begin(), classes.end());
  const std::size_t k = classes.size();

  Tensor onehot({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t col = static_cast<std::size_t>(
        std::find(classes.begin(), classes.end(), y[i]) - classes.begin());
    onehot.at2(i, col) = 1.0;
  }

  num::ParamStore params;
  params.add("probe.w", Tensor({d, k}));
  params.add("probe.b", Tensor({k}));
  train::AdamWConfig oc;
  oc.lr = 0.05;
  train::AdamW opt(oc);

  // Full-batch steps until ten consecutive loss changes stay under 1e-10.
  double prev = std::numeric_limits<double>::infinity();
  int still = 0;
  for (int it = 0; it < 2000 && still < 10; ++it) {
    num::Graph g;
    num::Var xv = g.constant(x, "probe.x");
    num::Var ov = g.constant(onehot, "probe.onehot");
    num::Var wv = g.leaf(params.get("probe.w"), true, "probe.w");
    num::Var bv = g.leaf(params.get("probe.b"), true, "probe.b");
    num::Var logits = g.add_bias(g.matmul(xv, wv), bv);
    num::Var picked = g.sum_last(g.mul(logits, ov));
    num::Var loss = g.scale(g.sum_all(g.sub(g.logsumexp_rows(logits), picked)),
                            1.0 / static_cast<double>(n));
    const double cur = g.val(loss)[0];
    if (!std::isfinite(cur)) throw NumericError("probe loss diverged");
    g.backward(loss);
    std::map<std::string, Tensor> grads;
    grads["probe.w"] = g.grad(wv);
    grads["probe.b"] = g.grad(bv);
    opt.step(params, grads);
    still = std::abs(prev - cur) < 1e-10 ? still + 1 : 0;
    prev = cur;
  }

  LinearProbe probe;
  probe.w = params.get("probe.w");
  probe.b = params.get("probe.b");
  probe.classes = classes;
  probe.missing_train_class = k < 3;
  return probe;
}

std::vector<int> predict_bins(const LinearProbe& probe, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != probe.w.dim(0))
    throw DataError("probe feature width mismatch");
  const std::size_t n = x.dim(0), d = x.dim(1), k = probe.w.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double logit = probe.b[c];
      for (std::size_t j = 0; j < d; ++j)
        logit += x.at2(i, j) * probe.w.at2(j, c);
      if (logit > best) {
        best = logit;
        arg = c;
      }
    }
    out[i] = probe.classes[arg];
  }
  return out;
}

namespace {

struct LabeledSet {
  Tensor x;  // [N, D] fused embeddings
  std::vector<double> arousal, valence;
  std::vector<Tensor> y_hat;
};

LabeledSet gather_labeled(const std::vector<WindowEmbedding>& windows,
                          const char* side) {
  std::vector<const WindowEmbedding*> rows;
  for (const auto& w : windows)
    if (w.label) rows.push_back(&w);
  if (rows.empty())
    throw DataError(std::string("no labeled windows in the ") + side +
                    " set");
  const std::size_t n = rows.size(), d = rows.front()->fused.numel();
  LabeledSet out;
  out.x = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i]->fused.numel() != d)
      throw DataError("fused embedding widths differ");
    for (std::size_t c = 0; c < d; ++c) out.x.at2(i, c) = rows[i]->fused[c];
    out.arousal.push_back(rows[i]->label->arousal);
    out.valence.push_back(rows[i]->label->valence);
    out.y_hat.push_back(rows[i]->y_hat);
  }
  return out;
}

std::vector<int> bins_of(const std::vector<double>& labels,
                         const BinEdges& e) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = bin_of(labels[i], e);
  return out;
}

}  // namespace

ProbeFold three_bin_probe(const std::vector<WindowEmbedding>& train,
                          const std::vector<WindowEmbedding>& test) {
  const LabeledSet tr = gather_labeled(train, "training");
  const LabeledSet te = gather_labeled(test, "test");
  ProbeFold out;
  out.edges_arousal = fit_bin_edges(tr.arousal);
  out.edges_valence = fit_bin_edges(tr.valence);

  const LinearProbe pa = fit_probe(tr.x, bins_of(tr.arousal, out.edges_arousal));
  out.arousal = score_bins(bins_of(te.arousal, out.edges_arousal),
                           predict_bins(pa, te.x));
  out.arousal.missing_train_class = pa.missing_train_class;

  const LinearProbe pv = fit_probe(tr.x, bins_of(tr.valence, out.edges_valence));
  out.valence = score_bins(bins_of(te.valence, out.edges_valence),
                           predict_bins(pv, te.x));
  out.valence.missing_train_class = pv.missing_train_class;
  return out;
}

ProbeFold head_binning(const std::vector<WindowEmbedding>& train,
                       const std::vector<WindowEmbedding>& test,
                       const obj::LabelStats& stats) {
  const LabeledSet tr = gather_labeled(train, "training");
  const LabeledSet te = gather_labeled(test, "test");
  ProbeFold out;
  out.edges_arousal = fit_bin_edges(tr.arousal);
  out.edges_valence = fit_bin_edges(tr.valence);
  std::vector<int> pred_a, pred_v;
  for (const Tensor& y : te.y_hat) {
    if (y.numel() != 2) throw DataError("regression head output must be [2]");
    pred_a.push_back(bin_of(y[0] * stats.sigma[0] + stats.mu[0],
                            out.edges_arousal));
    pred_v.push_back(bin_of(y[1] * stats.sigma[1] + stats.mu[1],
                            out.edges_valence));
  }
  out.arousal = score_bins(bins_of(te.arousal, out.edges_arousal), pred_a);
  out.valence = score_bins(bins_of(te.valence, out.edges_valence), pred_v);
  return out;
}

ProbeReport probe_report(const std::vector<SubjectProbe>& subjects,
                         const Rng& rng, std::size_t n_resamples) {
  if (subjects.empty()) throw DataError("no subjects to aggregate");
  ProbeReport rep;
  rep.subjects = subjects;
  std::sort(rep.subjects.begin(), rep.subjects.end(),
            [](const SubjectProbe& a, const SubjectProbe& b) {
              return a.subject < b.subject;
            });
  std::vector<double> acc_a, f1_a, acc_v, f1_v;
  for (const auto& s : rep.subjects) {
    acc_a.push_back(s.fold.arousal.accuracy);
    f1_a.push_back(s.fold.arousal.macro_f1);
    acc_v.push_back(s.fold.valence.accuracy);
    f1_v.push_back(s.fold.valence.macro_f1);
  }
  rep.acc_arousal = bootstrap_ci(acc_a, rng.derive("acc_arousal"), n_resamples);
  rep.f1_arousal = bootstrap_ci(f1_a, rng.derive("f1_arousal"), n_resamples);
  rep.acc_valence = bootstrap_ci(acc_v, rng.derive("acc_valence"), n_resamples);
  rep.f1_valence = bootstrap_ci(f1_v, rng.derive("f1_valence"), n_resamples);
  return rep;
}

namespace {

DeltaSummary summarize_delta(const std::vector<double>& diffs, const Rng& rng,
                             std::size_t n_resamples) {
  DeltaSummary out;
  out.per_subject = diffs;
  out.subjects = diffs.size();
  if (diffs.empty()) {
    out.mean_delta.degenerate = true;
    return out;
  }
  out.mean_delta = bootstrap_ci(diffs, rng, n_resamples);
  out.median = quantile(diffs, 0.5);
  out.iqr_lo = quantile(diffs, 0.25);
  out.iqr_hi = quantile(diffs, 0.75);
  return out;
}

}  // namespace

DeltaReport paired_delta(const AlignmentReport& with_time,
                         const AlignmentReport& without_time,
                         const Rng& rng, std::size_t n_resamples) {
  if (with_time.subjects.size() != without_time.subjects.size())
    throw DataError("paired reports cover different subjects");
  for (std::size_t i = 0; i < with_time.subjects.size(); ++i)
    if (with_time.subjects[i].subject != without_time.subjects[i].subject)
      throw DataError("paired reports cover different subjects");

  DeltaReport rep;
  std::vector<double> d_pos, d_neg, d_e2p, d_p2e;
  for (std::size_t i = 0; i < with_time.subjects.size(); ++i) {
    const SubjectAlignment& a = with_time.subjects[i];
    const SubjectAlignment& b = without_time.subjects[i];
    rep.subjects.push_back(a.subject);
    d_pos.push_back(a.cos_pos - b.cos_pos);
    if (a.cos_neg_defined && b.cos_neg_defined)
      d_neg.push_back(a.cos_neg - b.cos_neg);
    d_e2p.push_back(a.retr_e2p - b.retr_e2p);
    d_p2e.push_back(a.retr_p2e - b.retr_p2e);
  }
  rep.cos_pos = summarize_delta(d_pos, rng.derive("cos_pos"), n_resamples);
  rep.cos_neg = summarize_delta(d_neg, rng.derive("cos_neg"), n_resamples);
  rep.retr_e2p = summarize_delta(d_e2p, rng.derive("retr_e2p"), n_resamples);
  rep.retr_p2e = summarize_delta(d_p2e, rng.derive("retr_p2e"), n_resamples);
  return rep;
}

void to_json(nlohmann::json& j, const CiValue& v) {
  j = {{"mean", v.mean},
       {"lo", v.lo},
       {"hi", v.hi},
       {"degenerate", v.degenerate}};
}

void from_json(const nlohmann::json& j, CiValue& v) {
  j.at("mean").get_to(v.mean);
  j.at("lo").get_to(v.lo);
  j.at("hi").get_to(v.hi);
  j.at("degenerate").get_to(v.degenerate);
}

void to_json(nlohmann::json& j, const SubjectAlignment& v) {
  j = {{"subject", v.subject},
       {"cos_pos", v.cos_pos},
       {"cos_neg", v.cos_neg},
       {"cos_neg_defined", v.cos_neg_defined},
       {"retr_e2p", v.retr_e2p},
       {"retr_p2e", v.retr_p2e},
       {"windows", v.windows}};
}

void from_json(const nlohmann::json& j, SubjectAlignment& v) {
  j.at("subject").get_to(v.subject);
  j.at("cos_pos").get_to(v.cos_pos);
  j.at("cos_neg").get_to(v.cos_neg);
  j.at("cos_neg_defined").get_to(v.cos_neg_defined);
  j.at("retr_e2p").get_to(v.retr_e2p);
  j.at("retr_p2e").get_to(v.retr_p2e);
  j.at("windows").get_to(v.windows);
}

void to_json(nlohmann::json& j, const AlignmentReport& v) {
  j = {{"tau", v.tau},          {"subjects", v.subjects},
       {"cos_pos", v.cos_pos},  {"cos_neg", v.cos_neg},
       {"retr_e2p", v.retr_e2p}, {"retr_p2e", v.retr_p2e}};
}

void from_json(const nlohmann::json& j, AlignmentReport& v) {
  j.at("tau").get_to(v.tau);
  j.at("subjects").get_to(v.subjects);
  j.at("cos_pos").get_to(v.cos_pos);
  j.at("cos_neg").get_to(v.cos_neg);
  j.at("retr_e2p").get_to(v.retr_e2p);
  j.at("retr_p2e").get_to(v.retr_p2e);
}

void to_json(nlohmann::json& j, const BinEdges& v) {
  j = {{"lo", v.lo}, {"hi", v.hi}, {"tertile", v.tertile}};
}

void from_json(const nlohmann::json& j, BinEdges& v) {
  j.at("lo").get_to(v.lo);
  j.at("hi").get_to(v.hi);
  j.at("tertile").get_to(v.tertile);
}

void to_json(nlohmann::json& j, const ProbeMetrics& v) {
  j = {{"accuracy", v.accuracy},
       {"macro_f1", v.macro_f1},
       {"test_windows", v.test_windows},
       {"missing_train_class", v.missing_train_class}};
}

void from_json(const nlohmann::json& j, ProbeMetrics& v) {
  j.at("accuracy").get_to(v.accuracy);
  j.at("macro_f1").get_to(v.macro_f1);
  j.at("test_windows").get_to(v.test_windows);
  j.at("missing_train_class").get_to(v.missing_train_class);
}

void to_json(nlohmann::json& j, const ProbeFold& v) {
  j = {{"arousal", v.arousal},
       {"valence", v.valence},
       {"edges_arousal", v.edges_arousal},
       {"edges_valence", v.edges_valence}};
}

void from_json(const nlohmann::json& j, ProbeFold& v) {
  j.at("arousal").get_to(v.arousal);
  j.at("valence").get_to(v.valence);
  j.at("edges_arousal").get_to(v.edges_arousal);
  j.at("edges_valence").get_to(v.edges_valence);
}

void to_json(nlohmann::json& j, const SubjectProbe& v) {
  j = {{"subject", v.subject}, {"fold", v.fold}};
}

void from_json(const nlohmann::json& j, SubjectProbe& v) {
  j.at("subject").get_to(v.subject);
  j.at("fold").get_to(v.fold);
}

void to_json(nlohmann::json& j, const ProbeReport& v) {
  j = {{"subjects", v.subjects},
       {"acc_arousal", v.acc_arousal},
       {"f1_arousal", v.f1_arousal},
       {"acc_valence", v.acc_valence},
       {"f1_valence", v.f1_valence}};
}

void from_json(const nlohmann::json& j, ProbeReport& v) {
  j.at("subjects").get_to(v.subjects);
  j.at("acc_arousal").get_to(v.acc_arousal);
  j.at("f1_arousal").get_to(v.f1_arousal);
  j.at("acc_valence").get_to(v.acc_valence);
  j.at("f1_valence").get_to(v.f1_valence);
}

void to_json(nlohmann::json& j, const DeltaSummary& v) {
  j = {{"per_subject", v.per_subject},
       {"mean_delta", v.mean_delta},
       {"median", v.median},
       {"iqr_lo", v.iqr_lo},
       {"iqr_hi", v.iqr_hi},
       {"subjects", v.subjects}};
}

void from_json(const nlohmann::json& j, DeltaSummary& v) {
  j.at("per_subject").get_to(v.per_subject);
  j.at("mean_delta").get_to(v.mean_delta);
  j.at("median").get_to(v.median);
  j.at("iqr_lo").get_to(v.iqr_lo);
  j.at("iqr_hi").get_to(v.iqr_hi);
  j.at("subjects").get_to(v.subjects);
}

void to_json(nlohmann::json& j, const DeltaReport& v) {
  j = {{"subjects", v.subjects},
       {"cos_pos", v.cos_pos},
       {"cos_neg", v.cos_neg},
       {"retr_e2p", v.retr_e2p},
       {"retr_p2e", v.retr_p2e}};
}

void from_json(const nlohmann::json& j, DeltaReport& v) {
  j.at("subjects").get_to(v.subjects);
  j.at("cos_pos").get_to(v.cos_pos);
  j.at("cos_neg").get_to(v.cos_neg);
  j.at("retr_e2p").get_to(v.retr_e2p);
  j.at("retr_p2e").get_to(v.retr_p2e);
}

}  // namespace ctaf::eval
