#include "ctaf/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include "ctaf/common/errors.hpp"
#include "ctaf/num/graph.hpp"
#include "ctaf/num/rng.hpp"

namespace ctaf::train {

using data::ClipWindow;
using model::BatchInputs;
using model::CtafModel;
using model::FusionOutput;
using num::Graph;
using num::Rng;
using num::Tensor;

std::vector<FoldPlan> loocv_splits(std::vector<std::string> subjects) {
  std::sort(subjects.begin(), subjects.end());
  if (subjects.size() < 2)
    throw DataError("loocv_splits: need at least two subjects");
  if (std::adjacent_find(subjects.begin(), subjects.end()) != subjects.end())
    throw DataError("loocv_splits: duplicate subject id");
  const std::size_t n = subjects.size();
  std::vector<FoldPlan> folds(n);
  for (std::size_t i = 0; i < n; ++i) {
    FoldPlan& f = folds[i];
    f.index = i;
    f.held_out = subjects[i];
    f.val_subject = subjects[(i + 1) % n];
    for (const auto& s : subjects)
      if (s != f.held_out && s != f.val_subject) f.train_subjects.push_back(s);
    if (f.train_subjects.empty()) f.train_subjects.push_back(f.val_subject);
  }
  return folds;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(modality_drop_rate >= 0.0 && modality_drop_rate <= 1.0))
    throw ConfigError("modality_drop_rate must be in [0, 1]");
  if (!(view_mask_rate >= 0.0 && view_mask_rate < 1.0))
    throw ConfigError("view_mask_rate must be in [0, 1)");
  if (!(warp_frac >= 0.0 && warp_frac < 0.25))
    throw ConfigError("warp_frac must be in [0, 0.25)");
  if (!(window_len > 0.0)) throw ConfigError("window_len must be > 0");
  weights.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"weights", c.weights},
                     {"use_time", c.use_time},
                     {"modality_drop_rate", c.modality_drop_rate},
                     {"view_mask_rate", c.view_mask_rate},
                     {"warp_frac", c.warp_frac},
                     {"window_len", c.window_len}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  if (j.contains("weights")) j.at("weights").get_to(c.weights);
  c.use_time = j.value("use_time", c.use_time);
  c.modality_drop_rate = j.value("modality_drop_rate", c.modality_drop_rate);
  c.view_mask_rate = j.value("view_mask_rate", c.view_mask_rate);
  c.warp_frac = j.value("warp_frac", c.warp_frac);
  c.window_len = j.value("window_len", c.window_len);
}

namespace {

std::vector<ClipWindow> subset_by_subject(const std::vector<ClipWindow>& all,
                                          const std::set<std::string>& keep) {
  std::vector<ClipWindow> out;
  for (const auto& w : all)
    if (keep.count(w.subject)) out.push_back(w);
  return out;
}

// Mean objective over consecutive batches, weighted by batch size. The view
// draws are keyed on the fold stream and batch position only, so every epoch
// scores the same augmented inputs.
double validation_objective(const CtafModel& m,
                            const std::vector<ClipWindow>& val_w,
                            const TrainConfig& tcfg,
                            const obj::LabelStats& label_stats,
                            const Rng& fold_rng) {
  obj::LossWeights vw = tcfg.weights;
  vw.lambda_sup = 0.0;
  obj::ViewConfig vc;
  vc.jitter_amp = tcfg.weights.jitter_amp;
  vc.warp_frac = tcfg.warp_frac;
  vc.extra_mask_rate = tcfg.view_mask_rate;
  vc.window_len = tcfg.window_len;
  double sum = 0.0;
  std::size_t count = 0, batch_index = 0;
  for (std::size_t off = 0; off < val_w.size();
       off += tcfg.batch_size, ++batch_index) {
    const std::size_t take = std::min(tcfg.batch_size, val_w.size() - off);
    std::vector<ClipWindow> chunk(val_w.begin() + off,
                                  val_w.begin() + off + take);
    BatchInputs in = model::make_inputs(data::collate(chunk));
    auto views = obj::make_views(
        in, vc, fold_rng.derive("val", {static_cast<std::uint64_t>(batch_index)}));
    Graph g;
    model::TapeContext ctx(g, const_cast<num::ParamStore&>(m.params));
    obj::ObjectiveResult r = obj::compute_objective(
        m, ctx, in, views.first, views.second, vw, label_stats);
    if (!std::isfinite(r.breakdown.total))
      throw NumericError("validation objective is not finite");
    sum += r.breakdown.total * static_cast<double>(take);
    count += take;
  }
  return sum / static_cast<double>(count);
}

}  // namespace

FoldResult train_fold(const FoldPlan& plan, const model::ModelConfig& mcfg,
                      const TrainConfig& tcfg,
                      const std::vector<ClipWindow>& windows) {
  tcfg.validate();
  model::ModelConfig cfg = mcfg;
  cfg.use_time = tcfg.use_time;
  cfg.validate();

  std::set<std::string> train_set(plan.train_subjects.begin(),
                                  plan.train_subjects.end());
  if (train_set.count(plan.held_out) || plan.val_subject == plan.held_out)
    throw DataError("train_fold: held-out subject leaks into the fold");
  std::set<std::string> fold_set = train_set;
  fold_set.insert(plan.val_subject);

  FoldResult res;
  res.norm_stats = data::compute_norm_stats(windows, fold_set);
  std::vector<ClipWindow> train_w =
      data::normalize(subset_by_subject(windows, train_set), res.norm_stats);
  std::vector<ClipWindow> val_w = data::normalize(
      subset_by_subject(windows, {plan.val_subject}), res.norm_stats);
  if (train_w.empty()) throw DataError("train_fold: no training windows");
  if (val_w.empty()) throw DataError("train_fold: empty validation slice");
  res.label_stats = obj::compute_label_stats(train_w);
  res.train_windows = train_w.size();
  res.val_windows = val_w.size();

  const Rng fold_rng =
      Rng(tcfg.seed).derive("fold", {static_cast<std::uint64_t>(plan.index)});
  CtafModel m;
  m.init(cfg, fold_rng.derive("model"));

  AdamWConfig ocfg;
  ocfg.lr = tcfg.lr;
  ocfg.weight_decay = tcfg.weight_decay;
  AdamW opt(ocfg);

  const std::size_t n_train = train_w.size();
  const std::size_t steps_per_epoch =
      (n_train + tcfg.batch_size - 1) / tcfg.batch_size;
  const std::size_t total_steps = tcfg.epochs * steps_per_epoch;

  obj::ViewConfig vc_base;
  vc_base.warp_frac = tcfg.warp_frac;
  vc_base.extra_mask_rate = tcfg.view_mask_rate;
  vc_base.window_len = tcfg.window_len;

  double best_val = std::numeric_limits<double>::infinity();
  std::size_t global_step = 0;
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    Rng shuffle_rng =
        fold_rng.derive("shuffle", {static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order);
    double epoch_total = 0.0;

    for (std::size_t off = 0; off < n_train; off += tcfg.batch_size) {
      const std::size_t take = std::min(tcfg.batch_size, n_train - off);
      std::vector<ClipWindow> chunk;
      chunk.reserve(take);
      for (std::size_t i = 0; i < take; ++i)
        chunk.push_back(train_w[order[off + i]]);

      const obj::LossWeights lw =
          obj::schedule(global_step, total_steps, tcfg.weights);
      const Rng step_rng = fold_rng.derive(
          "step", {static_cast<std::uint64_t>(global_step)});
      BatchInputs in = obj::modality_dropout(
          model::make_inputs(data::collate(chunk)), tcfg.modality_drop_rate,
          step_rng.derive("drop"));
      obj::ViewConfig vc = vc_base;
      vc.jitter_amp = lw.jitter_amp;
      auto views = obj::make_views(in, vc, step_rng.derive("views"));

      Graph g;
      model::TapeContext ctx(g, m.params);
      obj::ObjectiveResult r = obj::compute_objective(
          m, ctx, in, views.first, views.second, lw, res.label_stats);
      if (!std::isfinite(r.breakdown.total)) {
        std::ostringstream msg;
        msg << "fold " << plan.held_out << " diverged at epoch " << epoch
            << " step " << global_step << " (total=" << r.breakdown.total
            << ")";
        throw NumericError(msg.str());
      }
      g.backward(r.total);
      opt.step(m.params, ctx.take_grads());

      StepLog sl;
      sl.epoch = epoch;
      sl.step = global_step;
      sl.loss = r.breakdown;
      sl.beta_align = lw.beta_align;
      sl.jitter_amp = lw.jitter_amp;
      res.steps.push_back(sl);
      epoch_total += r.breakdown.total;
      ++global_step;
    }

    EpochLog el;
    el.epoch = epoch;
    el.train_total = epoch_total / static_cast<double>(steps_per_epoch);
    el.val_objective =
        validation_objective(m, val_w, tcfg, res.label_stats, fold_rng);
    res.history.push_back(el);
    if (el.val_objective < best_val) {
      best_val = el.val_objective;
      res.best_epoch = epoch;
      res.best_params = m.params;
    }
  }
  return res;
}

namespace {

Tensor slice_rows(const Tensor& t, std::size_t b, std::size_t rows) {
  const std::size_t s = t.dim(1), d = t.dim(2);
  Tensor out({1, rows, d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out.at3(0, r, c) = t.at3(b, r, c);
  return out;
}

Tensor slice_map(const Tensor& t, std::size_t b, std::size_t rows,
                 std::size_t cols) {
  Tensor out({1, rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at3(0, r, c) = t.at3(b, r, c);
  return out;
}

Tensor slice_vec(const Tensor& t, std::size_t b) {
  const std::size_t d = t.dim(1);
  Tensor out({1, d});
  for (std::size_t c = 0; c < d; ++c) out.at2(0, c) = t.at2(b, c);
  return out;
}

}  // namespace

std::vector<FusionOutput> embed_dataset(const CtafModel& m,
                                        const std::vector<ClipWindow>& windows,
                                        std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("embed_dataset: batch_size >= 1");
  std::vector<FusionOutput> out;
  out.reserve(windows.size());
  for (std::size_t off = 0; off < windows.size(); off += batch_size) {
    const std::size_t take = std::min(batch_size, windows.size() - off);
    std::vector<ClipWindow> chunk(windows.begin() + off,
                                  windows.begin() + off + take);
    for (const auto& w : chunk) {
      if (w.eeg.channels() != m.cfg.eeg_channels ||
          w.phys.channels() != m.cfg.phys_channels)
        throw DataError("embed_dataset: channel counts do not match the model");
    }
    data::Batch batch = data::collate(chunk);
    BatchInputs in = model::make_inputs(batch);
    Graph g;
    model::TapeContext ctx(g, const_cast<num::ParamStore&>(m.params));
    model::ForwardVars f = m.forward(ctx, in);
    FusionOutput full = model::extract(g, f);
    for (std::size_t b = 0; b < take; ++b) {
      const std::size_t le = batch.eeg_len[b], lp = batch.phys_len[b];
      FusionOutput one;
      one.ht_e = slice_rows(full.ht_e, b, le);
      one.ht_p = slice_rows(full.ht_p, b, lp);
      one.a_e2p = slice_map(full.a_e2p, b, le, lp);
      one.a_p2e = slice_map(full.a_p2e, b, lp, le);
      one.z_e = slice_vec(full.z_e, b);
      one.z_p = slice_vec(full.z_p, b);
      one.gate = slice_vec(full.gate, b);
      one.z_gate = slice_vec(full.z_gate, b);
      one.z_tok = slice_vec(full.z_tok, b);
      one.z_f = slice_vec(full.z_f, b);
      one.p_e = slice_vec(full.p_e, b);
      one.p_p = slice_vec(full.p_p, b);
      one.p_f = slice_vec(full.p_f, b);
      one.ptok_e = slice_rows(full.ptok_e, b, le);
      one.ptok_p = slice_rows(full.ptok_p, b, lp);
      one.y_hat = slice_vec(full.y_hat, b);
      one.empty_e = {full.empty_e[b]};
      one.empty_p = {full.empty_p[b]};
      out.push_back(std::move(one));
    }
  }
  return out;
}

}  // namespace ctaf::train
