#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctaf/data/types.hpp"
#include "ctaf/model/model.hpp"
#include "ctaf/num/graph.hpp"
#include "ctaf/num/rng.hpp"
#include "ctaf/num/tensor.hpp"

namespace ctaf::obj {

// Weights and shape parameters of the training objective. `beta_align` and
// `jitter_amp` are the scheduled quantities; the rest stay constant over a
// run.
struct LossWeights {
  double temp = 0.1;           // shared temperature for all similarities
  double beta_align = 1.0;     // token-alignment weight
  double alpha_fuse = 0.5;     // fused-summary tether weight
  double lambda_inv = 1.0;
  double lambda_var = 1.0;
  double lambda_cov = 1.0;
  double lambda_view = 0.5;
  double lambda_cons = 0.2;
  double lambda_sup = 0.1;
  double sigma_align = 1.0;    // Gaussian target width, seconds
  double jitter_amp = 0.25;    // max per-token time jitter, seconds
  bool fuse_on_projections = false;  // tether projections instead of summaries

  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

// Per-term scalars of one objective evaluation plus the weighted total.
struct LossBreakdown {
  double con = 0.0;
  double align = 0.0;
  double fuse = 0.0;
  double inv = 0.0;
  double var = 0.0;
  double cov = 0.0;
  double view = 0.0;
  double cons = 0.0;
  double sup = 0.0;
  double total = 0.0;
};

// Label normalization statistics of one training fold (arousal, valence).
struct LabelStats {
  std::array<double, 2> mu{0.0, 0.0};
  std::array<double, 2> sigma{1.0, 1.0};
  std::size_t labeled = 0;  // windows the stats were computed from
};

// Per-dimension mean and population standard deviation over the labeled
// windows. A zero spread falls back to 1 so normalization stays defined;
// with no labeled windows mu = 0, sigma = 1 and `labeled` is 0.
LabelStats compute_label_stats(const std::vector<data::ClipWindow>& windows);

// Soft correspondence targets from time deltas: row (b, s) holds
// exp(-(t_q - t_k)^2 / (2 sigma^2)) over valid keys, normalized to sum 1.
// Rows at invalid queries, columns at invalid keys, and rows with no valid
// key are exactly zero.
num::Tensor gaussian_targets(const num::Tensor& t_q, const num::Tensor& t_k,
                             const num::Tensor& m_q, const num::Tensor& m_k,
                             double sigma);

// Two-direction InfoNCE between matched rows of two L2-normalized [B, P]
// projection batches, each direction averaged over the batch. B = 1 has a
// single candidate and contributes a constant 0.
num::Var info_nce(num::Graph& g, num::Var z_a, num::Var z_b, double temp);

struct AlignStats {
  std::size_t counted_rows = 0;  // valid queries with at least one valid key
  std::size_t skipped_rows = 0;  // valid queries with no valid key
};

// Cross-entropy from Gaussian time targets to the softmax of token-projection
// similarities, both directions averaged, halved. Timestamps may differ from
// the ones the tokens were encoded with (targets follow the original clock,
// similarities the augmented one). Masks must match the encoded batch.
num::Var soft_alignment_loss(num::Graph& g, num::Var ptok_e, num::Var ptok_p,
                             const num::Tensor& t_e, const num::Tensor& t_p,
                             const num::Tensor& m_e, const num::Tensor& m_p,
                             double sigma, double temp,
                             AlignStats* stats = nullptr);

// Batch mean of the squared distance between the fused vector and the
// average of the two stream vectors.
num::Var fuse_loss(num::Graph& g, num::Var z_f, num::Var z_e, num::Var z_p);

struct VicregTerms {
  num::Var inv, var, cov;
  bool var_cov_defined = false;  // false at B = 1 (spread undefined)
};

// Invariance / variance-hinge / off-diagonal-covariance penalties on the
// pre-normalization projections of the two streams.
VicregTerms vicreg(num::Graph& g, num::Var p_e, num::Var p_p);

// Within-modality InfoNCE between the two views' clip projections, averaged
// over modalities.
num::Var view_contrast(num::Graph& g, num::Var p_e1, num::Var p_e2,
                       num::Var p_p1, num::Var p_p2, double temp);

// Batch mean squared drift of the fused summary between two encodings.
num::Var consistency_loss(num::Graph& g, num::Var z_f1, num::Var z_f2);

// Mean over labeled windows of the squared error against normalized labels;
// unlabeled windows carry exactly zero gradient. No labeled windows in the
// batch makes the term a constant 0 (reported via `any_labeled`).
num::Var supervised_loss(num::Graph& g, num::Var y_hat, const num::Tensor& y,
                         const std::vector<bool>& has_label,
                         const LabelStats& stats,
                         bool* any_labeled = nullptr);

// One graph node per term; an invalid Var means the term was skipped and
// contributes 0.
struct TermVars {
  num::Var con, align, fuse, inv, var, cov, view, cons, sup;
};

// Weighted sum of the computed terms. Fills `out` with the per-term scalars
// (0 for skipped terms) and the total.
num::Var total_loss(num::Graph& g, const TermVars& terms,
                    const LossWeights& w, LossBreakdown* out);

// Linear warm-up of the scheduled quantities: beta_align and jitter_amp rise
// from 0 to their maxima over the first half of training, then hold; all
// other fields pass through unchanged.
LossWeights schedule(std::size_t step, std::size_t total_steps,
                     const LossWeights& maxima);

// Per window, with probability `rate`, zeroes the features and mask of one
// fair-coin modality; a window whose other stream has no valid token is left
// alone so no window ends up empty on both sides. Draws are derived per
// window index, independent of call order.
model::BatchInputs modality_dropout(model::BatchInputs in, double rate,
                                    const num::Rng& rng);

// Augmentation shape for the two stochastic views of a batch.
struct ViewConfig {
  double jitter_amp = 0.0;      // seconds, uniform per token, per view
  double warp_frac = 0.1;       // knot displacement as fraction of window
  double extra_mask_rate = 0.1; // extra per-bin drop probability
  double window_len = 5.0;      // seconds
};

// Two jittered encodings of each window: one monotone 3-knot time warp and
// one extra token mask are drawn per window and shared across both modalities
// and both views; per-token jitters are drawn independently per view. The
// extra mask never empties a modality that had a valid token.
std::pair<model::BatchInputs, model::BatchInputs> make_views(
    const model::BatchInputs& in, const ViewConfig& cfg, const num::Rng& rng);

struct ObjectiveResult {
  num::Var total;
  LossBreakdown breakdown;
  model::ForwardVars fwd1, fwd2;  // fwd2 only when the second view ran
  bool second_view_ran = false;
  AlignStats align;
  bool vicreg_spread_skipped = false;  // B = 1
  bool any_labeled = false;
};

// Full objective on a batch: encodes view1 (all main terms) and view2 (the
// cross-view terms; skipped when both their weights are 0). The alignment
// targets use the original pre-augmentation timestamps.
ObjectiveResult compute_objective(const model::CtafModel& m,
                                  model::TapeContext& ctx,
                                  const model::BatchInputs& original,
                                  const model::BatchInputs& view1,
                                  const model::BatchInputs& view2,
                                  const LossWeights& w,
                                  const LabelStats& stats);

}  // namespace ctaf::obj
