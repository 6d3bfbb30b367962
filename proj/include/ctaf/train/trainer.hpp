#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctaf/data/ingest.hpp"
#include "ctaf/data/types.hpp"
#include "ctaf/model/model.hpp"
#include "ctaf/num/params.hpp"
#include "ctaf/obj/objectives.hpp"
#include "ctaf/train/optim.hpp"

namespace ctaf::train {

// One cross-validation fold: the held-out subject never contributes to
// training, validation, or any statistic; the validation slice is one full
// rotating subject excluded from gradient updates so checkpoint selection
// keeps a subject-level generalization signal.
struct FoldPlan {
  std::size_t index = 0;
  std::string held_out;
  std::vector<std::string> train_subjects;
  std::string val_subject;
};

// One fold per subject; fold i holds out subject i (sorted order) and
// validates on the next subject in the rotation. Throws DataError on fewer
// than two subjects or duplicates. With exactly two subjects the single
// remaining subject serves as both train and validation slice.
std::vector<FoldPlan> loocv_splits(std::vector<std::string> subjects);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  obj::LossWeights weights;        // scheduled maxima
  bool use_time = true;            // overrides the model config flag
  double modality_drop_rate = 0.1;
  double view_mask_rate = 0.1;
  double warp_frac = 0.1;
  double window_len = 5.0;         // seconds, for the view augmentations

  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step index
  obj::LossBreakdown loss;
  double beta_align = 0.0;  // scheduled values in effect
  double jitter_amp = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_total = 0.0;    // mean step total over the epoch
  double val_objective = 0.0;  // label-free objective on the val slice
};

struct FoldResult {
  num::ParamStore best_params;  // snapshot at the best validation epoch
  std::size_t best_epoch = 0;   // 1-based, matches history entries
  std::vector<EpochLog> history;
  std::vector<StepLog> steps;
  obj::LabelStats label_stats;  // from gradient-train windows only
  data::NormStats norm_stats;   // from train plus validation subjects
  std::size_t train_windows = 0;
  std::size_t val_windows = 0;
};

// Runs one fold end to end: normalizes with fold-local statistics, trains
// with shuffled batches, modality dropout, two augmented views, and the
// scheduled weights, then selects the checkpoint minimizing the validation
// objective (the weighted total without its supervised term, weights frozen
// at their maxima, fixed validation augmentations). Ties keep the earlier
// epoch. A non-finite loss aborts the fold with NumericError.
FoldResult train_fold(const FoldPlan& plan, const model::ModelConfig& mcfg,
                      const TrainConfig& tcfg,
                      const std::vector<data::ClipWindow>& windows);

// Deterministic forward pass over consecutive batches; one output per window,
// token-level fields trimmed to the window's own lengths. Throws DataError
// when the model width disagrees with the window channel counts.
std::vector<model::FusionOutput> embed_dataset(
    const model::CtafModel& m, const std::vector<data::ClipWindow>& windows,
    std::size_t batch_size);

}  // namespace ctaf::train
