#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctaf/data/types.hpp"
#include "ctaf/num/tensor.hpp"

namespace ctaf::data {

// Two-modality generator driven by a shared latent AR(1) process: EEG tokens
// read the latent at bin centers, phys tokens read a smoothed copy shifted by
// a known per-clip lag. The stored lag is the ground truth that makes learned
// alignments checkable.
struct SynthConfig {
  std::size_t n_subjects = 8;
  std::size_t clips_per_subject = 120;
  double lag_min = 0.5;   // seconds, phys relative to EEG
  double lag_max = 2.0;
  double dropout_rate = 0.1;  // per-token Bernoulli mask-out probability
  double noise_std = 0.5;
  double ar_coefficient = 0.9;  // latent AR(1) coefficient at the fine grid
  std::uint64_t seed = 1;
  double window_len = 5.0;
  std::size_t n_bins = 20;
  // Linear lag drift across the window (seconds, end minus start); 0 keeps
  // the lag constant. Nonzero values support sensitivity studies only.
  double lag_drift = 0.0;

  // Throws ConfigError on out-of-range fields.
  void validate() const;
};

struct GroundTruth {
  std::string clip;
  std::string subject;
  double lag_s = 0.0;
  num::Tensor latent;  // [n_fine, 3] shared process both readouts sampled
  double fine_t0 = 0.0;
  double fine_dt = 0.0;
  double arousal_src = 0.0;  // clip-mean latent components before the
  double valence_src = 0.0;  // monotone map onto the 1..5 label scale
};

struct SynthDataset {
  std::vector<ClipWindow> windows;
  std::vector<GroundTruth> truth;
};

// Deterministic in (config, subject_index, clip_index); draws come from a
// stream derived per clip, so generation order cannot change any output.
std::pair<ClipWindow, GroundTruth> generate_clip(const SynthConfig& cfg,
                                                 std::size_t subject_index,
                                                 std::size_t clip_index);

// The subject's fixed readout matrices (eeg [10 x 3], phys [4 x 3]), exposed
// so their cross-subject variation is inspectable.
std::pair<num::Tensor, num::Tensor> subject_mixing(const SynthConfig& cfg,
                                                   std::size_t subject_index);

SynthDataset generate_dataset(const SynthConfig& cfg);

}  // namespace ctaf::data
