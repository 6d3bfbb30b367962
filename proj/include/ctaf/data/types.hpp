#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ctaf/num/tensor.hpp"

namespace ctaf::data {

// One modality's token sequence within a window. Tokens are fixed-width time
// bins; a token with m = 0 carries no real data and must never influence any
// downstream output.
struct ModalSequence {
  num::Tensor X;          // [S, D] token features
  std::vector<double> t;  // token timestamps in seconds, non-decreasing
  std::vector<double> m;  // validity mask, each entry 0 or 1

  // An all-masked sequence is normally a validation error; producers that
  // legitimately emit one (e.g. a modality absent from the source data) set
  // this flag.
  bool explicit_empty = false;

  std::size_t tokens() const { return t.size(); }
  std::size_t channels() const {
    return X.shape().size() == 2 ? X.shape()[1] : 0;
  }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (double v : m) n += (v == 1.0);
    return n;
  }
};

struct LabelAV {
  double arousal = 0.0;
  double valence = 0.0;
};

struct ClipWindow {
  ModalSequence eeg;
  ModalSequence phys;
  std::string subject;
  std::string clip;  // record id, used to join ground-truth sidecars
  std::optional<LabelAV> label;
  double win_start = 0.0;
  double win_end = 0.0;
};

// Windows padded to common per-modality token counts. Pad tokens carry m = 0,
// zero features, and the window-end timestamp; original lengths are kept so
// unpad can reproduce each input window exactly.
struct Batch {
  std::vector<ClipWindow> windows;
  std::vector<std::size_t> eeg_len;
  std::vector<std::size_t> phys_len;
  std::size_t se = 0;
  std::size_t sp = 0;
};

// Checks shapes, mask domain, timestamp monotonicity and span containment,
// label finiteness, and feature finiteness at valid tokens. Non-finite values
// at masked tokens are tolerated and zeroed in place. Returns a list of
// violations; empty means the window is well formed.
std::vector<std::string> validate_window(ClipWindow& w);

// Pads windows to common token counts. Throws DataError on an empty list or
// mixed channel counts.
Batch collate(const std::vector<ClipWindow>& windows);

// Recovers window i of the batch with padding removed.
ClipWindow unpad(const Batch& b, std::size_t i);

// Fraction of equal-width time bins (max(S_e, S_p) bins spanning the window)
// in which both modalities have at least one valid token.
double joint_coverage(const ClipWindow& w);

}  // namespace ctaf::data
