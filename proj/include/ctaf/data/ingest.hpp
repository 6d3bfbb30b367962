#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ctaf/data/types.hpp"

namespace ctaf::data {

// One sample of one named channel in a long-format stream dump.
struct StreamRecord {
  std::string subject;
  std::string channel;
  double timestamp = 0.0;  // seconds
  double value = 0.0;
};

// Declares which channels exist, their fixed output order, and the windowing
// geometry. Channel order here defines feature column order everywhere.
struct Manifest {
  std::vector<std::string> eeg_channels;
  std::vector<std::string> phys_channels;
  double window_len = 5.0;
  std::size_t n_bins = 20;
  // Channels resampled by last-observation-carried-forward before binning
  // (slow derived signals such as heart rate).
  std::vector<std::string> locf_channels;
  // Optional label channels; window label = mean of their samples in the
  // window. Empty string disables that component.
  std::string arousal_channel = "arousal";
  std::string valence_channel = "valence";

  void validate() const;
};

// Ten NeuroSky-style EEG channels (eight band powers plus attention and
// meditation) and the four Empatica-style physiology channels.
Manifest default_manifest();

// Strict JSON parse: unknown keys are ConfigErrors. Missing keys keep the
// default_manifest values.
Manifest load_manifest(const std::string& path);

// Tab-separated long format with header subject/channel/timestamp_s/value.
std::vector<StreamRecord> read_stream_tsv(const std::string& path);

// Per-bin mean of the samples that fall in each of n_bins equal-width bins
// over [start, end); has[i] marks bins that received at least one sample.
// locf carries the last seen value into later empty bins.
struct BinnedChannel {
  std::vector<double> value;
  std::vector<char> has;
};
BinnedChannel bin_channel(const std::vector<std::pair<double, double>>& samples,
                          double start, double end, std::size_t n_bins,
                          bool locf);

// Bins one subject's records over one window span into the two modality
// sequences, channel columns in manifest order. A token is valid when any of
// its modality's channels has data in the bin; absent channels are
// zero-filled. Unknown channel names are DataErrors.
std::pair<ModalSequence, ModalSequence> bin_streams(
    const std::vector<StreamRecord>& records, double start, double end,
    const Manifest& mf);

// Cuts every subject's records into consecutive windows of mf.window_len
// (aligned to multiples of the window length) and assembles ClipWindows.
// Labels come from the manifest's label channels when both have samples in
// the window. Windows with no valid token in either modality are dropped.
std::vector<ClipWindow> ingest_streams(const std::vector<StreamRecord>& records,
                                       const Manifest& mf);

// Per subject and channel normalization statistics, computed on training-fold
// windows only. The pooled block is the fallback applied to subjects absent
// from the training fold (the held-out subject under LOOCV).
struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
  bool constant = false;
};
struct SubjectStats {
  std::vector<ChannelStats> eeg;
  std::vector<ChannelStats> phys;
};
struct NormStats {
  std::map<std::string, SubjectStats> by_subject;
  SubjectStats pooled;
  std::size_t eeg_channels = 0;
  std::size_t phys_channels = 0;
};

// Uses only windows whose subject is in train_subjects; moments are taken
// over valid tokens. Channels with vanishing spread are flagged constant.
NormStats compute_norm_stats(const std::vector<ClipWindow>& windows,
                             const std::set<std::string>& train_subjects);

// (x - mean) / std per subject and channel at valid tokens; masked tokens
// stay untouched. Constant channels normalize to 0. Subjects missing from
// the stats fall back to the pooled block. Not idempotent.
std::vector<ClipWindow> normalize(const std::vector<ClipWindow>& windows,
                                  const NormStats& stats);

// Keeps windows with joint_coverage >= threshold.
std::vector<ClipWindow> filter_coverage(const std::vector<ClipWindow>& windows,
                                        double threshold);

}  // namespace ctaf::data
