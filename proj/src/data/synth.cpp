#include "ctaf/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ctaf/common/errors.hpp"
#include "ctaf/num/rng.hpp"

namespace ctaf::data {
namespace {

constexpr double kFineHz = 50.0;
constexpr std::size_t kLatentDim = 3;
constexpr double kMaHalf = 0.05;  // phys smoothing half-width, seconds
constexpr double kLabelGain = 4.0;
constexpr std::size_t kEegChannels = 10;
constexpr std::size_t kPhysChannels = 4;

std::string subject_id(std::size_t subject_index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02zu", subject_index + 1);
  return buf;
}

std::string clip_id(std::size_t subject_index, std::size_t clip_index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "S%02zu_c%03zu", subject_index + 1,
                clip_index);
  return buf;
}

// Per-subject readout matrix with unit-norm rows, so every channel carries
// unit signal variance at stationarity.
num::Tensor mixing_matrix(num::Rng& rng, std::size_t channels) {
  num::Tensor A({channels, kLatentDim});
  for (std::size_t c = 0; c < channels; ++c) {
    double norm2 = 0.0;
    for (std::size_t k = 0; k < kLatentDim; ++k) {
      const double v = rng.normal();
      A.at2(c, k) = v;
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
    for (std::size_t k = 0; k < kLatentDim; ++k) A.at2(c, k) *= inv;
  }
  return A;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_subjects < 1) throw ConfigError("synth: n_subjects must be >= 1");
  if (clips_per_subject < 1)
    throw ConfigError("synth: clips_per_subject must be >= 1");
  if (!(window_len > 0.0)) throw ConfigError("synth: window_len must be > 0");
  if (n_bins < 1) throw ConfigError("synth: n_bins must be >= 1");
  if (!(lag_min >= 0.0) || !(lag_max >= lag_min) || !(lag_max < window_len))
    throw ConfigError("synth: lag range must satisfy 0 <= min <= max < window_len");
  if (!(dropout_rate >= 0.0) || !(dropout_rate <= 0.5))
    throw ConfigError("synth: dropout_rate must be in [0, 0.5]");
  if (!(noise_std >= 0.0)) throw ConfigError("synth: noise_std must be >= 0");
  if (!(ar_coefficient > 0.0) || !(ar_coefficient < 1.0))
    throw ConfigError("synth: ar_coefficient must be in (0, 1)");
  if (!std::isfinite(lag_drift) ||
      std::abs(lag_drift) >= 2.0 * (window_len - lag_max))
    throw ConfigError("synth: lag_drift too large for the window");
}

std::pair<num::Tensor, num::Tensor> subject_mixing(const SynthConfig& cfg,
                                                   std::size_t subject_index) {
  num::Rng mix_rng = num::Rng(cfg.seed).derive("synth.mix", {subject_index});
  num::Tensor Ae = mixing_matrix(mix_rng, kEegChannels);
  num::Tensor Ap = mixing_matrix(mix_rng, kPhysChannels);
  return {std::move(Ae), std::move(Ap)};
}

std::pair<ClipWindow, GroundTruth> generate_clip(const SynthConfig& cfg,
                                                 std::size_t subject_index,
                                                 std::size_t clip_index) {
  cfg.validate();
  const num::Rng root(cfg.seed);
  num::Rng rng = root.derive("synth.clip", {subject_index, clip_index});

  const auto [Ae, Ap] = subject_mixing(cfg, subject_index);

  const double lag = rng.uniform(cfg.lag_min, cfg.lag_max);

  const double dt = 1.0 / kFineHz;
  const double lead = cfg.lag_max + 0.5 * std::abs(cfg.lag_drift) + kMaHalf + dt;
  const double t0 = -lead;
  const auto n_fine = static_cast<std::size_t>(
                          std::ceil((cfg.window_len + lead) / dt)) + 1;

  num::Tensor z({n_fine, kLatentDim});
  const double rho = cfg.ar_coefficient;
  const double innov = std::sqrt(1.0 - rho * rho);
  for (std::size_t k = 0; k < kLatentDim; ++k) z.at2(0, k) = rng.normal();
  for (std::size_t n = 1; n < n_fine; ++n)
    for (std::size_t k = 0; k < kLatentDim; ++k)
      z.at2(n, k) = rho * z.at2(n - 1, k) + innov * rng.normal();

  auto nearest = [&](double t) {
    const auto n = static_cast<std::ptrdiff_t>(std::lround((t - t0) / dt));
    return static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(n, 0, static_cast<std::ptrdiff_t>(n_fine) - 1));
  };
  // Centered moving average of the latent over [t - kMaHalf, t + kMaHalf].
  auto smoothed = [&](double t, std::size_t k) {
    const auto lo = nearest(t - kMaHalf);
    const auto hi = nearest(t + kMaHalf);
    double acc = 0.0;
    for (std::size_t n = lo; n <= hi; ++n) acc += z.at2(n, k);
    return acc / static_cast<double>(hi - lo + 1);
  };

  const double width = cfg.window_len / static_cast<double>(cfg.n_bins);
  ClipWindow w;
  w.subject = subject_id(subject_index);
  w.clip = clip_id(subject_index, clip_index);
  w.win_start = 0.0;
  w.win_end = cfg.window_len;
  w.eeg.X = num::Tensor({cfg.n_bins, kEegChannels});
  w.phys.X = num::Tensor({cfg.n_bins, kPhysChannels});
  for (std::size_t i = 0; i < cfg.n_bins; ++i) {
    const double tc = (static_cast<double>(i) + 0.5) * width;
    w.eeg.t.push_back(tc);
    w.phys.t.push_back(tc);
  }

  for (std::size_t i = 0; i < cfg.n_bins; ++i) {
    const std::size_t n = nearest(w.eeg.t[i]);
    for (std::size_t c = 0; c < kEegChannels; ++c) {
      double v = 0.0;
      for (std::size_t k = 0; k < kLatentDim; ++k)
        v += Ae.at2(c, k) * z.at2(n, k);
      w.eeg.X.at2(i, c) = v + rng.normal(0.0, cfg.noise_std);
    }
  }
  for (std::size_t i = 0; i < cfg.n_bins; ++i) {
    const double tc = w.phys.t[i];
    const double lag_here =
        lag + cfg.lag_drift * (tc / cfg.window_len - 0.5);
    for (std::size_t c = 0; c < kPhysChannels; ++c) {
      double v = 0.0;
      for (std::size_t k = 0; k < kLatentDim; ++k)
        v += Ap.at2(c, k) * smoothed(tc - lag_here, k);
      w.phys.X.at2(i, c) = v + rng.normal(0.0, cfg.noise_std);
    }
  }

  for (std::size_t i = 0; i < cfg.n_bins; ++i)
    w.eeg.m.push_back(rng.uniform01() >= cfg.dropout_rate ? 1.0 : 0.0);
  for (std::size_t i = 0; i < cfg.n_bins; ++i)
    w.phys.m.push_back(rng.uniform01() >= cfg.dropout_rate ? 1.0 : 0.0);
  w.eeg.explicit_empty = (w.eeg.valid_count() == 0);
  w.phys.explicit_empty = (w.phys.valid_count() == 0);

  double mean0 = 0.0, mean1 = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < n_fine; ++n) {
    const double t = t0 + static_cast<double>(n) * dt;
    if (t < 0.0 || t > cfg.window_len) continue;
    mean0 += z.at2(n, 0);
    mean1 += z.at2(n, 1);
    ++count;
  }
  mean0 /= static_cast<double>(count);
  mean1 /= static_cast<double>(count);
  w.label = LabelAV{3.0 + 2.0 * std::tanh(kLabelGain * mean0),
                    3.0 + 2.0 * std::tanh(kLabelGain * mean1)};

  GroundTruth gt;
  gt.clip = w.clip;
  gt.subject = w.subject;
  gt.lag_s = lag;
  gt.latent = std::move(z);
  gt.fine_t0 = t0;
  gt.fine_dt = dt;
  gt.arousal_src = mean0;
  gt.valence_src = mean1;
  return {std::move(w), std::move(gt)};
}

SynthDataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset out;
  out.windows.reserve(cfg.n_subjects * cfg.clips_per_subject);
  out.truth.reserve(out.windows.capacity());
  for (std::size_t s = 0; s < cfg.n_subjects; ++s)
    for (std::size_t c = 0; c < cfg.clips_per_subject; ++c) {
      auto [w, gt] = generate_clip(cfg, s, c);
      out.windows.push_back(std::move(w));
      out.truth.push_back(std::move(gt));
    }
  return out;
}

}  // namespace ctaf::data
