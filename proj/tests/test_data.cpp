#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <unistd.h>

#include "ctaf/common/errors.hpp"
#include "ctaf/common/fsio.hpp"
#include "ctaf/data/ingest.hpp"
#include "ctaf/data/records.hpp"
#include "ctaf/data/synth.hpp"
#include "ctaf/data/types.hpp"
#include "ctaf/num/rng.hpp"

using namespace ctaf;
using data::ClipWindow;
using data::ModalSequence;
using num::Rng;
using num::Tensor;

namespace {

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() /
          (std::string(stem) + std::to_string(::getpid()) + ".ctaf"))
      .string();
}

ModalSequence make_sequence(std::size_t S, std::size_t D, double start,
                            double end, Rng& rng, double mask_rate = 0.0) {
  ModalSequence s;
  s.X = Tensor({S, D});
  const double width = (end - start) / static_cast<double>(S);
  for (std::size_t i = 0; i < S; ++i) {
    s.t.push_back(start + width * (static_cast<double>(i) + 0.5));
    s.m.push_back(rng.uniform01() >= mask_rate ? 1.0 : 0.0);
    for (std::size_t d = 0; d < D; ++d) s.X.at2(i, d) = rng.normal();
  }
  if (s.valid_count() == 0) s.explicit_empty = true;
  return s;
}

ClipWindow make_window(std::size_t se, std::size_t sp, Rng& rng,
                       double mask_rate = 0.0) {
  ClipWindow w;
  w.subject = "S01";
  w.clip = "S01_c000";
  w.win_start = 0.0;
  w.win_end = 5.0;
  w.eeg = make_sequence(se, 10, 0.0, 5.0, rng, mask_rate);
  w.phys = make_sequence(sp, 4, 0.0, 5.0, rng, mask_rate);
  w.label = data::LabelAV{2.5, 3.5};
  return w;
}

bool sequences_identical(const ModalSequence& a, const ModalSequence& b) {
  if (a.tokens() != b.tokens() || a.channels() != b.channels()) return false;
  if (std::memcmp(a.X.data(), b.X.data(), a.X.numel() * sizeof(double)) != 0)
    return false;
  if (std::memcmp(a.t.data(), b.t.data(), a.t.size() * sizeof(double)) != 0)
    return false;
  return std::memcmp(a.m.data(), b.m.data(), a.m.size() * sizeof(double)) == 0;
}

bool windows_identical(const ClipWindow& a, const ClipWindow& b) {
  if (a.subject != b.subject || a.clip != b.clip) return false;
  if (std::memcmp(&a.win_start, &b.win_start, sizeof(double)) != 0) return false;
  if (std::memcmp(&a.win_end, &b.win_end, sizeof(double)) != 0) return false;
  if (a.label.has_value() != b.label.has_value()) return false;
  if (a.label &&
      (std::memcmp(&a.label->arousal, &b.label->arousal, sizeof(double)) != 0 ||
       std::memcmp(&a.label->valence, &b.label->valence, sizeof(double)) != 0))
    return false;
  return sequences_identical(a.eeg, b.eeg) &&
         sequences_identical(a.phys, b.phys);
}

}  // namespace

TEST_CASE("validate_window accepts a well-formed window") {
  Rng rng(7);
  ClipWindow w = make_window(20, 20, rng);
  CHECK(data::validate_window(w).empty());
}

TEST_CASE("validate_window flags decreasing timestamps") {
  Rng rng(8);
  ClipWindow w = make_window(3, 3, rng);
  w.eeg.t = {0.0, 2.0, 1.0};
  const auto v = data::validate_window(w);
  REQUIRE(!v.empty());
  CHECK(v.front().find("decrease") != std::string::npos);
}

TEST_CASE("validate_window zeroes masked non-finite values") {
  Rng rng(9);
  ClipWindow w = make_window(5, 5, rng);
  w.eeg.m[2] = 0.0;
  w.eeg.X.at2(2, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK(data::validate_window(w).empty());
  CHECK(w.eeg.X.at2(2, 1) == 0.0);
}

TEST_CASE("validate_window rejects non-finite values at valid tokens") {
  Rng rng(10);
  ClipWindow w = make_window(5, 5, rng);
  w.phys.X.at2(1, 0) = std::numeric_limits<double>::infinity();
  CHECK(!data::validate_window(w).empty());
}

TEST_CASE("validate_window rejects bad masks, spans, and labels") {
  Rng rng(11);
  ClipWindow w = make_window(4, 4, rng);
  w.eeg.m[0] = 0.5;
  CHECK(!data::validate_window(w).empty());
  w.eeg.m[0] = 1.0;
  w.label = data::LabelAV{std::numeric_limits<double>::quiet_NaN(), 3.0};
  CHECK(!data::validate_window(w).empty());
  w.label = data::LabelAV{3.0, 3.0};
  w.phys.t[0] = 9.0;
  CHECK(!data::validate_window(w).empty());
}

TEST_CASE("validate_window flags an all-masked modality unless explicit") {
  Rng rng(12);
  ClipWindow w = make_window(4, 4, rng);
  std::fill(w.phys.m.begin(), w.phys.m.end(), 0.0);
  CHECK(!data::validate_window(w).empty());
  w.phys.explicit_empty = true;
  CHECK(data::validate_window(w).empty());
}

TEST_CASE("collate pads shorter windows with masked tokens") {
  Rng rng(13);
  std::vector<ClipWindow> ws{make_window(18, 20, rng), make_window(20, 16, rng)};
  const data::Batch b = data::collate(ws);
  CHECK(b.se == 20);
  CHECK(b.sp == 20);
  CHECK(b.windows[0].eeg.tokens() == 20);
  CHECK(b.windows[0].eeg.m[18] == 0.0);
  CHECK(b.windows[0].eeg.m[19] == 0.0);
  CHECK(b.windows[0].eeg.t[19] == ws[0].win_end);
  CHECK(b.windows[1].phys.m[16] == 0.0);
  for (std::size_t i = 0; i < 18; ++i)
    for (std::size_t d = 0; d < 10; ++d)
      CHECK(b.windows[0].eeg.X.at2(i, d) == ws[0].eeg.X.at2(i, d));
}

TEST_CASE("collate of a single window adds no padding") {
  Rng rng(14);
  std::vector<ClipWindow> ws{make_window(20, 20, rng)};
  const data::Batch b = data::collate(ws);
  CHECK(windows_identical(b.windows[0], ws[0]));
}

TEST_CASE("collate rejects empty input and mixed channel counts") {
  CHECK_THROWS_AS(data::collate({}), DataError);
  Rng rng(15);
  ClipWindow a = make_window(6, 6, rng);
  ClipWindow b = make_window(6, 6, rng);
  b.eeg = make_sequence(6, 9, 0.0, 5.0, rng);
  CHECK_THROWS_AS(data::collate({a, b}), DataError);
}

TEST_CASE("collate then unpad reproduces every window bit-exactly") {
  Rng rng(16);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<ClipWindow> ws;
    const std::size_t n = 1 + rng.uniform_int(5);
    for (std::size_t i = 0; i < n; ++i) {
      ClipWindow w =
          make_window(1 + rng.uniform_int(20), 1 + rng.uniform_int(20), rng,
                      0.3);
      w.eeg.X.data()[0] = -0.0;
      if (w.eeg.X.numel() > 1) w.eeg.X.data()[1] = 5e-324;
      if (rng.uniform01() < 0.3) w.label.reset();
      ws.push_back(std::move(w));
    }
    const data::Batch b = data::collate(ws);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(windows_identical(data::unpad(b, i), ws[i]));
  }
}

TEST_CASE("joint_coverage hits the closed-form cases") {
  Rng rng(17);
  ClipWindow w = make_window(20, 20, rng);
  CHECK(data::joint_coverage(w) == 1.0);
  std::fill(w.phys.m.begin(), w.phys.m.end(), 0.0);
  w.phys.explicit_empty = true;
  CHECK(data::joint_coverage(w) == 0.0);
  ClipWindow h = make_window(20, 20, rng);
  for (std::size_t i = 0; i < 10; ++i) h.eeg.m[i] = 0.0;
  CHECK(data::joint_coverage(h) == doctest::Approx(0.5));
}

TEST_CASE("joint_coverage matches a per-bin counting oracle") {
  Rng rng(18);
  for (int trial = 0; trial < 50; ++trial) {
    ClipWindow w = make_window(4 + rng.uniform_int(20),
                               4 + rng.uniform_int(20), rng, 0.4);
    const std::size_t n = std::max(w.eeg.tokens(), w.phys.tokens());
    const double width = (w.win_end - w.win_start) / static_cast<double>(n);
    std::size_t both = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const double lo = w.win_start + width * static_cast<double>(b);
      const double hi = lo + width;
      auto occupied = [&](const ModalSequence& s) {
        for (std::size_t i = 0; i < s.tokens(); ++i)
          if (s.m[i] == 1.0 && s.t[i] >= lo &&
              (s.t[i] < hi || (b == n - 1 && s.t[i] <= w.win_end)))
            return true;
        return false;
      };
      both += occupied(w.eeg) && occupied(w.phys);
    }
    CHECK(data::joint_coverage(w) ==
          doctest::Approx(static_cast<double>(both) / static_cast<double>(n))
              .epsilon(1e-12));
  }
}

TEST_CASE("joint_coverage is invariant to joint token permutation") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    ClipWindow w = make_window(12, 9, rng, 0.35);
    const double base = data::joint_coverage(w);
    std::vector<std::size_t> perm(w.eeg.tokens());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    ClipWindow p = w;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.eeg.t[i] = w.eeg.t[perm[i]];
      p.eeg.m[i] = w.eeg.m[perm[i]];
      for (std::size_t d = 0; d < w.eeg.channels(); ++d)
        p.eeg.X.at2(i, d) = w.eeg.X.at2(perm[i], d);
    }
    CHECK(data::joint_coverage(p) == base);
  }
}

TEST_CASE("window records round-trip bit-exactly through JSONL") {
  Rng rng(20);
  std::vector<ClipWindow> ws;
  for (int i = 0; i < 6; ++i) {
    ClipWindow w = make_window(8 + rng.uniform_int(6), 8, rng, 0.25);
    w.clip = "S01_c" + std::to_string(i);
    if (i == 2) w.label.reset();
    if (i == 3) {
      w.eeg.X.data()[0] = -0.0;
      w.eeg.X.data()[1] = 5e-324;
      w.eeg.X.data()[2] = 1.7976931348623157e308;
    }
    ws.push_back(std::move(w));
  }
  const std::string path = temp_path("windows");
  data::write_windows_jsonl(path, ws);
  const auto back = data::read_windows_jsonl(path);
  REQUIRE(back.size() == ws.size());
  for (std::size_t i = 0; i < ws.size(); ++i)
    CHECK(windows_identical(back[i], ws[i]));
  std::filesystem::remove(path);
}

TEST_CASE("window reader names the offending line") {
  const std::string path = temp_path("badwin");
  atomic_write_text(path, "{\"v\":1}\nnot json\n");
  try {
    data::read_windows_jsonl(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("window writer rejects invalid windows") {
  Rng rng(21);
  ClipWindow w = make_window(4, 4, rng);
  w.eeg.t = {0.0, 2.0, 1.0, 3.0};
  CHECK_THROWS_AS(data::write_windows_jsonl(temp_path("rejwin"), {w}),
                  DataError);
}

TEST_CASE("lag sidecar round-trips") {
  std::vector<data::LagRecord> rows{{"S01_c000", "S01", 1.25},
                                    {"S02_c001", "S02", 0.7071067811865476}};
  const std::string path = temp_path("lags");
  data::write_lag_tsv(path, rows);
  const auto back = data::read_lag_tsv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].clip == "S01_c000");
  CHECK(back[1].lag_s == rows[1].lag_s);
  atomic_write_text(path, "wrong\theader\n");
  CHECK_THROWS_AS(data::read_lag_tsv(path), DataError);
  std::filesystem::remove(path);
}

namespace {

data::SynthConfig small_synth() {
  data::SynthConfig cfg;
  cfg.n_subjects = 2;
  cfg.clips_per_subject = 5;
  return cfg;
}

}  // namespace

TEST_CASE("synth config validation catches out-of-range fields") {
  data::SynthConfig cfg = small_synth();
  cfg.lag_max = 5.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_synth();
  cfg.dropout_rate = 0.6;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_synth();
  cfg.ar_coefficient = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("synth dropout 0 yields all-valid masks") {
  data::SynthConfig cfg = small_synth();
  cfg.dropout_rate = 0.0;
  const auto [w, gt] = data::generate_clip(cfg, 0, 0);
  CHECK(w.eeg.valid_count() == cfg.n_bins);
  CHECK(w.phys.valid_count() == cfg.n_bins);
  CHECK(gt.lag_s >= cfg.lag_min);
  CHECK(gt.lag_s <= cfg.lag_max);
}

TEST_CASE("synth windows validate and are deterministic") {
  const data::SynthConfig cfg = small_synth();
  const auto a = data::generate_dataset(cfg);
  const auto b = data::generate_dataset(cfg);
  REQUIRE(a.windows.size() == cfg.n_subjects * cfg.clips_per_subject);
  for (std::size_t i = 0; i < a.windows.size(); ++i) {
    ClipWindow w = a.windows[i];
    CHECK(data::validate_window(w).empty());
    CHECK(windows_identical(a.windows[i], b.windows[i]));
    CHECK(a.truth[i].clip == a.windows[i].clip);
  }
  const auto [w00, gt00] = data::generate_clip(cfg, 1, 3);
  CHECK(windows_identical(
      w00, a.windows[1 * cfg.clips_per_subject + 3]));
  CHECK(gt00.lag_s == a.truth[1 * cfg.clips_per_subject + 3].lag_s);
}

TEST_CASE("synth mixing matrices differ across subjects") {
  const data::SynthConfig cfg = small_synth();
  const auto [ae0, ap0] = data::subject_mixing(cfg, 0);
  const auto [ae1, ap1] = data::subject_mixing(cfg, 1);
  double frob = 0.0;
  for (std::size_t i = 0; i < ae0.numel(); ++i) {
    const double d = ae0.data()[i] - ae1.data()[i];
    frob += d * d;
  }
  CHECK(frob > 1e-3);
  const auto [ae0b, ap0b] = data::subject_mixing(cfg, 0);
  CHECK(std::memcmp(ap0.data(), ap0b.data(),
                    ap0.numel() * sizeof(double)) == 0);
}

namespace {

// Offset maximizing the summed squared channel-pair cross-correlations, the
// search bounded to the configured lag range. Recovery is judged per bin.
std::size_t xcorr_peak(const ClipWindow& w, std::size_t max_offset) {
  const std::size_t S = w.eeg.tokens();
  const std::size_t De = w.eeg.channels(), Dp = w.phys.channels();
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t o = 0; o <= max_offset; ++o) {
    std::vector<double> ve(De, 0.0), vp(Dp, 0.0);
    for (std::size_t i = o; i < S; ++i) {
      for (std::size_t a = 0; a < De; ++a)
        ve[a] += w.eeg.X.at2(i - o, a) * w.eeg.X.at2(i - o, a);
      for (std::size_t b = 0; b < Dp; ++b)
        vp[b] += w.phys.X.at2(i, b) * w.phys.X.at2(i, b);
    }
    double score = 0.0;
    for (std::size_t a = 0; a < De; ++a)
      for (std::size_t b = 0; b < Dp; ++b) {
        double m = 0.0;
        for (std::size_t i = o; i < S; ++i)
          m += w.eeg.X.at2(i - o, a) * w.phys.X.at2(i, b);
        score += m * m / (ve[a] * vp[b] + 1e-30);
      }
    if (score > best_score) {
      best_score = score;
      best = o;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("synth lag is recovered per clip by cross-correlation") {
  // Fine bins give each clip enough tokens for single-clip recovery; the
  // default 20-bin tokenization is covered by the aggregate test below.
  data::SynthConfig cfg;
  cfg.n_subjects = 4;
  cfg.clips_per_subject = 5;
  cfg.noise_std = 0.0;
  cfg.dropout_rate = 0.0;
  cfg.n_bins = 100;
  const double width = cfg.window_len / static_cast<double>(cfg.n_bins);
  const auto max_o =
      static_cast<std::size_t>(std::ceil(cfg.lag_max / width));
  for (std::size_t s = 0; s < cfg.n_subjects; ++s)
    for (std::size_t c = 0; c < cfg.clips_per_subject; ++c) {
      const auto [w, gt] = data::generate_clip(cfg, s, c);
      const auto expected =
          static_cast<std::size_t>(std::lround(gt.lag_s / width));
      const std::size_t peak = xcorr_peak(w, max_o);
      CHECK(std::abs(static_cast<long>(peak) - static_cast<long>(expected)) <=
            1);
    }
}

TEST_CASE("synth lag of exactly 1 s peaks at 4 bins of 0.25 s") {
  data::SynthConfig cfg;
  cfg.n_subjects = 8;
  cfg.clips_per_subject = 1;
  cfg.lag_min = cfg.lag_max = 1.0;
  cfg.noise_std = 0.0;
  cfg.dropout_rate = 0.0;
  // Aggregate the per-offset scores across subjects, then take the argmax.
  std::vector<double> score(13, 0.0);
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const auto [w, gt] = data::generate_clip(cfg, s, 0);
    const std::size_t S = w.eeg.tokens();
    for (std::size_t o = 0; o < score.size(); ++o) {
      std::vector<double> C(w.eeg.channels() * w.phys.channels(), 0.0);
      for (std::size_t i = o; i < S; ++i)
        for (std::size_t a = 0; a < w.eeg.channels(); ++a)
          for (std::size_t b = 0; b < w.phys.channels(); ++b)
            C[a * w.phys.channels() + b] +=
                w.eeg.X.at2(i - o, a) * w.phys.X.at2(i, b);
      double sc = 0.0;
      for (double v : C) sc += v * v;
      score[o] += sc / (static_cast<double>(S - o) * static_cast<double>(S - o));
    }
  }
  const auto peak = std::distance(
      score.begin(), std::max_element(score.begin(), score.end()));
  CHECK(peak == 4);
}

TEST_CASE("synth labels span all three bins") {
  data::SynthConfig cfg;
  cfg.n_subjects = 4;
  cfg.clips_per_subject = 40;
  const auto ds = data::generate_dataset(cfg);
  std::array<std::size_t, 3> bins{0, 0, 0};
  for (const auto& w : ds.windows) {
    REQUIRE(w.label.has_value());
    const double a = w.label->arousal;
    CHECK(a >= 1.0);
    CHECK(a <= 5.0);
    bins[a < 7.0 / 3.0 ? 0 : (a <= 11.0 / 3.0 ? 1 : 2)] += 1;
  }
  for (const auto c : bins)
    CHECK(c >= ds.windows.size() / 20);
}

TEST_CASE("synth lag drift mode stays valid") {
  data::SynthConfig cfg = small_synth();
  cfg.lag_drift = 0.5;
  const auto [w, gt] = data::generate_clip(cfg, 0, 0);
  ClipWindow copy = w;
  CHECK(data::validate_window(copy).empty());
  cfg.lag_drift = 100.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("bin_channel means samples per bin and honors locf") {
  using P = std::pair<double, double>;
  const auto bc = data::bin_channel({P{0.1, 3.0}, P{0.2, 5.0}, P{1.6, 2.0}},
                                    0.0, 2.0, 4, false);
  CHECK(bc.value[0] == doctest::Approx(4.0));
  CHECK(bc.has[0] == 1);
  CHECK(bc.has[1] == 0);
  CHECK(bc.has[2] == 0);
  CHECK(bc.value[3] == doctest::Approx(2.0));

  const auto lf = data::bin_channel({P{0.1, 3.0}}, 0.0, 2.0, 4, true);
  CHECK(lf.has[1] == 1);
  CHECK(lf.value[1] == doctest::Approx(3.0));
  CHECK(lf.has[3] == 1);
  CHECK(lf.value[3] == doctest::Approx(3.0));

  const auto pre = data::bin_channel({P{0.6, 7.0}}, 0.0, 2.0, 4, true);
  CHECK(pre.has[0] == 0);
  CHECK(pre.has[1] == 1);
}

TEST_CASE("bin_streams assembles manifest-ordered features") {
  const data::Manifest mf = data::default_manifest();
  std::vector<data::StreamRecord> recs;
  for (std::size_t c = 0; c < mf.eeg_channels.size(); ++c)
    for (std::size_t i = 0; i < mf.n_bins; ++i)
      recs.push_back({"S01", mf.eeg_channels[c],
                      0.25 * (static_cast<double>(i) + 0.4),
                      static_cast<double>(c * 100 + i)});
  recs.push_back({"S01", "eda", 0.1, 2.0});
  recs.push_back({"S01", "eda", 0.2, 4.0});
  auto [eeg, phys] = data::bin_streams(recs, 0.0, 5.0, mf);
  CHECK(eeg.channels() == 10);
  CHECK(phys.channels() == 4);
  CHECK(eeg.valid_count() == 20);
  CHECK(eeg.X.at2(3, 2) == doctest::Approx(203.0));
  CHECK(phys.X.at2(0, 1) == doctest::Approx(3.0));
  CHECK(phys.m[0] == 1.0);
  CHECK(phys.m[1] == 0.0);
  CHECK(phys.X.at2(0, 0) == 0.0);

  Rng rng(31);
  std::vector<data::StreamRecord> shuffled = recs;
  rng.shuffle(shuffled);
  auto [eeg2, phys2] = data::bin_streams(shuffled, 0.0, 5.0, mf);
  CHECK(sequences_identical(eeg, eeg2));
  CHECK(sequences_identical(phys, phys2));

  recs.push_back({"S01", "mystery", 1.0, 1.0});
  CHECK_THROWS_AS(data::bin_streams(recs, 0.0, 5.0, mf), DataError);
}

TEST_CASE("bin_streams with phys-only records leaves EEG explicitly empty") {
  const data::Manifest mf = data::default_manifest();
  std::vector<data::StreamRecord> recs{{"S01", "bvp", 0.5, 1.0},
                                       {"S01", "hr", 1.5, 60.0}};
  auto [eeg, phys] = data::bin_streams(recs, 0.0, 5.0, mf);
  CHECK(eeg.valid_count() == 0);
  CHECK(eeg.explicit_empty);
  CHECK(phys.valid_count() > 0);
}

TEST_CASE("ingest_streams cuts aligned windows and averages labels") {
  data::Manifest mf = data::default_manifest();
  std::vector<data::StreamRecord> recs;
  for (int i = 0; i < 100; ++i) {
    const double t = 2.0 + 0.1 * static_cast<double>(i);
    recs.push_back({"S01", "delta", t, 1.0});
    recs.push_back({"S01", "bvp", t, 2.0});
  }
  recs.push_back({"S01", "arousal", 6.0, 2.0});
  recs.push_back({"S01", "arousal", 7.0, 4.0});
  recs.push_back({"S01", "valence", 6.5, 5.0});
  const auto windows = data::ingest_streams(recs, mf);
  REQUIRE(windows.size() == 3);
  CHECK(windows[0].win_start == 0.0);
  CHECK(windows[1].win_start == 5.0);
  CHECK(windows[2].win_start == 10.0);
  CHECK(!windows[0].label.has_value());
  REQUIRE(windows[1].label.has_value());
  CHECK(windows[1].label->arousal == doctest::Approx(3.0));
  CHECK(windows[1].label->valence == doctest::Approx(5.0));
  ClipWindow w = windows[1];
  CHECK(data::validate_window(w).empty());
}

TEST_CASE("stream reader enforces the header and numeric fields") {
  const std::string path = temp_path("stream");
  atomic_write_text(path,
                    "subject\tchannel\ttimestamp_s\tvalue\nS01\tbvp\t0.5\t1.25\n");
  const auto recs = data::read_stream_tsv(path);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].value == 1.25);
  atomic_write_text(path, "wrong\nS01\tbvp\t0.5\t1.25\n");
  CHECK_THROWS_AS(data::read_stream_tsv(path), DataError);
  atomic_write_text(path,
                    "subject\tchannel\ttimestamp_s\tvalue\nS01\tbvp\tzzz\t1\n");
  CHECK_THROWS_AS(data::read_stream_tsv(path), DataError);
  std::filesystem::remove(path);
}

namespace {

std::vector<ClipWindow> norm_fixture(Rng& rng) {
  std::vector<ClipWindow> ws;
  for (int s = 0; s < 3; ++s)
    for (int k = 0; k < 6; ++k) {
      ClipWindow w = make_window(12, 12, rng, 0.2);
      w.subject = "S0" + std::to_string(s + 1);
      w.clip = w.subject + "_c" + std::to_string(k);
      for (std::size_t i = 0; i < w.eeg.tokens(); ++i) {
        for (std::size_t d = 0; d < w.eeg.channels(); ++d)
          w.eeg.X.at2(i, d) = 5.0 + 2.0 * w.eeg.X.at2(i, d);
        w.eeg.X.at2(i, 3) = 7.5;
      }
      ws.push_back(std::move(w));
    }
  return ws;
}

}  // namespace

TEST_CASE("normalize recenters training subjects and flags constants") {
  Rng rng(40);
  auto ws = norm_fixture(rng);
  const std::set<std::string> train{"S01", "S02"};
  const auto stats = data::compute_norm_stats(ws, train);
  CHECK(stats.by_subject.count("S01") == 1);
  CHECK(stats.by_subject.count("S03") == 0);
  CHECK(stats.by_subject.at("S01").eeg[3].constant);
  const auto normed = data::normalize(ws, stats);

  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (std::size_t wi = 0; wi < normed.size(); ++wi) {
    if (normed[wi].subject != "S01") continue;
    const auto& s = normed[wi].eeg;
    for (std::size_t i = 0; i < s.tokens(); ++i) {
      if (s.m[i] != 1.0) continue;
      CHECK(s.X.at2(i, 3) == 0.0);
      sum += s.X.at2(i, 0);
      sumsq += s.X.at2(i, 0) * s.X.at2(i, 0);
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sumsq / static_cast<double>(n) - mean * mean ==
        doctest::Approx(1.0).epsilon(1e-9));

  // Masked tokens stay untouched.
  for (std::size_t wi = 0; wi < ws.size(); ++wi)
    for (std::size_t i = 0; i < ws[wi].eeg.tokens(); ++i)
      if (ws[wi].eeg.m[i] == 0.0)
        for (std::size_t d = 0; d < ws[wi].eeg.channels(); ++d)
          CHECK(normed[wi].eeg.X.at2(i, d) == ws[wi].eeg.X.at2(i, d));

  // Applying the same stats twice is not the identity on the once-normalized
  // data (documented non-idempotence).
  const auto twice = data::normalize(normed, stats);
  CHECK(!windows_identical(twice[0], normed[0]));
}

TEST_CASE("held-out subjects fall back to pooled training stats") {
  Rng rng(41);
  auto ws = norm_fixture(rng);
  const auto stats = data::compute_norm_stats(ws, {"S01", "S02"});
  const auto normed = data::normalize(ws, stats);
  for (std::size_t wi = 0; wi < ws.size(); ++wi) {
    if (ws[wi].subject != "S03") continue;
    const auto& cs = stats.pooled.eeg[0];
    for (std::size_t i = 0; i < ws[wi].eeg.tokens(); ++i)
      if (ws[wi].eeg.m[i] == 1.0)
        CHECK(normed[wi].eeg.X.at2(i, 0) ==
              doctest::Approx((ws[wi].eeg.X.at2(i, 0) - cs.mean) / cs.std));
  }
}

TEST_CASE("norm stats never read held-out subject data") {
  Rng rng(42);
  auto ws = norm_fixture(rng);
  const std::set<std::string> train{"S01", "S02"};
  const auto before = data::compute_norm_stats(ws, train);
  for (auto& w : ws) {
    if (w.subject != "S03") continue;
    for (std::size_t i = 0; i < w.eeg.X.numel(); ++i)
      w.eeg.X.data()[i] += 1000.0;
    for (std::size_t i = 0; i < w.phys.X.numel(); ++i)
      w.phys.X.data()[i] -= 500.0;
  }
  const auto after = data::compute_norm_stats(ws, train);
  REQUIRE(before.by_subject.size() == after.by_subject.size());
  for (const auto& [subject, ss] : before.by_subject) {
    const auto& other = after.by_subject.at(subject);
    for (std::size_t c = 0; c < ss.eeg.size(); ++c) {
      CHECK(std::memcmp(&ss.eeg[c].mean, &other.eeg[c].mean,
                        sizeof(double)) == 0);
      CHECK(std::memcmp(&ss.eeg[c].std, &other.eeg[c].std,
                        sizeof(double)) == 0);
    }
  }
  CHECK(std::memcmp(&before.pooled.eeg[0].mean, &after.pooled.eeg[0].mean,
                    sizeof(double)) == 0);
}

TEST_CASE("coverage filter matches the per-window oracle") {
  Rng rng(43);
  std::vector<ClipWindow> ws;
  for (int i = 0; i < 40; ++i) ws.push_back(make_window(15, 15, rng, 0.45));
  const double thr = 0.6;
  const auto kept = data::filter_coverage(ws, thr);
  std::size_t expect = 0;
  for (const auto& w : ws) expect += (data::joint_coverage(w) >= thr);
  CHECK(kept.size() == expect);
  CHECK(data::filter_coverage(ws, 0.0).size() == ws.size());
  ClipWindow full = make_window(10, 10, rng);
  full.eeg.m[4] = 0.0;
  CHECK(data::filter_coverage({full}, 1.0).empty());
}
