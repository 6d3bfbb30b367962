#include "ctaf/data/ingest.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ctaf/common/errors.hpp"
#include "ctaf/common/fsio.hpp"

namespace ctaf::data {
namespace {

using nlohmann::json;

}  // namespace

void Manifest::validate() const {
  if (eeg_channels.empty() && phys_channels.empty())
    throw ConfigError("manifest: no channels declared");
  if (!(window_len > 0.0))
    throw ConfigError("manifest: window_len must be > 0");
  if (n_bins < 1) throw ConfigError("manifest: n_bins must be >= 1");
  std::set<std::string> seen;
  for (const auto& list : {eeg_channels, phys_channels})
    for (const auto& c : list)
      if (!seen.insert(c).second)
        throw ConfigError("manifest: duplicate channel " + c);
}

Manifest default_manifest() {
  Manifest mf;
  mf.eeg_channels = {"delta",     "theta",     "low_alpha", "high_alpha",
                     "low_beta",  "high_beta", "low_gamma", "mid_gamma",
                     "attention", "meditation"};
  mf.phys_channels = {"bvp", "eda", "temp", "hr"};
  mf.locf_channels = {"hr"};
  return mf;
}

Manifest load_manifest(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": manifest must be an object");
  Manifest mf = default_manifest();
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "eeg_channels")
        mf.eeg_channels = val.get<std::vector<std::string>>();
      else if (key == "phys_channels")
        mf.phys_channels = val.get<std::vector<std::string>>();
      else if (key == "window_len")
        mf.window_len = val.get<double>();
      else if (key == "n_bins")
        mf.n_bins = val.get<std::size_t>();
      else if (key == "locf_channels")
        mf.locf_channels = val.get<std::vector<std::string>>();
      else if (key == "arousal_channel")
        mf.arousal_channel = val.get<std::string>();
      else if (key == "valence_channel")
        mf.valence_channel = val.get<std::string>();
      else
        throw ConfigError(path + ": unknown manifest key \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  mf.validate();
  return mf;
}

std::vector<StreamRecord> read_stream_tsv(const std::string& path) {
  const std::string text = read_text(path);
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) ||
      line != "subject\tchannel\ttimestamp_s\tvalue")
    throw DataError(path + ": bad stream header");
  std::vector<StreamRecord> out;
  std::size_t lineno = 1;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + " line " + std::to_string(lineno);
    std::size_t pos = 0;
    std::array<std::string, 4> cols;
    for (int c = 0; c < 3; ++c) {
      const auto tab = line.find('\t', pos);
      if (tab == std::string::npos)
        throw DataError(where + ": expected 4 columns");
      cols[c] = line.substr(pos, tab - pos);
      pos = tab + 1;
    }
    cols[3] = line.substr(pos);
    StreamRecord r;
    r.subject = cols[0];
    r.channel = cols[1];
    try {
      r.timestamp = std::stod(cols[2]);
      r.value = std::stod(cols[3]);
    } catch (const std::exception&) {
      throw DataError(where + ": bad numeric field");
    }
    if (!std::isfinite(r.timestamp))
      throw DataError(where + ": non-finite timestamp");
    out.push_back(std::move(r));
  }
  return out;
}

BinnedChannel bin_channel(const std::vector<std::pair<double, double>>& samples,
                          double start, double end, std::size_t n_bins,
                          bool locf) {
  BinnedChannel out;
  out.value.assign(n_bins, 0.0);
  out.has.assign(n_bins, 0);
  std::vector<double> sum(n_bins, 0.0);
  std::vector<std::size_t> cnt(n_bins, 0);
  const double width = (end - start) / static_cast<double>(n_bins);
  // Last sample value at or before each bin's end, for carried-forward fill.
  std::vector<std::pair<double, double>> sorted = samples;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [t, v] : sorted) {
    if (t < start || t >= end) continue;
    auto bin = static_cast<std::size_t>((t - start) / width);
    bin = std::min(bin, n_bins - 1);
    sum[bin] += v;
    cnt[bin] += 1;
  }
  double carried = 0.0;
  bool have_carried = false;
  std::size_t next_sample = 0;
  for (std::size_t i = 0; i < n_bins; ++i) {
    if (cnt[i] > 0) {
      out.value[i] = sum[i] / static_cast<double>(cnt[i]);
      out.has[i] = 1;
    }
    if (locf) {
      const double bin_end = start + width * static_cast<double>(i + 1);
      while (next_sample < sorted.size() &&
             sorted[next_sample].first < bin_end) {
        carried = sorted[next_sample].second;
        have_carried = true;
        ++next_sample;
      }
      if (!out.has[i] && have_carried) {
        out.value[i] = carried;
        out.has[i] = 1;
      }
    }
  }
  return out;
}

namespace {

ModalSequence assemble_modality(
    const std::vector<std::string>& channels,
    const std::map<std::string, std::vector<std::pair<double, double>>>& by_channel,
    const std::set<std::string>& locf, double start, double end,
    std::size_t n_bins) {
  const double width = (end - start) / static_cast<double>(n_bins);
  ModalSequence s;
  s.X = num::Tensor({n_bins, channels.size()});
  s.t.reserve(n_bins);
  s.m.assign(n_bins, 0.0);
  for (std::size_t i = 0; i < n_bins; ++i)
    s.t.push_back(start + width * (static_cast<double>(i) + 0.5));
  static const std::vector<std::pair<double, double>> kNone;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto it = by_channel.find(channels[c]);
    const auto& samples = it == by_channel.end() ? kNone : it->second;
    const BinnedChannel bc =
        bin_channel(samples, start, end, n_bins, locf.count(channels[c]) > 0);
    for (std::size_t i = 0; i < n_bins; ++i) {
      if (!bc.has[i]) continue;
      s.X.at2(i, c) = bc.value[i];
      s.m[i] = 1.0;
    }
  }
  s.explicit_empty = (s.valid_count() == 0);
  return s;
}

}  // namespace

std::pair<ModalSequence, ModalSequence> bin_streams(
    const std::vector<StreamRecord>& records, double start, double end,
    const Manifest& mf) {
  mf.validate();
  if (!(end > start)) throw DataError("bin_streams: empty span");
  std::set<std::string> known(mf.eeg_channels.begin(), mf.eeg_channels.end());
  known.insert(mf.phys_channels.begin(), mf.phys_channels.end());
  if (!mf.arousal_channel.empty()) known.insert(mf.arousal_channel);
  if (!mf.valence_channel.empty()) known.insert(mf.valence_channel);
  std::map<std::string, std::vector<std::pair<double, double>>> by_channel;
  for (const auto& r : records) {
    if (known.count(r.channel) == 0)
      throw DataError("bin_streams: unknown channel \"" + r.channel + "\"");
    by_channel[r.channel].emplace_back(r.timestamp, r.value);
  }
  const std::set<std::string> locf(mf.locf_channels.begin(),
                                   mf.locf_channels.end());
  return {assemble_modality(mf.eeg_channels, by_channel, locf, start, end,
                            mf.n_bins),
          assemble_modality(mf.phys_channels, by_channel, locf, start, end,
                            mf.n_bins)};
}

std::vector<ClipWindow> ingest_streams(const std::vector<StreamRecord>& records,
                                       const Manifest& mf) {
  mf.validate();
  std::map<std::string, std::vector<StreamRecord>> by_subject;
  for (const auto& r : records) by_subject[r.subject].push_back(r);
  std::vector<ClipWindow> out;
  for (auto& [subject, recs] : by_subject) {
    double tmin = recs.front().timestamp, tmax = tmin;
    for (const auto& r : recs) {
      tmin = std::min(tmin, r.timestamp);
      tmax = std::max(tmax, r.timestamp);
    }
    const double L = mf.window_len;
    const auto k0 = static_cast<long long>(std::floor(tmin / L));
    const auto k1 = static_cast<long long>(std::floor(tmax / L));
    std::size_t clip_index = 0;
    for (long long k = k0; k <= k1; ++k) {
      const double start = static_cast<double>(k) * L;
      const double end = start + L;
      std::vector<StreamRecord> span;
      for (const auto& r : recs)
        if (r.timestamp >= start && r.timestamp < end) span.push_back(r);
      if (span.empty()) continue;
      ClipWindow w;
      w.subject = subject;
      char buf[24];
      std::snprintf(buf, sizeof buf, "_c%03zu", clip_index);
      w.clip = subject + buf;
      w.win_start = start;
      w.win_end = end;
      auto [eeg, phys] = bin_streams(span, start, end, mf);
      w.eeg = std::move(eeg);
      w.phys = std::move(phys);
      if (w.eeg.valid_count() == 0 && w.phys.valid_count() == 0) continue;
      if (!mf.arousal_channel.empty() && !mf.valence_channel.empty()) {
        double sa = 0.0, sv = 0.0;
        std::size_t na = 0, nv = 0;
        for (const auto& r : span) {
          if (r.channel == mf.arousal_channel) sa += r.value, ++na;
          if (r.channel == mf.valence_channel) sv += r.value, ++nv;
        }
        if (na > 0 && nv > 0)
          w.label = LabelAV{sa / static_cast<double>(na),
                            sv / static_cast<double>(nv)};
      }
      ++clip_index;
      out.push_back(std::move(w));
    }
  }
  return out;
}

namespace {

struct Moments {
  double sum = 0.0;
  double sumsq = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    sumsq += v * v;
    ++n;
  }
  ChannelStats finish() const {
    ChannelStats cs;
    if (n == 0) {
      cs.constant = true;
      return cs;
    }
    cs.mean = sum / static_cast<double>(n);
    const double var =
        std::max(0.0, sumsq / static_cast<double>(n) - cs.mean * cs.mean);
    cs.std = std::sqrt(var);
    if (cs.std <= 1e-12) {
      cs.std = 1.0;
      cs.constant = true;
    }
    return cs;
  }
};

void accumulate(const ModalSequence& s, std::vector<Moments>& mom) {
  for (std::size_t i = 0; i < s.tokens(); ++i) {
    if (s.m[i] != 1.0) continue;
    for (std::size_t c = 0; c < s.channels(); ++c) mom[c].add(s.X.at2(i, c));
  }
}

std::vector<ChannelStats> finish(const std::vector<Moments>& mom) {
  std::vector<ChannelStats> out;
  out.reserve(mom.size());
  for (const auto& m : mom) out.push_back(m.finish());
  return out;
}

void apply_stats(ModalSequence& s, const std::vector<ChannelStats>& cs) {
  if (s.channels() != cs.size())
    throw DataError("normalize: channel count mismatch");
  for (std::size_t i = 0; i < s.tokens(); ++i) {
    if (s.m[i] != 1.0) continue;
    for (std::size_t c = 0; c < s.channels(); ++c) {
      double& v = s.X.at2(i, c);
      v = cs[c].constant ? 0.0 : (v - cs[c].mean) / cs[c].std;
    }
  }
}

}  // namespace

NormStats compute_norm_stats(const std::vector<ClipWindow>& windows,
                             const std::set<std::string>& train_subjects) {
  NormStats out;
  if (windows.empty()) return out;
  out.eeg_channels = windows.front().eeg.channels();
  out.phys_channels = windows.front().phys.channels();
  std::map<std::string, std::pair<std::vector<Moments>, std::vector<Moments>>>
      per_subject;
  std::vector<Moments> pe(out.eeg_channels), pp(out.phys_channels);
  for (const auto& w : windows) {
    if (train_subjects.count(w.subject) == 0) continue;
    auto& [me, mp] = per_subject
                         .try_emplace(w.subject,
                                      std::vector<Moments>(out.eeg_channels),
                                      std::vector<Moments>(out.phys_channels))
                         .first->second;
    accumulate(w.eeg, me);
    accumulate(w.phys, mp);
    accumulate(w.eeg, pe);
    accumulate(w.phys, pp);
  }
  for (const auto& [subject, mom] : per_subject)
    out.by_subject[subject] = SubjectStats{finish(mom.first),
                                           finish(mom.second)};
  out.pooled = SubjectStats{finish(pe), finish(pp)};
  return out;
}

std::vector<ClipWindow> normalize(const std::vector<ClipWindow>& windows,
                                  const NormStats& stats) {
  if (stats.pooled.eeg.empty() && stats.pooled.phys.empty())
    throw DataError("normalize: empty statistics");
  std::vector<ClipWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const auto it = stats.by_subject.find(w.subject);
    const SubjectStats& ss =
        it != stats.by_subject.end() ? it->second : stats.pooled;
    ClipWindow n = w;
    apply_stats(n.eeg, ss.eeg);
    apply_stats(n.phys, ss.phys);
    out.push_back(std::move(n));
  }
  return out;
}

std::vector<ClipWindow> filter_coverage(const std::vector<ClipWindow>& windows,
                                        double threshold) {
  std::vector<ClipWindow> out;
  for (const auto& w : windows)
    if (joint_coverage(w) >= threshold) out.push_back(w);
  return out;
}

}  // namespace ctaf::data
