#include "ctaf/data/types.hpp"

#include <algorithm>
#include <cmath>

#include "ctaf/common/errors.hpp"

namespace ctaf::data {
namespace {

void validate_sequence(const std::string& name, ModalSequence& s,
                       double win_start, double win_end,
                       std::vector<std::string>& out) {
  const auto& shape = s.X.shape();
  if (shape.size() != 2) {
    out.push_back(name + ": features must be rank 2");
    return;
  }
  if (shape[0] != s.t.size() || s.t.size() != s.m.size()) {
    out.push_back(name + ": feature rows, timestamps, and mask lengths differ");
    return;
  }
  const std::size_t S = s.t.size();
  const std::size_t D = shape[1];
  for (std::size_t i = 0; i < S; ++i) {
    if (s.m[i] != 0.0 && s.m[i] != 1.0) {
      out.push_back(name + ": mask entry " + std::to_string(i) +
                    " is not 0 or 1");
      return;
    }
  }
  for (std::size_t i = 0; i + 1 < S; ++i)
    if (s.t[i] > s.t[i + 1]) {
      out.push_back(name + ": timestamps decrease at index " +
                    std::to_string(i + 1));
      break;
    }
  for (std::size_t i = 0; i < S; ++i) {
    if (!std::isfinite(s.t[i])) {
      out.push_back(name + ": non-finite timestamp at index " +
                    std::to_string(i));
      break;
    }
    if (s.t[i] < win_start || s.t[i] > win_end) {
      out.push_back(name + ": timestamp " + std::to_string(s.t[i]) +
                    " outside window span");
      break;
    }
  }
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t d = 0; d < D; ++d) {
      double& v = s.X.at2(i, d);
      if (std::isfinite(v)) continue;
      if (s.m[i] == 0.0) {
        v = 0.0;
      } else {
        out.push_back(name + ": non-finite feature at valid token " +
                      std::to_string(i));
        return;
      }
    }
  }
  if (s.valid_count() == 0 && !s.explicit_empty)
    out.push_back(name + ": no valid token");
}

}  // namespace

std::vector<std::string> validate_window(ClipWindow& w) {
  std::vector<std::string> out;
  if (!(w.win_end > w.win_start)) out.push_back("window span is empty");
  validate_sequence("eeg", w.eeg, w.win_start, w.win_end, out);
  validate_sequence("phys", w.phys, w.win_start, w.win_end, out);
  if (w.label) {
    if (!std::isfinite(w.label->arousal) || !std::isfinite(w.label->valence))
      out.push_back("label has non-finite component");
  }
  return out;
}

namespace {

ModalSequence pad_sequence(const ModalSequence& s, std::size_t target,
                           double pad_t) {
  if (s.tokens() == target) return s;
  const std::size_t D = s.channels();
  ModalSequence out;
  out.X = num::Tensor({target, D});
  std::copy(s.X.data(), s.X.data() + s.X.numel(), out.X.data());
  out.t = s.t;
  out.t.resize(target, pad_t);
  out.m = s.m;
  out.m.resize(target, 0.0);
  out.explicit_empty = s.explicit_empty;
  return out;
}

}  // namespace

Batch collate(const std::vector<ClipWindow>& windows) {
  if (windows.empty()) throw DataError("collate: empty window list");
  const std::size_t de = windows[0].eeg.channels();
  const std::size_t dp = windows[0].phys.channels();
  Batch b;
  for (const auto& w : windows) {
    if (w.eeg.channels() != de || w.phys.channels() != dp)
      throw DataError("collate: mixed channel counts");
    b.se = std::max(b.se, w.eeg.tokens());
    b.sp = std::max(b.sp, w.phys.tokens());
  }
  b.windows.reserve(windows.size());
  for (const auto& w : windows) {
    b.eeg_len.push_back(w.eeg.tokens());
    b.phys_len.push_back(w.phys.tokens());
    ClipWindow p = w;
    p.eeg = pad_sequence(w.eeg, b.se, w.win_end);
    p.phys = pad_sequence(w.phys, b.sp, w.win_end);
    b.windows.push_back(std::move(p));
  }
  return b;
}

ClipWindow unpad(const Batch& b, std::size_t i) {
  if (i >= b.windows.size()) throw DataError("unpad: index out of range");
  const ClipWindow& p = b.windows[i];
  ClipWindow out = p;
  const std::size_t se = b.eeg_len[i];
  const std::size_t sp = b.phys_len[i];
  if (se != p.eeg.tokens()) {
    out.eeg.X = num::Tensor({se, p.eeg.channels()});
    std::copy(p.eeg.X.data(), p.eeg.X.data() + out.eeg.X.numel(),
              out.eeg.X.data());
    out.eeg.t.resize(se);
    out.eeg.m.resize(se);
  }
  if (sp != p.phys.tokens()) {
    out.phys.X = num::Tensor({sp, p.phys.channels()});
    std::copy(p.phys.X.data(), p.phys.X.data() + out.phys.X.numel(),
              out.phys.X.data());
    out.phys.t.resize(sp);
    out.phys.m.resize(sp);
  }
  return out;
}

double joint_coverage(const ClipWindow& w) {
  const std::size_t n = std::max(w.eeg.tokens(), w.phys.tokens());
  const double span = w.win_end - w.win_start;
  if (n == 0 || !(span > 0.0)) return 0.0;
  const double width = span / static_cast<double>(n);
  std::vector<char> has_e(n, 0), has_p(n, 0);
  auto mark = [&](const ModalSequence& s, std::vector<char>& has) {
    for (std::size_t i = 0; i < s.tokens(); ++i) {
      if (s.m[i] != 1.0) continue;
      auto bin = static_cast<std::size_t>(
          std::max(0.0, std::floor((s.t[i] - w.win_start) / width)));
      has[std::min(bin, n - 1)] = 1;
    }
  };
  mark(w.eeg, has_e);
  mark(w.phys, has_p);
  std::size_t both = 0;
  for (std::size_t i = 0; i < n; ++i) both += (has_e[i] && has_p[i]);
  return static_cast<double>(both) / static_cast<double>(n);
}

}  // namespace ctaf::data
