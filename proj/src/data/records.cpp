#include "ctaf/data/records.hpp"

#include <json.hpp>

#include <cstdio>
#include <sstream>
#include <string>

#include "ctaf/common/errors.hpp"
#include "ctaf/common/fsio.hpp"

namespace ctaf::data {
namespace {

using nlohmann::json;

json sequence_to_json(const ModalSequence& s) {
  json x = json::array();
  const std::size_t S = s.tokens();
  const std::size_t D = s.channels();
  for (std::size_t i = 0; i < S; ++i) {
    json row = json::array();
    for (std::size_t d = 0; d < D; ++d) row.push_back(s.X.at2(i, d));
    x.push_back(std::move(row));
  }
  return json{{"t", s.t}, {"m", s.m}, {"x", std::move(x)}};
}

ModalSequence sequence_from_json(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("t") || !j.contains("m") ||
      !j.contains("x"))
    throw DataError(what + ": expected object with t, m, x");
  ModalSequence s;
  s.t = j.at("t").get<std::vector<double>>();
  s.m = j.at("m").get<std::vector<double>>();
  const json& x = j.at("x");
  if (!x.is_array() || x.size() != s.t.size())
    throw DataError(what + ": x row count mismatch");
  const std::size_t S = s.t.size();
  const std::size_t D = S > 0 ? x[0].size() : 0;
  s.X = num::Tensor({S, D});
  for (std::size_t i = 0; i < S; ++i) {
    const json& row = x[i];
    if (!row.is_array() || row.size() != D)
      throw DataError(what + ": ragged x rows");
    for (std::size_t d = 0; d < D; ++d) s.X.at2(i, d) = row[d].get<double>();
  }
  s.explicit_empty = (s.valid_count() == 0);
  return s;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_windows_jsonl(const std::string& path,
                         const std::vector<ClipWindow>& windows) {
  std::string out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    ClipWindow w = windows[i];
    const auto violations = validate_window(w);
    if (!violations.empty())
      throw DataError("window " + std::to_string(i) + " (" + w.clip +
                      "): " + violations.front());
    json j{{"v", 1},
           {"clip", w.clip},
           {"subject", w.subject},
           {"span", {w.win_start, w.win_end}},
           {"eeg", sequence_to_json(w.eeg)},
           {"phys", sequence_to_json(w.phys)}};
    if (w.label)
      j["label"] = {w.label->arousal, w.label->valence};
    else
      j["label"] = nullptr;
    out += j.dump();
    out += '\n';
  }
  atomic_write_text(path, out);
}

std::vector<ClipWindow> read_windows_jsonl(const std::string& path) {
  const std::string text = read_text(path);
  std::vector<ClipWindow> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + " line " + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    try {
      if (!j.is_object() || j.value("v", 0) != 1)
        throw DataError("unsupported record version");
      ClipWindow w;
      w.clip = j.value("clip", std::string{});
      w.subject = j.at("subject").get<std::string>();
      const json& span = j.at("span");
      if (!span.is_array() || span.size() != 2)
        throw DataError("span must be [start, end]");
      w.win_start = span[0].get<double>();
      w.win_end = span[1].get<double>();
      const json& label = j.at("label");
      if (!label.is_null()) {
        if (!label.is_array() || label.size() != 2)
          throw DataError("label must be null or [arousal, valence]");
        w.label = LabelAV{label[0].get<double>(), label[1].get<double>()};
      }
      w.eeg = sequence_from_json(j.at("eeg"), "eeg");
      w.phys = sequence_from_json(j.at("phys"), "phys");
      const auto violations = validate_window(w);
      if (!violations.empty()) throw DataError(violations.front());
      out.push_back(std::move(w));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return out;
}

void write_lag_tsv(const std::string& path,
                   const std::vector<LagRecord>& rows) {
  std::string out = "clip\tsubject\tlag_s\n";
  for (const auto& r : rows)
    out += r.clip + '\t' + r.subject + '\t' + format_double(r.lag_s) + '\n';
  atomic_write_text(path, out);
}

std::vector<LagRecord> read_lag_tsv(const std::string& path) {
  const std::string text = read_text(path);
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || line != "clip\tsubject\tlag_s")
    throw DataError(path + ": bad lag table header");
  std::vector<LagRecord> out;
  std::size_t lineno = 1;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1
                                                : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos)
      throw DataError(path + " line " + std::to_string(lineno) +
                      ": expected 3 columns");
    LagRecord r;
    r.clip = line.substr(0, tab1);
    r.subject = line.substr(tab1 + 1, tab2 - tab1 - 1);
    try {
      r.lag_s = std::stod(line.substr(tab2 + 1));
    } catch (const std::exception&) {
      throw DataError(path + " line " + std::to_string(lineno) +
                      ": bad lag value");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ctaf::data
