#pragma once

#include <string>
#include <vector>

#include "ctaf/data/types.hpp"

namespace ctaf::data {

// Ground-truth sidecar row: the true phys-relative-to-EEG lag of one clip.
struct LagRecord {
  std::string clip;
  std::string subject;
  double lag_s = 0.0;
};

// Line-delimited window records, one JSON object per line with a version
// field. Windows are validated before writing; masked non-finite features are
// zeroed, any other violation throws DataError. Written atomically.
void write_windows_jsonl(const std::string& path,
                         const std::vector<ClipWindow>& windows);

// Parses and validates every record. Throws DataError naming the first bad
// line. An all-masked modality in a stored record is treated as explicitly
// empty.
std::vector<ClipWindow> read_windows_jsonl(const std::string& path);

// Tab-separated sidecar with header clip/subject/lag_s. Written atomically.
void write_lag_tsv(const std::string& path,
                   const std::vector<LagRecord>& rows);
std::vector<LagRecord> read_lag_tsv(const std::string& path);

}  // namespace ctaf::data
