#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctaf/data/types.hpp"
#include "ctaf/model/model.hpp"
#include "ctaf/num/rng.hpp"
#include "ctaf/num/tensor.hpp"
#include "ctaf/obj/objectives.hpp"

namespace ctaf::eval {

// One window's frozen embeddings plus the metadata the metrics need. Every
// function below this struct is a pure function of embeddings and metadata;
// none of them may touch the model again.
struct WindowEmbedding {
  std::string subject;
  std::string clip;
  num::Tensor clip_e, clip_p;  // [P] clip-level projections per modality
  num::Tensor tok_e, tok_p;    // [Se, P] / [Sp, P] token projections
  num::Tensor fused;           // [D] fused window embedding
  num::Tensor y_hat;           // [2] regression head output, normalized units
  std::vector<double> t_e, t_p;
  std::vector<bool> m_e, m_p;
  std::optional<data::LabelAV> label;
};

// Runs the frozen model over the windows and packages each one for the
// metrics below.
std::vector<WindowEmbedding> embed_windows(
    const model::CtafModel& m, const std::vector<data::ClipWindow>& windows,
    std::size_t batch_size);

// Linear-interpolation quantile of the values (copied and sorted internally);
// p must lie in [0, 1].
double quantile(std::vector<double> values, double p);

// Mean with percentile-bootstrap bounds. degenerate marks inputs too small to
// resample (a single value); the bounds then collapse onto the mean.
struct CiValue {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate = false;
};

CiValue bootstrap_ci(const std::vector<double>& values, const num::Rng& rng,
                     std::size_t n_resamples = 10000, double level = 0.95);

// cos_pos averages the cosine between matched clip pairs; cos_neg pairs each
// window with its successor (circular shift by one), which needs at least two
// windows. Inputs are [N, P] stacks with matching rows.
struct CosineMargin {
  double cos_pos = 0.0;
  double cos_neg = 0.0;
  bool neg_defined = false;
  std::size_t windows = 0;
};

CosineMargin cosine_margin(const num::Tensor& emb_e, const num::Tensor& emb_p);

enum class Direction { e2p, p2e };

// Nearest-neighbour counts for one window: each valid query token retrieves
// the most similar valid target token of the other modality in the same
// window (ties keep the earliest token), and the hit is scored by timestamp
// distance. A window without any valid target contributes no queries.
struct RetrievalCounts {
  std::size_t hits = 0;
  std::size_t queries = 0;
  bool no_targets = false;
};

RetrievalCounts retrieve_window(const num::Tensor& proj_q,
                                const num::Tensor& proj_k,
                                const std::vector<double>& t_q,
                                const std::vector<double>& t_k,
                                const std::vector<bool>& m_q,
                                const std::vector<bool>& m_k, double tau);

// Timestamp-only baseline under the same protocol: each valid query scores
// the fraction of valid targets within tau seconds.
struct ChanceMass {
  double mass = 0.0;
  std::size_t queries = 0;
  bool no_targets = false;
};

ChanceMass chance_window(const std::vector<double>& t_q,
                         const std::vector<double>& t_k,
                         const std::vector<bool>& m_q,
                         const std::vector<bool>& m_k, double tau);

// Single-window convenience form of the baseline: mean over valid queries of
// the within-tau target fraction (zero when the window has no queries).
double chance_rate(const std::vector<double>& t_q,
                   const std::vector<double>& t_k,
                   const std::vector<bool>& m_q, const std::vector<bool>& m_k,
                   double tau);

struct RetrievalStats {
  std::vector<std::string> subjects;
  std::vector<double> rates;        // aligned with subjects
  std::size_t skipped_windows = 0;  // windows with no valid target
  std::size_t total_queries = 0;
};

// Pools hits over each subject's windows, then macro-averages the subject
// rates. Subjects that end up with zero queries are dropped from the macro
// mean.
double retrieval_at_tau(const std::vector<WindowEmbedding>& windows,
                        double tau, Direction dir,
                        RetrievalStats* stats = nullptr);

// Same pooling and macro-averaging for the timestamp-only baseline.
double chance_at_tau(const std::vector<WindowEmbedding>& windows, double tau,
                     Direction dir, RetrievalStats* stats = nullptr);

struct SubjectAlignment {
  std::string subject;
  double cos_pos = 0.0;
  double cos_neg = 0.0;
  bool cos_neg_defined = false;
  double retr_e2p = 0.0;
  double retr_p2e = 0.0;
  std::size_t windows = 0;
};

struct AlignmentReport {
  double tau = 1.0;
  std::vector<SubjectAlignment> subjects;        // sorted by subject id
  CiValue cos_pos, cos_neg, retr_e2p, retr_p2e;  // macro over subjects
};

// Groups the windows by subject, computes the per-subject alignment metrics,
// and wraps the macro means in bootstrap intervals.
AlignmentReport alignment_report(const std::vector<WindowEmbedding>& windows,
                                 double tau, const num::Rng& rng,
                                 std::size_t n_resamples = 10000);

// Three-bin label mapping. Integer-valued ratings use the fixed 1-2 / 3 / 4-5
// grouping; continuous labels fall back to tertile edges fitted on training
// labels. A label maps to bin 0 below lo, bin 1 below hi, bin 2 otherwise.
struct BinEdges {
  double lo = 2.5;
  double hi = 3.5;
  bool tertile = false;
};

BinEdges fit_bin_edges(const std::vector<double>& train_labels);
int bin_of(double label, const BinEdges& e);

struct ProbeMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t test_windows = 0;
  bool missing_train_class = false;
};

// Accuracy and unweighted mean per-class F1 over the three bins; a bin with
// no true and no predicted samples scores zero F1.
ProbeMetrics score_bins(const std::vector<int>& truth,
                        const std::vector<int>& pred);

// Multinomial linear probe trained with full-batch AdamW from zero init until
// the loss stops improving. Classes absent from the training set are dropped
// from the softmax and flagged.
struct LinearProbe {
  num::Tensor w;             // [D, K] over the classes present in training
  num::Tensor b;             // [K]
  std::vector<int> classes;  // column -> bin id
  bool missing_train_class = false;
};

LinearProbe fit_probe(const num::Tensor& x, const std::vector<int>& y);
std::vector<int> predict_bins(const LinearProbe& probe, const num::Tensor& x);

struct ProbeFold {
  ProbeMetrics arousal, valence;
  BinEdges edges_arousal, edges_valence;
};

// Fits bin edges and linear probes on the training windows' fused embeddings
// and scores the test windows. Unlabeled windows are ignored on both sides.
ProbeFold three_bin_probe(const std::vector<WindowEmbedding>& train,
                          const std::vector<WindowEmbedding>& test);

// Secondary readout: buckets the regression head's de-normalized predictions
// with the same edges instead of fitting a probe.
ProbeFold head_binning(const std::vector<WindowEmbedding>& train,
                       const std::vector<WindowEmbedding>& test,
                       const obj::LabelStats& stats);

struct SubjectProbe {
  std::string subject;
  ProbeFold fold;
};

struct ProbeReport {
  std::vector<SubjectProbe> subjects;
  CiValue acc_arousal, f1_arousal, acc_valence, f1_valence;
};

ProbeReport probe_report(const std::vector<SubjectProbe>& subjects,
                         const num::Rng& rng,
                         std::size_t n_resamples = 10000);

struct DeltaSummary {
  std::vector<double> per_subject;  // first report minus second report
  CiValue mean_delta;
  double median = 0.0;
  double iqr_lo = 0.0;
  double iqr_hi = 0.0;
  std::size_t subjects = 0;
};

struct DeltaReport {
  std::vector<std::string> subjects;
  DeltaSummary cos_pos, cos_neg, retr_e2p, retr_p2e;
};

// Pairs two alignment reports over the same subjects (typically with and
// without time features) and summarizes the per-subject gains. Subjects whose
// cos_neg is undefined on either side are excluded from that delta only.
DeltaReport paired_delta(const AlignmentReport& with_time,
                         const AlignmentReport& without_time,
                         const num::Rng& rng,
                         std::size_t n_resamples = 10000);

void to_json(nlohmann::json& j, const CiValue& v);
void from_json(const nlohmann::json& j, CiValue& v);
void to_json(nlohmann::json& j, const SubjectAlignment& v);
void from_json(const nlohmann::json& j, SubjectAlignment& v);
void to_json(nlohmann::json& j, const AlignmentReport& v);
void from_json(const nlohmann::json& j, AlignmentReport& v);
void to_json(nlohmann::json& j, const BinEdges& v);
void from_json(const nlohmann::json& j, BinEdges& v);
void to_json(nlohmann::json& j, const ProbeMetrics& v);
void from_json(const nlohmann::json& j, ProbeMetrics& v);
void to_json(nlohmann::json& j, const ProbeFold& v);
void from_json(const nlohmann::json& j, ProbeFold& v);
void to_json(nlohmann::json& j, const SubjectProbe& v);
void from_json(const nlohmann::json& j, SubjectProbe& v);
void to_json(nlohmann::json& j, const ProbeReport& v);
void from_json(const nlohmann::json& j, ProbeReport& v);
void to_json(nlohmann::json& j, const DeltaSummary& v);
void from_json(const nlohmann::json& j, DeltaSummary& v);
void to_json(nlohmann::json& j, const DeltaReport& v);
void from_json(const nlohmann::json& j, DeltaReport& v);

}  // namespace ctaf::eval
