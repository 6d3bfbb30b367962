#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctaf/data/types.hpp"
#include "ctaf/num/graph.hpp"
#include "ctaf/num/params.hpp"
#include "ctaf/num/rng.hpp"
#include "ctaf/num/tensor.hpp"

namespace ctaf::model {

struct ModelConfig {
  std::size_t eeg_channels = 10;
  std::size_t phys_channels = 4;
  std::size_t d = 64;           // model width
  std::size_t layers = 2;       // self-attention blocks per encoder
  std::size_t heads = 4;
  std::size_t conv_k = 3;       // conv front-end kernel width (odd)
  std::size_t time_freqs = 8;   // sin/cos frequency pairs
  double base_period = 60.0;    // seconds; slowest time-feature period
  bool use_time = true;         // false zeroes the time features
  bool concat_time = false;     // concat instead of add after projection
  std::size_t proj_dim = 64;    // contrastive projection width

  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Sinusoidal features of token times (seconds relative to window start).
// Column 2i = sin(t * w_i), 2i+1 = cos(t * w_i); w_i = 2*pi/base_period * 2^i.
num::Tensor time_features(const std::vector<double>& t, std::size_t freqs,
                          double base_period);

// Dense batch view of collated windows: features [B,S,C], times [B,S]
// (relative to each window's start), masks [B,S], labels [B,2] with a
// per-window validity flag. Augmentations rewrite t_* and m_* in place.
struct BatchInputs {
  num::Tensor x_e, t_e, m_e;
  num::Tensor x_p, t_p, m_p;
  num::Tensor y;
  std::vector<bool> has_label;
  std::size_t batch = 0, s_e = 0, s_p = 0;
};

BatchInputs make_inputs(const data::Batch& batch);

// Binds parameters into a graph once per forward pass and keys gradients
// back to parameter names afterwards.
struct TapeContext {
  num::Graph& g;
  num::ParamStore& params;
  std::map<std::string, num::Var> bound;
  // When set, batch features become differentiable leaves so tests can
  // inspect input gradients (masked positions must receive exactly zero).
  bool inputs_need_grad = false;

  TapeContext(num::Graph& graph, num::ParamStore& store)
      : g(graph), params(store) {}

  num::Var P(const std::string& name);
  std::map<std::string, num::Tensor> take_grads() const;
};

// Every tensor the loss terms and the reporting path read, as graph nodes.
// Token-state and token-projection fields are zeroed at masked positions;
// alignment matrices are zeroed at invalid query rows and invalid key
// columns. Raw (unzeroed) token projections are kept for the alignment
// loss, which applies its own masking.
struct ForwardVars {
  num::Var x_e, x_p;           // input feature nodes [B,S,C]
  num::Var h_e, h_p;           // encoder outputs [B,S,d]
  num::Var ht_e, ht_p;         // cross-attended states, masked rows zeroed
  num::Var a_e2p, a_p2e;       // head-averaged attention maps
  num::Var z_e, z_p;           // summaries after empty-stream substitution
  num::Var gate, z_gate, z_tok, z_f;  // [B,d]
  num::Var p_e, p_p, p_f;      // L2-normalized projections [B,proj]
  num::Var pre_e, pre_p, pre_f;       // same heads before normalization
  num::Var ptok_e, ptok_p;     // normalized token projections, masked rows zeroed
  num::Var ptok_e_raw, ptok_p_raw;    // before row zeroing (loss input)
  num::Var y_hat;              // supervised head output [B,2]
  std::vector<bool> empty_e, empty_p;      // per window: no valid token
  bool fallback_e2p = false, fallback_p2e = false;
};

struct CtafModel {
  ModelConfig cfg;
  num::ParamStore params;

  void init(const ModelConfig& config, const num::Rng& root);

  // Runs the full stack on a batch. Throws DataError when the two streams
  // disagree on sequence length (the fused token combination needs S_e ==
  // S_p) or when a window is empty in both modalities.
  ForwardVars forward(TapeContext& ctx, const BatchInputs& in) const;

  // Encoder only, for one stream ("e" or "p"): conv front-end plus masked
  // self-attention. Masked tokens never influence valid outputs.
  num::Var encode(TapeContext& ctx, const std::string& stream, num::Var x,
                  const num::Tensor& t, const num::Tensor& mask) const;
};

// Plain-tensor snapshot of a forward pass for evaluation and reporting.
struct FusionOutput {
  num::Tensor ht_e, ht_p;
  num::Tensor a_e2p, a_p2e;
  num::Tensor z_e, z_p, gate, z_gate, z_tok, z_f;
  num::Tensor p_e, p_p, p_f;
  num::Tensor ptok_e, ptok_p;
  num::Tensor y_hat;
  std::vector<bool> empty_e, empty_p;
};

FusionOutput extract(const num::Graph& g, const ForwardVars& f);

}  // namespace ctaf::model
