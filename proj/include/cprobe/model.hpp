#pragma once

#include <cstdint>
#include <vector>

#include "cprobe/ops.hpp"
#include "cprobe/tensor.hpp"

namespace cprobe {

// The two maskable computation sites of the single transformer block.
enum class Site { kAttention, kMlp };

const char* site_name(Site s);
Site site_from_name(const std::string& name);

struct ModelConfig {
  int vocab = 0;    // token vocabulary size (operands plus marker tokens)
  int seq_len = 0;  // fixed sequence length of the task format
  int d_model = 128;
  int n_heads = 4;
  int d_mlp = 512;
  double ln_eps = 1e-5;
  double init_std = 0.02;

  void validate() const;  // throws std::invalid_argument
};

// Number of maskable output neurons at a site: every column of each linear
// transform inside the block half. Attention: c_attn (3C) + c_proj (C).
// MLP: c_fc (d_mlp) + mlp.c_proj (C).
int mask_size(const ModelConfig& cfg, Site site);

// One pre-LN transformer block plus embeddings and an untied readout head.
// Parameter order is canonical and is the order used by checkpoints.
struct Transformer {
  ModelConfig cfg;
  Param wte, wpe;
  Param ln1_g, ln1_b;
  Param c_attn_w, c_attn_b;
  Param c_proj_w, c_proj_b;
  Param ln2_g, ln2_b;
  Param c_fc_w, c_fc_b;
  Param mlp_proj_w, mlp_proj_b;
  Param lnf_g, lnf_b;
  Param head_w;

  explicit Transformer(const ModelConfig& config);

  // Weights ~ N(0, init_std^2) from a seeded stream in canonical order;
  // biases zero; layernorm gains one.
  void init(std::uint64_t seed);

  std::vector<Param*> params();
  void set_frozen(bool frozen);
};

// Soft or hard mask over a site's output neurons, as a (1 x mask_size) row
// tensor on the tape. Layout: [first transform's columns | second's].
struct MaskArg {
  Site site;
  Tensor mask;
};

// Activations of the final position of each sequence (where the answer is
// read). Tensors are undefined past the point where the forward stopped.
struct ModelActs {
  Tensor update_attn;    // (B x C) attention block's residual update
  Tensor residual_attn;  // (B x C) residual stream after the attention add
  Tensor update_mlp;     // (B x C) MLP block's residual update
  Tensor residual_final; // (B x C) residual stream after the MLP add
  Tensor logits;         // (B x vocab)
};

// Forward pass specialized to final positions: keys/values are computed for
// every position but everything after attention runs only on the final row
// of each sequence, which is exact for a single block. With need_logits
// false the pass stops at the masked site's update vectors.
ModelActs forward(Transformer& model, Tape& tape,
                  const std::vector<int>& tokens, int batch,
                  bool need_logits = true, const MaskArg* mask = nullptr);

// Reference forward producing logits for every position (B*T x vocab).
// Final rows must equal forward(...).logits exactly.
Tensor forward_full(Transformer& model, Tape& tape,
                    const std::vector<int>& tokens, int batch);

// Recompute everything downstream of a site from a replacement residual
// stream activation (B x C) at the final positions. Used by the eraser's
// amnesic evaluation and by counterfactual embedding insertion.
Tensor resume_from(Transformer& model, Tape& tape, Site site,
                   Tensor residual);

// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const double* x, int n, int m);

// Fraction of rows whose argmax equals the label.
double accuracy(const double* logits, const std::vector<int>& labels, int m);

}  // namespace cprobe
