#include "cprobe/model.hpp"

#include <stdexcept>
#include <string>

#include "cprobe/rng.hpp"

namespace cprobe {

const char* site_name(Site s) {
  return s == Site::kAttention ? "attention" : "mlp";
}

Site site_from_name(const std::string& name) {
  if (name == "attention") return Site::kAttention;
  if (name == "mlp") return Site::kMlp;
  throw std::invalid_argument("unknown site '" + name +
                              "' (expected 'attention' or 'mlp')");
}

void ModelConfig::validate() const {
  if (vocab <= 0) throw std::invalid_argument("model: vocab must be positive");
  if (seq_len <= 0)
    throw std::invalid_argument("model: seq_len must be positive");
  if (d_model <= 0 || n_heads <= 0 || d_mlp <= 0)
    throw std::invalid_argument("model: dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
}

int mask_size(const ModelConfig& cfg, Site site) {
  return site == Site::kAttention ? 3 * cfg.d_model + cfg.d_model
                                  : cfg.d_mlp + cfg.d_model;
}

Transformer::Transformer(const ModelConfig& config)
    : cfg(config),
      wte("wte", config.vocab, config.d_model),
      wpe("wpe", config.seq_len, config.d_model),
      ln1_g("ln1.g", 1, config.d_model),
      ln1_b("ln1.b", 1, config.d_model),
      c_attn_w("c_attn.w", config.d_model, 3 * config.d_model),
      c_attn_b("c_attn.b", 1, 3 * config.d_model),
      c_proj_w("c_proj.w", config.d_model, config.d_model),
      c_proj_b("c_proj.b", 1, config.d_model),
      ln2_g("ln2.g", 1, config.d_model),
      ln2_b("ln2.b", 1, config.d_model),
      c_fc_w("c_fc.w", config.d_model, config.d_mlp),
      c_fc_b("c_fc.b", 1, config.d_mlp),
      mlp_proj_w("mlp.c_proj.w", config.d_mlp, config.d_model),
      mlp_proj_b("mlp.c_proj.b", 1, config.d_model),
      lnf_g("lnf.g", 1, config.d_model),
      lnf_b("lnf.b", 1, config.d_model),
      head_w("head.w", config.d_model, config.vocab) {
  cfg.validate();
}

void Transformer::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "model_init"));
  for (Param* p : params()) {
    const bool is_gain = p == &ln1_g || p == &ln2_g || p == &lnf_g;
    const bool is_bias = p->name.ends_with(".b") || p->name.ends_with("_b");
    if (is_gain) {
      std::fill(p->value.begin(), p->value.end(), 1.0);
    } else if (is_bias) {
      std::fill(p->value.begin(), p->value.end(), 0.0);
    } else {
      for (auto& v : p->value) v = cfg.init_std * rng.normal();
    }
    p->zero_grad();
  }
}

std::vector<Param*> Transformer::params() {
  return {&wte,   &wpe,       &ln1_g,      &ln1_b, &c_attn_w, &c_attn_b,
          &c_proj_w, &c_proj_b, &ln2_g,    &ln2_b, &c_fc_w,   &c_fc_b,
          &mlp_proj_w, &mlp_proj_b, &lnf_g, &lnf_b, &head_w};
}

void Transformer::set_frozen(bool frozen) {
  for (Param* p : params()) p->frozen = frozen;
}

namespace {

namespace o = ops;

Tensor affine_ln(Tape& t, Tensor x, Param& g, Param& b, double eps) {
  return o::add_rowvec(o::mul_rowvec(o::layernorm_rows(x, eps), t.leaf(g)),
                       t.leaf(b));
}

std::vector<int> position_ids(int batch, int seq_len) {
  std::vector<int> pos(static_cast<std::size_t>(batch) * seq_len);
  for (int i = 0; i < batch; ++i)
    for (int t = 0; t < seq_len; ++t) pos[i * seq_len + t] = t;
  return pos;
}

std::vector<int> final_rows(int batch, int seq_len) {
  std::vector<int> finals(batch);
  for (int i = 0; i < batch; ++i) finals[i] = i * seq_len + seq_len - 1;
  return finals;
}

void check_tokens(const Transformer& m, const std::vector<int>& tokens,
                  int batch) {
  if (batch <= 0 ||
      tokens.size() != static_cast<std::size_t>(batch) * m.cfg.seq_len) {
    throw std::invalid_argument(
        "forward: got " + std::to_string(tokens.size()) + " tokens for " +
        std::to_string(batch) + " sequences of length " +
        std::to_string(m.cfg.seq_len));
  }
}

void check_mask(const Transformer& m, const MaskArg* mask) {
  if (!mask) return;
  const int want = mask_size(m.cfg, mask->site);
  if (!mask->mask.defined() || mask->mask.rows() != 1 ||
      mask->mask.cols() != want) {
    throw std::invalid_argument(
        "forward: mask for site '" + std::string(site_name(mask->site)) +
        "' must be 1x" + std::to_string(want));
  }
}

}  // namespace

ModelActs forward(Transformer& m, Tape& t, const std::vector<int>& tokens,
                  int batch, bool need_logits, const MaskArg* mask) {
  check_tokens(m, tokens, batch);
  check_mask(m, mask);
  const int T = m.cfg.seq_len, C = m.cfg.d_model;
  const bool mask_attn = mask && mask->site == Site::kAttention;
  const bool mask_mlp = mask && mask->site == Site::kMlp;
  ModelActs acts;

  Tensor x = o::add(o::gather(t.leaf(m.wte), tokens),
                    o::gather(t.leaf(m.wpe), position_ids(batch, T)));
  Tensor h1 = affine_ln(t, x, m.ln1_g, m.ln1_b, m.cfg.ln_eps);
  Tensor qkv =
      o::add_rowvec(o::matmul(h1, t.leaf(m.c_attn_w)), t.leaf(m.c_attn_b));
  if (mask_attn)
    qkv = o::mul_rowvec(qkv, o::slice_cols(mask->mask, 0, 3 * C));
  Tensor att = o::attention(qkv, batch, T, m.cfg.n_heads);

  // Only the final position of each sequence feeds the answer; everything
  // from here on runs on those rows alone.
  const auto finals = final_rows(batch, T);
  Tensor att_f = o::select_rows(att, finals);
  Tensor upd_attn =
      o::add_rowvec(o::matmul(att_f, t.leaf(m.c_proj_w)), t.leaf(m.c_proj_b));
  if (mask_attn)
    upd_attn = o::mul_rowvec(upd_attn, o::slice_cols(mask->mask, 3 * C, 4 * C));
  acts.update_attn = upd_attn;
  acts.residual_attn = o::add(o::select_rows(x, finals), upd_attn);
  if (mask_attn && !need_logits) return acts;

  Tensor h2 = affine_ln(t, acts.residual_attn, m.ln2_g, m.ln2_b, m.cfg.ln_eps);
  Tensor fc = o::add_rowvec(o::matmul(h2, t.leaf(m.c_fc_w)), t.leaf(m.c_fc_b));
  if (mask_mlp)
    fc = o::mul_rowvec(fc, o::slice_cols(mask->mask, 0, m.cfg.d_mlp));
  Tensor upd_mlp = o::add_rowvec(o::matmul(o::gelu(fc), t.leaf(m.mlp_proj_w)),
                                 t.leaf(m.mlp_proj_b));
  if (mask_mlp)
    upd_mlp = o::mul_rowvec(
        upd_mlp,
        o::slice_cols(mask->mask, m.cfg.d_mlp, m.cfg.d_mlp + C));
  acts.update_mlp = upd_mlp;
  acts.residual_final = o::add(acts.residual_attn, upd_mlp);
  if (!need_logits) return acts;

  Tensor hf = affine_ln(t, acts.residual_final, m.lnf_g, m.lnf_b, m.cfg.ln_eps);
  acts.logits = o::matmul(hf, t.leaf(m.head_w));
  return acts;
}

Tensor forward_full(Transformer& m, Tape& t, const std::vector<int>& tokens,
                    int batch) {
  check_tokens(m, tokens, batch);
  const int T = m.cfg.seq_len;
  Tensor x = o::add(o::gather(t.leaf(m.wte), tokens),
                    o::gather(t.leaf(m.wpe), position_ids(batch, T)));
  Tensor h1 = affine_ln(t, x, m.ln1_g, m.ln1_b, m.cfg.ln_eps);
  Tensor qkv =
      o::add_rowvec(o::matmul(h1, t.leaf(m.c_attn_w)), t.leaf(m.c_attn_b));
  Tensor att = o::attention(qkv, batch, T, m.cfg.n_heads);
  Tensor upd_attn =
      o::add_rowvec(o::matmul(att, t.leaf(m.c_proj_w)), t.leaf(m.c_proj_b));
  Tensor x2 = o::add(x, upd_attn);
  Tensor h2 = affine_ln(t, x2, m.ln2_g, m.ln2_b, m.cfg.ln_eps);
  Tensor fc = o::add_rowvec(o::matmul(h2, t.leaf(m.c_fc_w)), t.leaf(m.c_fc_b));
  Tensor upd_mlp = o::add_rowvec(o::matmul(o::gelu(fc), t.leaf(m.mlp_proj_w)),
                                 t.leaf(m.mlp_proj_b));
  Tensor x3 = o::add(x2, upd_mlp);
  Tensor hf = affine_ln(t, x3, m.lnf_g, m.lnf_b, m.cfg.ln_eps);
  return o::matmul(hf, t.leaf(m.head_w));
}

Tensor resume_from(Transformer& m, Tape& t, Site site, Tensor residual) {
  if (!residual.defined() || residual.cols() != m.cfg.d_model) {
    throw std::invalid_argument("resume_from: residual must have " +
                                std::to_string(m.cfg.d_model) + " columns");
  }
  Tensor x = residual;
  if (site == Site::kAttention) {
    Tensor h2 = affine_ln(t, x, m.ln2_g, m.ln2_b, m.cfg.ln_eps);
    Tensor fc =
        o::add_rowvec(o::matmul(h2, t.leaf(m.c_fc_w)), t.leaf(m.c_fc_b));
    Tensor upd = o::add_rowvec(o::matmul(o::gelu(fc), t.leaf(m.mlp_proj_w)),
                               t.leaf(m.mlp_proj_b));
    x = o::add(x, upd);
  }
  Tensor hf = affine_ln(t, x, m.lnf_g, m.lnf_b, m.cfg.ln_eps);
  return o::matmul(hf, t.leaf(m.head_w));
}

std::vector<int> argmax_rows(const double* x, int n, int m) {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const double* row = x + static_cast<std::size_t>(i) * m;
    int best = 0;
    for (int j = 1; j < m; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

double accuracy(const double* logits, const std::vector<int>& labels, int m) {
  const int n = static_cast<int>(labels.size());
  const auto pred = argmax_rows(logits, n, m);
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / n;
}

}  // namespace cprobe
