#include "cprobe/interventions.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "cprobe/rng.hpp"

namespace cprobe {

std::vector<TensorSlice> site_tensors(const ModelConfig& cfg, Site site) {
  const int c = cfg.d_model;
  if (site == Site::kAttention)
    return {{"c_attn", 0, 3 * c}, {"c_proj", 3 * c, 4 * c}};
  return {{"c_fc", 0, cfg.d_mlp}, {"mlp.c_proj", cfg.d_mlp, cfg.d_mlp + c}};
}

namespace {

void check_mask(const ModelConfig& cfg, Site site,
                const std::vector<double>& mask, const char* what) {
  if (static_cast<int>(mask.size()) != mask_size(cfg, site))
    throw std::invalid_argument(std::string(what) + ": mask length " +
                                std::to_string(mask.size()) +
                                " does not match the site");
  for (const double m : mask)
    if (m != 0.0 && m != 1.0)
      throw std::invalid_argument(std::string(what) +
                                  ": mask entries must be 0 or 1");
}

// The weight/bias pair owning one site-mask column, and the local column.
struct ColumnRef {
  Param* w;
  Param* b;
  int col;
};

ColumnRef column_ref(Transformer& m, Site site, int idx) {
  const int c = m.cfg.d_model;
  if (site == Site::kAttention) {
    if (idx < 3 * c) return {&m.c_attn_w, &m.c_attn_b, idx};
    return {&m.c_proj_w, &m.c_proj_b, idx - 3 * c};
  }
  if (idx < m.cfg.d_mlp) return {&m.c_fc_w, &m.c_fc_b, idx};
  return {&m.mlp_proj_w, &m.mlp_proj_b, idx - m.cfg.d_mlp};
}

}  // namespace

Transformer ablate(const Transformer& model, const AblationSpec& spec,
                   bool* warned) {
  check_mask(model.cfg, spec.site, spec.mask, "ablate");
  const auto slices = site_tensors(model.cfg, spec.site);
  int lo = 0, hi = static_cast<int>(spec.mask.size());
  if (!spec.scope.empty()) {
    const auto it =
        std::find_if(slices.begin(), slices.end(),
                     [&](const TensorSlice& s) { return s.name == spec.scope; });
    if (it == slices.end())
      throw std::invalid_argument("ablate: scope '" + spec.scope +
                                  "' is not a transform of this site");
    lo = it->begin;
    hi = it->end;
  }

  Transformer out = model;
  if (warned != nullptr) *warned = false;
  int removed = 0;
  for (int i = lo; i < hi; ++i) {
    if (spec.mask[i] != 1.0) continue;
    ++removed;
    const ColumnRef ref = column_ref(out, spec.site, i);
    for (int r = 0; r < ref.w->rows; ++r)
      ref.w->value[static_cast<std::size_t>(r) * ref.w->cols + ref.col] = 0.0;
    ref.b->value[ref.col] = 0.0;
  }
  if (removed == 0) {
    std::fprintf(stderr,
                 "warning: ablation mask is empty within scope '%s'; "
                 "model returned unchanged\n",
                 spec.scope.empty() ? site_name(spec.site)
                                    : spec.scope.c_str());
    if (warned != nullptr) *warned = true;
  }
  return out;
}

std::vector<std::vector<double>> random_control(
    const std::vector<double>& circuit, int n_samples, std::uint64_t seed) {
  if (n_samples <= 0)
    throw std::invalid_argument("random_control: n_samples must be positive");
  std::vector<int> complement;
  int k = 0;
  for (std::size_t i = 0; i < circuit.size(); ++i) {
    if (circuit[i] == 1.0)
      ++k;
    else if (circuit[i] == 0.0)
      complement.push_back(static_cast<int>(i));
    else
      throw std::invalid_argument("random_control: mask entries must be 0 or 1");
  }
  if (static_cast<int>(complement.size()) < k)
    throw std::invalid_argument(
        "random_control: complement (" + std::to_string(complement.size()) +
        " neurons) is smaller than the circuit (" + std::to_string(k) + ")");
  std::vector<std::vector<double>> controls;
  controls.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    Rng rng(derive_seed(seed, "random_control", static_cast<std::uint64_t>(s)));
    const auto picks =
        rng.sample_without_replacement(static_cast<int>(complement.size()), k);
    std::vector<double> mask(circuit.size(), 0.0);
    for (const int p : picks) mask[complement[p]] = 1.0;
    controls.push_back(std::move(mask));
  }
  return controls;
}

OverlapReport overlap(const ModelConfig& cfg, Site site,
                      const std::vector<double>& mask_a,
                      const std::vector<double>& mask_b) {
  check_mask(cfg, site, mask_a, "overlap");
  check_mask(cfg, site, mask_b, "overlap");
  OverlapReport rep;
  rep.site = site;
  double min_j = 2.0;
  for (const TensorSlice& s : site_tensors(cfg, site)) {
    TensorOverlap t;
    t.tensor = s.name;
    for (int i = s.begin; i < s.end; ++i) {
      const bool ia = mask_a[i] == 1.0, ib = mask_b[i] == 1.0;
      t.a += ia;
      t.b += ib;
      t.both += ia && ib;
    }
    const int uni = t.a + t.b - t.both;
    t.jaccard = uni == 0 ? 1.0 : static_cast<double>(t.both) / uni;
    if (t.jaccard < min_j) {
      min_j = t.jaccard;
      rep.min_jaccard_tensor = t.tensor;
    }
    rep.tensors.push_back(std::move(t));
  }
  if (site == Site::kAttention) {
    const int c = cfg.d_model, dh = c / cfg.n_heads;
    rep.head_frac_a.assign(cfg.n_heads, 0.0);
    rep.head_frac_b.assign(cfg.n_heads, 0.0);
    for (int h = 0; h < cfg.n_heads; ++h) {
      int ca = 0, cb = 0;
      for (int part = 0; part < 3; ++part)  // query, key, value slices
        for (int q = 0; q < dh; ++q) {
          const int col = part * c + h * dh + q;
          ca += mask_a[col] == 1.0;
          cb += mask_b[col] == 1.0;
        }
      rep.head_frac_a[h] = static_cast<double>(ca) / (3 * dh);
      rep.head_frac_b[h] = static_cast<double>(cb) / (3 * dh);
    }
  }
  return rep;
}

double evaluate_accuracy(Transformer& model, const Dataset& data,
                         int batch_size) {
  if (data.n <= 0) throw std::invalid_argument("evaluate_accuracy: empty data");
  if (batch_size <= 0)
    throw std::invalid_argument("evaluate_accuracy: batch_size must be positive");
  const int t = data.seq_len;
  long correct = 0;
  for (int start = 0; start < data.n; start += batch_size) {
    const int b = std::min(batch_size, data.n - start);
    std::vector<int> tokens(data.tokens.begin() +
                                static_cast<std::size_t>(start) * t,
                            data.tokens.begin() +
                                static_cast<std::size_t>(start + b) * t);
    Tape tape;
    ModelActs acts = forward(model, tape, tokens, b);
    const auto pred = argmax_rows(acts.logits.data(), b, model.cfg.vocab);
    for (int i = 0; i < b; ++i) correct += pred[i] == data.targets[start + i];
  }
  return static_cast<double>(correct) / data.n;
}

std::vector<ModularityRow> modularity_eval(
    const Transformer& model, Site site,
    const std::vector<CircuitEntry>& circuits, const Dataset& task1_eval,
    const Dataset& task2_eval) {
  std::vector<const CircuitEntry*> free_entries;
  for (const auto& c : circuits)
    if (!c.shared) free_entries.push_back(&c);
  std::string free_scope;
  if (free_entries.size() >= 2) {
    const OverlapReport rep =
        overlap(model.cfg, site, free_entries[0]->mask, free_entries[1]->mask);
    free_scope = rep.min_jaccard_tensor;
  }

  std::vector<ModularityRow> rows;
  for (const auto& c : circuits) {
    AblationSpec spec;
    spec.site = site;
    spec.mask = c.mask;
    spec.scope = c.shared ? std::string() : free_scope;
    Transformer view = ablate(model, spec);
    ModularityRow row;
    row.task = c.task;
    row.variable = c.variable;
    row.scope = spec.scope;
    row.acc_task1 = evaluate_accuracy(view, task1_eval);
    row.acc_task2 = evaluate_accuracy(view, task2_eval);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace cprobe
