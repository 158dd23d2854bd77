#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cprobe/model.hpp"
#include "cprobe/tasks.hpp"

namespace cprobe {

// Column span of the site mask owned by one linear transform.
struct TensorSlice {
  std::string name;
  int begin = 0;
  int end = 0;
};

// The two transforms at a site, in mask-layout order:
// attention -> {c_attn, c_proj}; mlp -> {c_fc, mlp.c_proj}.
std::vector<TensorSlice> site_tensors(const ModelConfig& cfg, Site site);

// A causal ablation: remove (zero out) the circuit's neurons. Empty scope
// means the whole site; otherwise only the named transform's columns move.
struct AblationSpec {
  Site site = Site::kAttention;
  std::vector<double> mask;  // binary row, length mask_size(cfg, site)
  std::string scope;         // "" = whole site, else a site_tensors name
};

// Copy of the model where every in-scope mask position with m = 1 has its
// weight column and bias entry zeroed; the complement and everything out of
// scope keep their values, and the input model is never modified. An empty
// in-scope mask is a no-op: it warns on stderr and sets *warned when given.
Transformer ablate(const Transformer& model, const AblationSpec& spec,
                   bool* warned = nullptr);

// n_samples masks with exactly the circuit's neuron count, drawn without
// replacement from the circuit's complement, so each control is disjoint
// from the circuit. Throws std::invalid_argument when the complement holds
// fewer neurons than the circuit.
std::vector<std::vector<double>> random_control(
    const std::vector<double>& circuit, int n_samples, std::uint64_t seed);

struct TensorOverlap {
  std::string tensor;
  int both = 0;  // |A ∩ B|
  int a = 0;     // |A|
  int b = 0;     // |B|
  double jaccard = 0.0;  // |A∩B| / |A∪B|; 1.0 when both sets are empty
};

struct OverlapReport {
  Site site = Site::kAttention;
  std::vector<TensorOverlap> tensors;
  // Attention site only: per head, the fraction of the head's c_attn
  // columns (its query, key and value slices together) present in a mask.
  std::vector<double> head_frac_a, head_frac_b;
  // The transform where the two masks overlap least; scoped ablations key
  // off this rather than a hard-coded tensor name.
  std::string min_jaccard_tensor;
};

OverlapReport overlap(const ModelConfig& cfg, Site site,
                      const std::vector<double>& mask_a,
                      const std::vector<double>& mask_b);

// Mean accuracy of final-position predictions over a dataset, batched.
double evaluate_accuracy(Transformer& model, const Dataset& data,
                         int batch_size = 1024);

// One hypothesized variable's circuit, probed on one training task.
struct CircuitEntry {
  int task = 1;          // task whose examples the circuit was probed on
  std::string variable;  // label-variable name
  bool shared = false;   // variable computed by both tasks?
  std::vector<double> mask;
};

struct ModularityRow {
  int task = 0;
  std::string variable;
  std::string scope;  // "" whole site, else tensor name
  double acc_task1 = 0.0;
  double acc_task2 = 0.0;
};

// Targeted-ablation table: remove each circuit and measure accuracy on both
// tasks' evaluation sets. Shared-variable circuits ablate their whole site;
// free-variable circuits are scoped to the transform where the two free
// circuits overlap least, read off the overlap report.
std::vector<ModularityRow> modularity_eval(
    const Transformer& model, Site site,
    const std::vector<CircuitEntry>& circuits, const Dataset& task1_eval,
    const Dataset& task2_eval);

}  // namespace cprobe
