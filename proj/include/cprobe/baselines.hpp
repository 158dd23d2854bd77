#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cprobe/model.hpp"
#include "cprobe/tasks.hpp"

namespace cprobe {

// Which final-position representation a baseline reads or patches.
enum class ProbeRep {
  kResidualPostAttn,  // residual stream after the attention add
  kResidualPostMlp,   // residual stream after the MLP add
  kAttnUpdate,        // attention block's residual update
  kMlpUpdate,         // MLP block's residual update
};

const char* probe_rep_name(ProbeRep rep);
ProbeRep probe_rep_from_name(const std::string& name);

// Final-position representations for every example, n x d_model, batched.
std::vector<double> collect_representations(Transformer& model, ProbeRep rep,
                                            const std::vector<int>& tokens,
                                            int n, int batch_size = 1024);

enum class ProbeKind { kLinear, kNonlinear, kContrastive };

const char* probe_kind_name(ProbeKind kind);
ProbeKind probe_kind_from_name(const std::string& name);

struct ProbeConfig {
  int epochs = 100;
  double lr = 0.1;
  int hidden = 256;          // nonlinear probe's hidden width
  int contrastive_dim = 113; // contrastive projection dimension
  int batch_size = 500;      // contrastive clustering batches
  std::uint64_t seed = 0;
};

// A classifier (linear / one-hidden-layer ReLU) or contrastive projection
// over fixed representations. Contrastive probes use only w1 (dim x d).
struct ProbeModel {
  ProbeKind kind = ProbeKind::kLinear;
  int dim = 0;        // input dimension
  int n_classes = 0;  // classifier classes (0 for contrastive)
  Param w1, b1, w2, b2;

  std::vector<Param*> params();
  Tensor logits(Tape& t, Tensor x);   // classifier kinds only
  Tensor project(Tape& t, Tensor x);  // contrastive kind only
  std::vector<int> predict(const std::vector<double>& reps, int n);
};

struct ProbeResult {
  ProbeModel model;
  double accuracy = 0.0;  // held-out; contrastive uses the 1-NN protocol
  std::vector<double> loss_history;
};

// Classifier kinds train full-batch with plain gradient descent and report
// held-out argmax accuracy. The contrastive kind trains its projection with
// the clustering loss over minibatches and is evaluated with the same
// seeded one-reference-per-class 1-NN protocol as circuit probing.
// Throws std::invalid_argument for single-class training data.
ProbeResult train_probe(ProbeKind kind, const std::vector<double>& train_reps,
                        const std::vector<int>& train_labels,
                        const std::vector<double>& test_reps,
                        const std::vector<int>& test_labels, int dim,
                        const ProbeConfig& cfg = {});

// Affine map r(x) = x - Q(x - mean) that removes all linearly decodable
// label information: the cross-covariance between erased representations
// and one-hot labels is zero on the fitting data.
struct AffineEraser {
  int dim = 0;
  std::vector<double> projection;  // Q, dim x dim, row-major
  std::vector<double> mean;        // fitted representation mean
  std::vector<double> offset;      // Q * mean

  // Erase n rows (flat n x dim).
  std::vector<double> apply(const std::vector<double>& reps, int n) const;
};

AffineEraser identity_eraser(int dim);

// Least-norm oblique projection in whitened space removing the label-mean
// subspace; whitening is ridge-regularized with 1e-6 * I. Throws
// std::invalid_argument when there are fewer samples than classes.
AffineEraser fit_eraser(const std::vector<double>& reps,
                        const std::vector<int>& labels, int dim);

// Task accuracy after substituting `replacement` (n x d_model, aligned with
// data order) for the representation at `rep` and resuming the forward pass.
double patched_accuracy(Transformer& model, ProbeRep rep,
                        const std::vector<double>& replacement,
                        const Dataset& data, int batch_size = 1024);

// Amnesic evaluation: erase the site's representations for every test
// example, patch them back, and report task accuracy.
double amnesic_eval(Transformer& model, const AffineEraser& eraser,
                    ProbeRep rep, const Dataset& data, int batch_size = 1024);

struct CounterfactualResult {
  std::vector<double> rep;  // modified representation
  bool success = false;     // probe argmax reached the target
  int steps = 0;
};

// Gradient ascent on the frozen probe's target-class logit with respect to
// the representation. Stops as soon as the probe predicts the target
// (possibly after zero steps); exhausting max_steps is success=false.
CounterfactualResult counterfactual_embedding(ProbeModel& probe,
                                              const std::vector<double>& rep,
                                              int target, double lr = 0.1,
                                              int max_steps = 1000);

}  // namespace cprobe
