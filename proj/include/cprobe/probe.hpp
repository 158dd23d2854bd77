#pragma once

#include <cstdint>
#include <vector>

#include "cprobe/model.hpp"
#include "cprobe/tasks.hpp"

namespace cprobe {

// Soft nearest-neighbors clustering loss over row vectors v with integer
// labels: for each row, the exp(cosine) kernel mass on same-label rows
// divided by the mass on all other rows, averaged and negated. Lies in
// [-1, 0]; batches with no same-label pair anywhere give exactly 0 (and set
// *degenerate). Throws std::invalid_argument for fewer than two rows.
Tensor soft_nn_loss(Tensor v, const std::vector<int>& labels,
                    bool* degenerate = nullptr);

// Temperature schedule for continuous sparsification: beta_max^(epoch/total),
// so epoch 0 trains the plain sigmoid and the final epoch is nearly binary.
double anneal_beta(int epoch, int total_epochs, double beta_max);

// Hard mask from raw scores: strictly positive -> 1, else 0.
std::vector<double> binarize_mask(const std::vector<double>& scores);

struct CircuitProbeConfig {
  int epochs = 90;
  double beta_max = 200.0;
  double lambda = 1e-6;  // L1 weight on the soft mask
  double lr = 0.001;
  int batch_size = 500;
  std::uint64_t seed = 0;
};

struct CircuitProbeResult {
  std::vector<double> scores;  // raw mask scores s
  std::vector<double> mask;    // binarized
  int l0 = 0;                  // surviving neurons
  double final_loss = 0.0;     // mean clustering loss over the last epoch
  int degenerate_batches = 0;
  std::vector<double> loss_history;  // per-epoch mean clustering loss
};

// Learns a binary mask over the site's output neurons such that the masked
// block's residual updates cluster by the variable labels. The model is
// frozen for the duration; only the mask scores train (Adam, no decay).
CircuitProbeResult train_circuit_probe(Transformer& model, Site site,
                                       const Dataset& data,
                                       const std::vector<int>& labels,
                                       const CircuitProbeConfig& cfg);

// Residual update vectors at a site for every example, under an optional
// 0/1 (or soft) mask; empty mask means unmasked. Row-major n x d_model.
std::vector<double> update_vectors(Transformer& model, Site site,
                                   const std::vector<double>& mask,
                                   const std::vector<int>& tokens, int n,
                                   int batch_size = 1024);

// Residual stream activations at a site (what the representation probes
// read): after the attention add or after the MLP add, final position.
std::vector<double> residual_activations(Transformer& model, Site site,
                                         const std::vector<int>& tokens,
                                         int n, int batch_size = 1024);

struct KnnResult {
  double accuracy = 0.0;
  std::vector<int> ref_indices;  // chosen train row per label, label-sorted
  std::vector<int> ref_labels;
  std::vector<int> predictions;  // per test row
};

// 1-nearest-neighbor protocol: one seeded reference vector per label drawn
// from the train rows, cosine similarity (zero rows similarity 0), ties to
// the lowest label.
KnnResult knn_evaluate_vectors(const std::vector<double>& train_vecs,
                               const std::vector<int>& train_labels,
                               const std::vector<double>& test_vecs,
                               const std::vector<int>& test_labels, int dim,
                               std::uint64_t seed);

// Convenience wrapper: masked update vectors for both splits, then 1-NN.
KnnResult knn_evaluate(Transformer& model, Site site,
                       const std::vector<double>& mask, const Dataset& train,
                       const std::vector<int>& train_labels,
                       const Dataset& test,
                       const std::vector<int>& test_labels,
                       std::uint64_t seed);

}  // namespace cprobe
