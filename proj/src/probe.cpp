#include "cprobe/probe.hpp"

#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <stdexcept>

#include "cprobe/optim.hpp"
#include "cprobe/rng.hpp"

namespace cprobe {

namespace o = ops;

Tensor soft_nn_loss(Tensor v, const std::vector<int>& labels,
                    bool* degenerate) {
  const int n = v.rows();
  if (n < 2)
    throw std::invalid_argument("soft_nn_loss: need at least 2 rows, got " +
                                std::to_string(n));
  if (labels.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("soft_nn_loss: " +
                                std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  std::vector<double> same(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> others(static_cast<std::size_t>(n) * n, 0.0);
  bool any_pair = false;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      others[static_cast<std::size_t>(i) * n + j] = 1.0;
      if (labels[i] == labels[j]) {
        same[static_cast<std::size_t>(i) * n + j] = 1.0;
        any_pair = true;
      }
    }
  if (degenerate) *degenerate = !any_pair;

  Tape& t = *v.tape();
  Tensor kernel = o::exp(o::pairwise_cosine(v, 1e-8));
  Tensor numer = o::rowsum(o::mul(kernel, t.constant(n, n, same.data())));
  Tensor denom = o::rowsum(o::mul(kernel, t.constant(n, n, others.data())));
  return o::scale(o::mean_all(o::div(numer, denom)), -1.0);
}

double anneal_beta(int epoch, int total_epochs, double beta_max) {
  if (total_epochs <= 0)
    throw std::invalid_argument("anneal_beta: total_epochs must be positive");
  const double frac =
      static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return std::pow(beta_max, frac);
}

std::vector<double> binarize_mask(const std::vector<double>& scores) {
  std::vector<double> m(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    m[i] = scores[i] > 0.0 ? 1.0 : 0.0;
  return m;
}

namespace {

// Shared batching loop for activation extraction.
template <typename PickTensor>
std::vector<double> extract(Transformer& model, Site site,
                            const std::vector<double>& mask,
                            const std::vector<int>& tokens, int n,
                            int batch_size, bool need_logits,
                            PickTensor pick) {
  const int T = model.cfg.seq_len, C = model.cfg.d_model;
  if (tokens.size() != static_cast<std::size_t>(n) * T)
    throw std::invalid_argument("extract: token count does not match n");
  if (!mask.empty() &&
      mask.size() != static_cast<std::size_t>(mask_size(model.cfg, site)))
    throw std::invalid_argument("extract: mask has wrong size");
  std::vector<double> out(static_cast<std::size_t>(n) * C);
  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    std::vector<int> chunk(tokens.begin() + static_cast<std::size_t>(start) * T,
                           tokens.begin() +
                               static_cast<std::size_t>(start + b) * T);
    Tape tape;
    ModelActs acts;
    if (mask.empty()) {
      acts = forward(model, tape, chunk, b, need_logits);
    } else {
      MaskArg arg{site, tape.constant(1, static_cast<int>(mask.size()),
                                      mask.data())};
      acts = forward(model, tape, chunk, b, need_logits, &arg);
    }
    const Tensor picked = pick(acts);
    std::memcpy(out.data() + static_cast<std::size_t>(start) * C,
                picked.data(), sizeof(double) * b * C);
  }
  return out;
}

}  // namespace

std::vector<double> update_vectors(Transformer& model, Site site,
                                   const std::vector<double>& mask,
                                   const std::vector<int>& tokens, int n,
                                   int batch_size) {
  return extract(model, site, mask, tokens, n, batch_size, false,
                 [site](const ModelActs& acts) {
                   return site == Site::kAttention ? acts.update_attn
                                                   : acts.update_mlp;
                 });
}

std::vector<double> residual_activations(Transformer& model, Site site,
                                         const std::vector<int>& tokens,
                                         int n, int batch_size) {
  return extract(model, site, {}, tokens, n, batch_size, false,
                 [site](const ModelActs& acts) {
                   return site == Site::kAttention ? acts.residual_attn
                                                   : acts.residual_final;
                 });
}

CircuitProbeResult train_circuit_probe(Transformer& model, Site site,
                                       const Dataset& data,
                                       const std::vector<int>& labels,
                                       const CircuitProbeConfig& cfg) {
  if (labels.size() != static_cast<std::size_t>(data.n))
    throw std::invalid_argument("train_circuit_probe: label count mismatch");
  if (data.n < 2)
    throw std::invalid_argument("train_circuit_probe: need at least 2 examples");
  if (cfg.epochs <= 0 || cfg.batch_size < 2)
    throw std::invalid_argument(
        "train_circuit_probe: epochs must be positive and batch_size >= 2");

  const int msize = mask_size(model.cfg, site);
  const int T = model.cfg.seq_len;
  Param scores("mask_scores", 1, msize);  // zero init: soft mask starts at 0.5
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  AdamW opt({&scores}, ocfg);

  // Freeze the model for the duration, restoring the caller's state after.
  const bool was_frozen = model.wte.frozen;
  model.set_frozen(true);

  CircuitProbeResult res;
  res.loss_history.reserve(cfg.epochs);
  std::vector<int> order(data.n);
  for (int i = 0; i < data.n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double beta = anneal_beta(epoch, cfg.epochs, cfg.beta_max);
    Rng shuffle_rng(derive_seed(cfg.seed, "probe_shuffle", epoch));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start + 2 <= data.n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, data.n - start);
      if (b < 2) break;
      std::vector<int> toks(static_cast<std::size_t>(b) * T);
      std::vector<int> labs(b);
      for (int i = 0; i < b; ++i) {
        const int e = order[start + i];
        std::copy(data.tokens.begin() + static_cast<std::size_t>(e) * T,
                  data.tokens.begin() + static_cast<std::size_t>(e + 1) * T,
                  toks.begin() + static_cast<std::size_t>(i) * T);
        labs[i] = labels[e];
      }
      opt.zero_grad();
      Tape tape;
      Tensor soft = o::sigmoid(o::scale(tape.leaf(scores), beta));
      MaskArg arg{site, soft};
      ModelActs acts = forward(model, tape, toks, b, false, &arg);
      Tensor v = site == Site::kAttention ? acts.update_attn : acts.update_mlp;
      bool degenerate = false;
      Tensor cluster = soft_nn_loss(v, labs, &degenerate);
      if (degenerate) {
        ++res.degenerate_batches;
        if (res.degenerate_batches <= 3)
          std::cerr << "warning: batch at epoch " << epoch
                    << " has no same-label pair; clustering loss is 0\n";
        else if (res.degenerate_batches == 4)
          std::cerr << "warning: further degenerate-batch warnings suppressed\n";
      }
      Tensor loss =
          o::add(cluster, o::scale(o::sum_all(soft), cfg.lambda));
      tape.backward(loss);
      opt.step();
      epoch_loss += cluster.scalar();
      ++batches;
    }
    res.loss_history.push_back(batches ? epoch_loss / batches : 0.0);
  }
  model.set_frozen(was_frozen);

  res.scores = scores.value;
  res.mask = binarize_mask(scores.value);
  res.l0 = 0;
  for (const double m : res.mask) res.l0 += m > 0.5;
  res.final_loss = res.loss_history.empty() ? 0.0 : res.loss_history.back();
  return res;
}

namespace {

// Cosine similarity with the same zero-norm clamp as the kernel.
double cosine(const double* x, const double* y, int d) {
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (int i = 0; i < d; ++i) {
    xx += x[i] * x[i];
    yy += y[i] * y[i];
    xy += x[i] * y[i];
  }
  const double nx = std::max(std::sqrt(xx), 1e-8);
  const double ny = std::max(std::sqrt(yy), 1e-8);
  return xy / (nx * ny);
}

}  // namespace

KnnResult knn_evaluate_vectors(const std::vector<double>& train_vecs,
                               const std::vector<int>& train_labels,
                               const std::vector<double>& test_vecs,
                               const std::vector<int>& test_labels, int dim,
                               std::uint64_t seed) {
  const int ntr = static_cast<int>(train_labels.size());
  const int nte = static_cast<int>(test_labels.size());
  if (train_vecs.size() != static_cast<std::size_t>(ntr) * dim ||
      test_vecs.size() != static_cast<std::size_t>(nte) * dim)
    throw std::invalid_argument("knn: vector/label size mismatch");
  if (ntr == 0 || nte == 0)
    throw std::invalid_argument("knn: empty train or test set");

  // One reference per label: scan train rows in a seeded random order and
  // keep the first row seen for each label.
  std::vector<int> order(ntr);
  for (int i = 0; i < ntr; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "knn_refs"));
  rng.shuffle(order);
  std::map<int, int> ref_of;  // label -> train row
  for (const int idx : order) ref_of.emplace(train_labels[idx], idx);
  for (const int l : test_labels) {
    if (!ref_of.count(l)) {
      throw std::invalid_argument("knn: test label " + std::to_string(l) +
                                  " has no train reference");
    }
  }

  KnnResult res;
  for (const auto& [label, idx] : ref_of) {
    res.ref_labels.push_back(label);
    res.ref_indices.push_back(idx);
  }

  res.predictions.resize(nte);
  int hits = 0;
  for (int i = 0; i < nte; ++i) {
    const double* x = test_vecs.data() + static_cast<std::size_t>(i) * dim;
    double best = -2.0;
    int best_label = 0;
    // ref_of iterates labels ascending, so ties keep the lowest label.
    for (const auto& [label, idx] : ref_of) {
      const double c = cosine(
          x, train_vecs.data() + static_cast<std::size_t>(idx) * dim, dim);
      if (c > best) {
        best = c;
        best_label = label;
      }
    }
    res.predictions[i] = best_label;
    hits += best_label == test_labels[i];
  }
  res.accuracy = static_cast<double>(hits) / nte;
  return res;
}

KnnResult knn_evaluate(Transformer& model, Site site,
                       const std::vector<double>& mask, const Dataset& train,
                       const std::vector<int>& train_labels,
                       const Dataset& test,
                       const std::vector<int>& test_labels,
                       std::uint64_t seed) {
  const auto tr =
      update_vectors(model, site, mask, train.tokens, train.n);
  const auto te = update_vectors(model, site, mask, test.tokens, test.n);
  return knn_evaluate_vectors(tr, train_labels, te, test_labels,
                              model.cfg.d_model, seed);
}

}  // namespace cprobe
