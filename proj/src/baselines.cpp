#include "cprobe/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cstring>
#include <numeric>
#include <set>
#include <stdexcept>

#include "cprobe/optim.hpp"
#include "cprobe/probe.hpp"
#include "cprobe/rng.hpp"

namespace cprobe {

namespace o = ops;

const char* probe_rep_name(ProbeRep rep) {
  switch (rep) {
    case ProbeRep::kResidualPostAttn: return "residual_post_attn";
    case ProbeRep::kResidualPostMlp: return "residual_post_mlp";
    case ProbeRep::kAttnUpdate: return "attn_update";
    case ProbeRep::kMlpUpdate: return "mlp_update";
  }
  throw std::invalid_argument("unknown representation");
}

ProbeRep probe_rep_from_name(const std::string& name) {
  if (name == "residual_post_attn") return ProbeRep::kResidualPostAttn;
  if (name == "residual_post_mlp") return ProbeRep::kResidualPostMlp;
  if (name == "attn_update") return ProbeRep::kAttnUpdate;
  if (name == "mlp_update") return ProbeRep::kMlpUpdate;
  throw std::invalid_argument("unknown representation '" + name + "'");
}

const char* probe_kind_name(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::kLinear: return "linear";
    case ProbeKind::kNonlinear: return "nonlinear";
    case ProbeKind::kContrastive: return "contrastive";
  }
  throw std::invalid_argument("unknown probe kind");
}

ProbeKind probe_kind_from_name(const std::string& name) {
  if (name == "linear") return ProbeKind::kLinear;
  if (name == "nonlinear") return ProbeKind::kNonlinear;
  if (name == "contrastive") return ProbeKind::kContrastive;
  throw std::invalid_argument("unknown probe kind '" + name + "'");
}

namespace {

Tensor rep_tensor(const ModelActs& acts, ProbeRep rep) {
  switch (rep) {
    case ProbeRep::kResidualPostAttn: return acts.residual_attn;
    case ProbeRep::kResidualPostMlp: return acts.residual_final;
    case ProbeRep::kAttnUpdate: return acts.update_attn;
    case ProbeRep::kMlpUpdate: return acts.update_mlp;
  }
  throw std::invalid_argument("unknown representation");
}

}  // namespace

std::vector<double> collect_representations(Transformer& model, ProbeRep rep,
                                            const std::vector<int>& tokens,
                                            int n, int batch_size) {
  const int t = model.cfg.seq_len, c = model.cfg.d_model;
  if (n <= 0 || static_cast<int>(tokens.size()) != n * t)
    throw std::invalid_argument("collect_representations: bad token buffer");
  if (batch_size <= 0)
    throw std::invalid_argument("collect_representations: bad batch size");
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    const std::vector<int> chunk(
        tokens.begin() + static_cast<std::size_t>(start) * t,
        tokens.begin() + static_cast<std::size_t>(start + b) * t);
    Tape tape;
    ModelActs acts = forward(model, tape, chunk, b, false);
    Tensor src = rep_tensor(acts, rep);
    std::memcpy(out.data() + static_cast<std::size_t>(start) * c, src.data(),
                static_cast<std::size_t>(b) * c * sizeof(double));
  }
  return out;
}

std::vector<Param*> ProbeModel::params() {
  if (kind == ProbeKind::kContrastive) return {&w1};
  if (kind == ProbeKind::kLinear) return {&w1, &b1};
  return {&w1, &b1, &w2, &b2};
}

Tensor ProbeModel::logits(Tape& t, Tensor x) {
  if (kind == ProbeKind::kContrastive)
    throw std::invalid_argument("contrastive probes have no class logits");
  Tensor h = o::add_rowvec(o::matmul(x, t.leaf(w1)), t.leaf(b1));
  if (kind == ProbeKind::kLinear) return h;
  return o::add_rowvec(o::matmul(o::relu(h), t.leaf(w2)), t.leaf(b2));
}

Tensor ProbeModel::project(Tape& t, Tensor x) {
  if (kind != ProbeKind::kContrastive)
    throw std::invalid_argument("only contrastive probes project");
  return o::matmul(x, t.leaf(w1));
}

std::vector<int> ProbeModel::predict(const std::vector<double>& reps, int n) {
  Tape t;
  Tensor l = logits(t, t.constant(n, dim, reps.data()));
  return argmax_rows(l.data(), n, n_classes);
}

namespace {

void check_probe_data(const std::vector<double>& reps,
                      const std::vector<int>& labels, int dim,
                      const char* what) {
  if (dim <= 0) throw std::invalid_argument("train_probe: dim must be positive");
  if (labels.empty() || reps.size() != labels.size() * dim)
    throw std::invalid_argument(std::string("train_probe: ") + what +
                                " representations do not match labels");
  for (const int l : labels)
    if (l < 0) throw std::invalid_argument("train_probe: negative label");
}

ProbeModel make_probe(ProbeKind kind, int dim, int n_classes,
                      const ProbeConfig& cfg) {
  ProbeModel p;
  p.kind = kind;
  p.dim = dim;
  p.n_classes = kind == ProbeKind::kContrastive ? 0 : n_classes;
  Rng rng(derive_seed(cfg.seed, "probe_init"));
  const auto fill = [&](Param& w) {
    for (auto& x : w.value) x = 0.02 * rng.normal();
  };
  switch (kind) {
    case ProbeKind::kLinear:
      p.w1 = Param("probe.w1", dim, n_classes);
      p.b1 = Param("probe.b1", 1, n_classes);
      fill(p.w1);
      break;
    case ProbeKind::kNonlinear:
      p.w1 = Param("probe.w1", dim, cfg.hidden);
      p.b1 = Param("probe.b1", 1, cfg.hidden);
      p.w2 = Param("probe.w2", cfg.hidden, n_classes);
      p.b2 = Param("probe.b2", 1, n_classes);
      fill(p.w1);
      fill(p.w2);
      break;
    case ProbeKind::kContrastive:
      p.w1 = Param("probe.w1", dim, cfg.contrastive_dim);
      fill(p.w1);
      break;
  }
  return p;
}

}  // namespace

ProbeResult train_probe(ProbeKind kind, const std::vector<double>& train_reps,
                        const std::vector<int>& train_labels,
                        const std::vector<double>& test_reps,
                        const std::vector<int>& test_labels, int dim,
                        const ProbeConfig& cfg) {
  check_probe_data(train_reps, train_labels, dim, "train");
  check_probe_data(test_reps, test_labels, dim, "test");
  if (cfg.epochs <= 0 || cfg.lr <= 0.0)
    throw std::invalid_argument("train_probe: bad training config");
  const std::set<int> classes(train_labels.begin(), train_labels.end());
  if (classes.size() < 2)
    throw std::invalid_argument(
        "train_probe: training data holds a single class");
  const int n = static_cast<int>(train_labels.size());
  const int n_classes = *classes.rbegin() + 1;

  ProbeResult res;
  res.model = make_probe(kind, dim, n_classes, cfg);
  auto params = res.model.params();

  if (kind == ProbeKind::kContrastive) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> batch_reps;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      Rng shuffler(derive_seed(cfg.seed, "probe_shuffle",
                               static_cast<std::uint64_t>(epoch)));
      shuffler.shuffle(order);
      double epoch_loss = 0.0;
      int batches = 0;
      for (int start = 0; start < n; start += cfg.batch_size) {
        const int b = std::min(cfg.batch_size, n - start);
        if (b < 2) continue;  // clustering needs pairs
        batch_reps.assign(static_cast<std::size_t>(b) * dim, 0.0);
        batch_labels.assign(b, 0);
        for (int i = 0; i < b; ++i) {
          const int src = order[start + i];
          std::memcpy(batch_reps.data() + static_cast<std::size_t>(i) * dim,
                      train_reps.data() + static_cast<std::size_t>(src) * dim,
                      dim * sizeof(double));
          batch_labels[i] = train_labels[src];
        }
        for (Param* p : params) p->zero_grad();
        Tape t;
        Tensor v = res.model.project(t, t.constant(b, dim, batch_reps.data()));
        Tensor loss = soft_nn_loss(v, batch_labels);
        epoch_loss += loss.scalar();
        ++batches;
        if (loss.requires_grad()) {
          t.backward(loss);
          sgd_step(params, cfg.lr);
        }
      }
      res.loss_history.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    }
    Tape tr, te;
    Tensor ptrain = res.model.project(
        tr, tr.constant(n, dim, train_reps.data()));
    const int nt = static_cast<int>(test_labels.size());
    Tensor ptest =
        res.model.project(te, te.constant(nt, dim, test_reps.data()));
    std::vector<double> vtrain(ptrain.data(), ptrain.data() + ptrain.size());
    std::vector<double> vtest(ptest.data(), ptest.data() + ptest.size());
    res.accuracy = knn_evaluate_vectors(vtrain, train_labels, vtest,
                                        test_labels, cfg.contrastive_dim,
                                        cfg.seed)
                       .accuracy;
    return res;
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (Param* p : params) p->zero_grad();
    Tape t;
    Tensor l = res.model.logits(t, t.constant(n, dim, train_reps.data()));
    Tensor loss = o::cross_entropy(l, train_labels);
    res.loss_history.push_back(loss.scalar());
    t.backward(loss);
    sgd_step(params, cfg.lr);
  }
  const int nt = static_cast<int>(test_labels.size());
  const auto pred = res.model.predict(test_reps, nt);
  int correct = 0;
  for (int i = 0; i < nt; ++i) correct += pred[i] == test_labels[i];
  res.accuracy = static_cast<double>(correct) / nt;
  return res;
}

std::vector<double> AffineEraser::apply(const std::vector<double>& reps,
                                        int n) const {
  if (n <= 0 || reps.size() != static_cast<std::size_t>(n) * dim)
    throw std::invalid_argument("eraser: representation buffer mismatch");
  std::vector<double> out(reps.size());
  for (int r = 0; r < n; ++r) {
    const double* x = reps.data() + static_cast<std::size_t>(r) * dim;
    double* y = out.data() + static_cast<std::size_t>(r) * dim;
    for (int i = 0; i < dim; ++i) {
      double qx = 0.0;
      const double* qrow = projection.data() + static_cast<std::size_t>(i) * dim;
      for (int j = 0; j < dim; ++j) qx += qrow[j] * x[j];
      y[i] = x[i] - qx + offset[i];
    }
  }
  return out;
}

AffineEraser identity_eraser(int dim) {
  if (dim <= 0) throw std::invalid_argument("identity_eraser: bad dim");
  AffineEraser e;
  e.dim = dim;
  e.projection.assign(static_cast<std::size_t>(dim) * dim, 0.0);
  e.mean.assign(dim, 0.0);
  e.offset.assign(dim, 0.0);
  return e;
}

AffineEraser fit_eraser(const std::vector<double>& reps,
                        const std::vector<int>& labels, int dim) {
  check_probe_data(reps, labels, dim, "eraser");
  const int n = static_cast<int>(labels.size());
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  if (n < k)
    throw std::invalid_argument("fit_eraser: fewer samples (" +
                                std::to_string(n) + ") than classes (" +
                                std::to_string(k) + ")");

  using Mat = Eigen::MatrixXd;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      x(reps.data(), n, dim);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Mat xc = x.rowwise() - mu;

  Mat zc = Mat::Zero(n, k);
  for (int i = 0; i < n; ++i) zc(i, labels[i]) = 1.0;
  zc.rowwise() -= zc.colwise().mean();

  const Mat sxx =
      (xc.transpose() * xc) / n + 1e-6 * Mat::Identity(dim, dim);
  Eigen::SelfAdjointEigenSolver<Mat> es(sxx);
  const Eigen::VectorXd lam = es.eigenvalues();
  const Mat v = es.eigenvectors();
  const Mat white = v * lam.cwiseSqrt().cwiseInverse().asDiagonal() *
                    v.transpose();  // sxx^(-1/2)
  const Mat unwhite = v * lam.cwiseSqrt().asDiagonal() * v.transpose();

  const Mat sxz = (xc.transpose() * zc) / n;
  const Mat m = white * sxz;
  Eigen::BDCSVD<Mat> svd(m, Eigen::ComputeThinU);
  const Eigen::VectorXd sv = svd.singularValues();
  const double tol = std::max(1e-12, 1e-10 * (sv.size() > 0 ? sv(0) : 0.0));
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i) rank += sv(i) > tol;

  Mat q = Mat::Zero(dim, dim);
  if (rank > 0) {
    const Mat u = svd.matrixU().leftCols(rank);
    q = unwhite * (u * u.transpose()) * white;
  }

  AffineEraser e;
  e.dim = dim;
  e.projection.resize(static_cast<std::size_t>(dim) * dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      e.projection[static_cast<std::size_t>(i) * dim + j] = q(i, j);
  e.mean.assign(mu.data(), mu.data() + dim);
  const Eigen::VectorXd off = q * mu.transpose();
  e.offset.assign(off.data(), off.data() + dim);
  return e;
}

double patched_accuracy(Transformer& model, ProbeRep rep,
                        const std::vector<double>& replacement,
                        const Dataset& data, int batch_size) {
  const int c = model.cfg.d_model, t = model.cfg.seq_len;
  if (replacement.size() != static_cast<std::size_t>(data.n) * c)
    throw std::invalid_argument("patched_accuracy: replacement shape mismatch");
  if (batch_size <= 0)
    throw std::invalid_argument("patched_accuracy: bad batch size");
  const Site site = (rep == ProbeRep::kResidualPostAttn ||
                     rep == ProbeRep::kAttnUpdate)
                        ? Site::kAttention
                        : Site::kMlp;
  long correct = 0;
  std::vector<double> rows;
  for (int start = 0; start < data.n; start += batch_size) {
    const int b = std::min(batch_size, data.n - start);
    const std::vector<int> chunk(
        data.tokens.begin() + static_cast<std::size_t>(start) * t,
        data.tokens.begin() + static_cast<std::size_t>(start + b) * t);
    Tape tape;
    ModelActs acts = forward(model, tape, chunk, b, false);
    const double* repl = replacement.data() + static_cast<std::size_t>(start) * c;
    rows.assign(repl, repl + static_cast<std::size_t>(b) * c);
    if (rep == ProbeRep::kAttnUpdate) {
      const double* res = acts.residual_attn.data();
      const double* upd = acts.update_attn.data();
      for (std::size_t i = 0; i < rows.size(); ++i)
        rows[i] += res[i] - upd[i];
    } else if (rep == ProbeRep::kMlpUpdate) {
      const double* res = acts.residual_final.data();
      const double* upd = acts.update_mlp.data();
      for (std::size_t i = 0; i < rows.size(); ++i)
        rows[i] += res[i] - upd[i];
    }
    Tensor patched = tape.constant(b, c, rows.data());
    Tensor logits = resume_from(model, tape, site, patched);
    const auto pred = argmax_rows(logits.data(), b, model.cfg.vocab);
    for (int i = 0; i < b; ++i) correct += pred[i] == data.targets[start + i];
  }
  return static_cast<double>(correct) / data.n;
}

double amnesic_eval(Transformer& model, const AffineEraser& eraser,
                    ProbeRep rep, const Dataset& data, int batch_size) {
  if (eraser.dim != model.cfg.d_model)
    throw std::invalid_argument("amnesic_eval: eraser dimension mismatch");
  const auto reps =
      collect_representations(model, rep, data.tokens, data.n, batch_size);
  const auto erased = eraser.apply(reps, data.n);
  return patched_accuracy(model, rep, erased, data, batch_size);
}

CounterfactualResult counterfactual_embedding(ProbeModel& probe,
                                              const std::vector<double>& rep,
                                              int target, double lr,
                                              int max_steps) {
  if (probe.kind == ProbeKind::kContrastive)
    throw std::invalid_argument(
        "counterfactual_embedding: contrastive probes have no class logits");
  if (static_cast<int>(rep.size()) != probe.dim)
    throw std::invalid_argument("counterfactual_embedding: bad representation");
  if (target < 0 || target >= probe.n_classes)
    throw std::invalid_argument("counterfactual_embedding: bad target class");
  if (lr <= 0.0 || max_steps < 0)
    throw std::invalid_argument("counterfactual_embedding: bad config");

  auto params = probe.params();
  std::vector<bool> frozen;
  for (Param* p : params) {
    frozen.push_back(p->frozen);
    p->frozen = true;
  }
  Param e("counterfactual", 1, probe.dim);
  e.value = rep;

  CounterfactualResult res;
  res.rep = rep;
  for (int step = 0; step <= max_steps; ++step) {
    Tape t;
    Tensor logits = probe.logits(t, t.leaf(e));
    const int pred = argmax_rows(logits.data(), 1, probe.n_classes)[0];
    if (pred == target) {
      res.success = true;
      res.steps = step;
      break;
    }
    if (step == max_steps) {
      res.steps = max_steps;
      break;
    }
    e.zero_grad();
    t.backward(o::pick(logits, 0, target));
    for (std::size_t i = 0; i < e.value.size(); ++i)
      e.value[i] += lr * e.grad[i];  // ascent on the target logit
  }
  res.rep = e.value;
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->frozen = frozen[i];
  return res;
}

}  // namespace cprobe
