#include "cprobe/experiments.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "cprobe/checkpoint.hpp"
#include "cprobe/rng.hpp"

namespace cprobe {

namespace {

namespace fs = std::filesystem;

[[noreturn]] void bad(const std::string& msg) {
  throw std::invalid_argument("experiment: " + msg);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

const std::set<std::string>& allowed_vars(TaskKind kind) {
  static const std::set<std::string> pair_vars = {"a_sq", "b_sq", "neg_b_sq",
                                                  "a_plus_b", "a_minus_b"};
  static const std::set<std::string> multi_vars = {"a_mod_p", "b_mod_p1",
                                                   "c_mod_p2"};
  return kind == TaskKind::kMultitask ? multi_vars : pair_vars;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string task_tag(int task) {
  if (task == 0) return "";
  return "task" + std::to_string(task);
}

void log_line(const std::string& msg) {
  std::fprintf(stderr, "%s\n", msg.c_str());
  std::fflush(stderr);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& raw) {
  static const std::set<std::string> known = {
      "experiment",     "task",
      "p",              "train_frac",
      "d_model",        "n_heads",
      "d_mlp",          "lr",
      "weight_decay",   "batch_size",
      "epochs",         "early_stop",
      "eval_interval",  "checkpoint_interval",
      "probe_sites",    "variables",
      "probe_epochs",   "probe_lr",
      "probe_batch",    "lambda",
      "beta_max",       "baseline_epochs",
      "baseline_lr",    "baseline_hidden",
      "contrastive_dim", "baseline_batch",
      "run_linear",     "run_nonlinear",
      "run_contrastive", "run_eraser",
      "run_counterfactual", "run_controls",
      "n_controls",     "counterfactual_samples",
      "sweep_stride",   "transfer_epochs",
      "transfer_threshold", "seed",
      "out"};
  for (const auto& [k, v] : raw.entries()) {
    (void)v;
    if (!known.count(k)) bad("unknown config key '" + k + "'");
  }

  ExperimentConfig c;
  c.experiment = raw.get_str("experiment");
  std::vector<std::string> def_sites;
  std::vector<std::string> def_vars;
  if (c.experiment == "exp1") {
    c.task = TaskKind::kA2MinusB2;
    def_sites = {"attention", "mlp"};
    def_vars = {"a_sq", "neg_b_sq", "a_plus_b", "a_minus_b"};
    c.run_contrastive = true;
    c.run_eraser = true;
    c.run_counterfactual = true;
  } else if (c.experiment == "exp2") {
    c.task = TaskKind::kMultitask;
    def_sites = {"attention"};
    c.run_eraser = true;
  } else if (c.experiment == "exp3") {
    c.task = TaskKind::kA2PlusB;
    c.train_frac = 0.333;
    c.epochs = 25000;
    c.early_stop = false;
    c.eval_interval = 250;
    c.checkpoint_interval = 250;
    def_sites = {"attention"};
    def_vars = {"a_sq", "b_sq"};
  } else {
    bad("experiment must be exp1, exp2 or exp3, got '" + c.experiment + "'");
  }

  if (raw.has("task")) c.task = task_from_name(raw.get_str("task"));
  if (c.experiment == "exp2" && c.task != TaskKind::kMultitask) {
    bad("exp2 requires the multitask task");
  }
  if (c.experiment != "exp2" && c.task == TaskKind::kMultitask) {
    bad("the multitask task belongs to exp2");
  }

  c.p = static_cast<int>(raw.get_int("p", c.p));
  if (c.p < 2) bad("p must be at least 2");
  if (c.task == TaskKind::kMultitask && c.p < 31) {
    bad("the multitask task needs p >= 31 so every operand label occurs");
  }
  c.train_frac = raw.get_double("train_frac", c.train_frac);
  if (!(c.train_frac > 0.0) || c.train_frac > 1.0) {
    bad("train_frac must lie in (0, 1]");
  }

  c.d_model = static_cast<int>(raw.get_int("d_model", c.d_model));
  c.n_heads = static_cast<int>(raw.get_int("n_heads", c.n_heads));
  c.d_mlp = static_cast<int>(raw.get_int("d_mlp", c.d_mlp));
  if (c.d_model < 1 || c.n_heads < 1 || c.d_mlp < 1) {
    bad("model dimensions must be positive");
  }
  if (c.d_model % c.n_heads != 0) bad("n_heads must divide d_model");

  c.lr = raw.get_double("lr", c.lr);
  c.weight_decay = raw.get_double("weight_decay", c.weight_decay);
  c.batch_size = static_cast<int>(raw.get_int("batch_size", c.batch_size));
  c.epochs = static_cast<int>(raw.get_int("epochs", c.epochs));
  c.early_stop = raw.get_bool("early_stop", c.early_stop);
  c.eval_interval = static_cast<int>(raw.get_int("eval_interval", c.eval_interval));
  c.checkpoint_interval =
      static_cast<int>(raw.get_int("checkpoint_interval", c.checkpoint_interval));
  if (!(c.lr > 0.0)) bad("lr must be positive");
  if (c.weight_decay < 0.0) bad("weight_decay must be non-negative");
  if (c.batch_size < 2) bad("batch_size must be at least 2");
  if (c.epochs < 1) bad("epochs must be at least 1");
  if (c.eval_interval < 1) bad("eval_interval must be at least 1");
  if (c.checkpoint_interval < 0) bad("checkpoint_interval must be non-negative");

  c.probe.epochs = static_cast<int>(raw.get_int("probe_epochs", c.probe.epochs));
  c.probe.lr = raw.get_double("probe_lr", c.probe.lr);
  c.probe.batch_size = static_cast<int>(raw.get_int("probe_batch", c.probe.batch_size));
  c.probe.lambda = raw.get_double("lambda", c.probe.lambda);
  c.probe.beta_max = raw.get_double("beta_max", c.probe.beta_max);
  if (c.probe.epochs < 1) bad("probe_epochs must be at least 1");
  if (!(c.probe.lr > 0.0)) bad("probe_lr must be positive");
  if (c.probe.batch_size < 2) bad("probe_batch must be at least 2");
  if (c.probe.lambda < 0.0) bad("lambda must be non-negative");
  if (!(c.probe.beta_max > 1.0)) bad("beta_max must exceed 1");

  c.baseline.epochs = static_cast<int>(raw.get_int("baseline_epochs", c.baseline.epochs));
  c.baseline.lr = raw.get_double("baseline_lr", c.baseline.lr);
  c.baseline.hidden = static_cast<int>(raw.get_int("baseline_hidden", c.baseline.hidden));
  c.baseline.contrastive_dim =
      static_cast<int>(raw.get_int("contrastive_dim", c.baseline.contrastive_dim));
  c.baseline.batch_size =
      static_cast<int>(raw.get_int("baseline_batch", c.baseline.batch_size));
  if (c.baseline.epochs < 1 || c.baseline.hidden < 1 ||
      c.baseline.contrastive_dim < 1 || c.baseline.batch_size < 2) {
    bad("baseline probe settings out of range");
  }
  if (!(c.baseline.lr > 0.0)) bad("baseline_lr must be positive");

  c.run_linear = raw.get_bool("run_linear", c.run_linear);
  c.run_nonlinear = raw.get_bool("run_nonlinear", c.run_nonlinear);
  c.run_contrastive = raw.get_bool("run_contrastive", c.run_contrastive);
  c.run_eraser = raw.get_bool("run_eraser", c.run_eraser);
  c.run_counterfactual = raw.get_bool("run_counterfactual", c.run_counterfactual);
  c.run_controls = raw.get_bool("run_controls", c.run_controls);
  c.n_controls = static_cast<int>(raw.get_int("n_controls", c.n_controls));
  c.counterfactual_samples =
      static_cast<int>(raw.get_int("counterfactual_samples", c.counterfactual_samples));
  if (c.n_controls < 1) bad("n_controls must be at least 1");
  if (c.counterfactual_samples < 1) bad("counterfactual_samples must be at least 1");

  c.sweep_stride = static_cast<int>(raw.get_int("sweep_stride", c.sweep_stride));
  c.transfer_epochs = static_cast<int>(raw.get_int("transfer_epochs", c.transfer_epochs));
  c.transfer_threshold = raw.get_double("transfer_threshold", c.transfer_threshold);
  if (c.sweep_stride < 1) bad("sweep_stride must be at least 1");
  if (c.transfer_epochs < 1) bad("transfer_epochs must be at least 1");
  if (!(c.transfer_threshold > 0.0) || c.transfer_threshold > 1.0) {
    bad("transfer_threshold must lie in (0, 1]");
  }

  c.seed = raw.get_u64("seed", 0);
  // The output directory is a location, not part of the experiment's
  // identity: artifacts stay loadable when a run is moved or re-pointed.
  Config hashable = raw;
  hashable.erase("out");
  c.config_hash = hashable.hash();

  std::vector<std::string> sites =
      raw.has("probe_sites") ? split_list(raw.get_str("probe_sites")) : def_sites;
  if (sites.empty()) bad("probe_sites must name at least one site");
  std::vector<Site> parsed_sites;
  for (const std::string& s : sites) parsed_sites.push_back(site_from_name(s));

  if (c.experiment == "exp2") {
    if (raw.has("variables")) {
      bad("exp2 probes a fixed variable set per task; drop the variables key");
    }
    for (Site site : parsed_sites) {
      c.jobs.push_back({site, "a_mod_p", 1, "shared"});
      c.jobs.push_back({site, "b_mod_p1", 1, "free"});
      c.jobs.push_back({site, "c_mod_p2", 1, "other"});
      c.jobs.push_back({site, "a_mod_p", 2, "shared"});
      c.jobs.push_back({site, "c_mod_p2", 2, "free"});
      c.jobs.push_back({site, "b_mod_p1", 2, "other"});
    }
  } else {
    std::vector<std::string> vars =
        raw.has("variables") ? split_list(raw.get_str("variables")) : def_vars;
    if (vars.empty()) bad("variables must name at least one variable");
    for (const std::string& v : vars) {
      if (!allowed_vars(c.task).count(v)) {
        bad("variable '" + v + "' is not defined for this task");
      }
    }
    for (Site site : parsed_sites) {
      for (const std::string& v : vars) c.jobs.push_back({site, v, 0, ""});
    }
  }
  return c;
}

Dataset ExperimentConfig::build_data() const {
  return build_dataset(task, p, derive_seed(seed, "data"));
}

SplitDataset ExperimentConfig::split(const Dataset& full) const {
  return split_dataset(full, train_frac, derive_seed(seed, "split"));
}

ModelConfig ExperimentConfig::model_config(const Dataset& data) const {
  ModelConfig mc;
  mc.vocab = data.vocab;
  mc.seq_len = data.seq_len;
  mc.d_model = d_model;
  mc.n_heads = n_heads;
  mc.d_mlp = d_mlp;
  mc.validate();
  return mc;
}

std::string circuit_artifact_name(const ProbeJob& job) {
  std::string name = std::string("circuit_") + site_name(job.site) + "_" + job.variable;
  if (job.task != 0) name += "_" + task_tag(job.task);
  return name + ".json";
}

void save_circuit(const std::string& path, const CircuitArtifact& art) {
  nlohmann::json j;
  j["site"] = site_name(art.job.site);
  j["variable"] = art.job.variable;
  j["task"] = art.job.task;
  j["role"] = art.job.role;
  j["lambda"] = art.lambda;
  j["seed"] = art.seed;
  j["l0"] = art.result.l0;
  j["final_loss"] = art.result.final_loss;
  j["degenerate_batches"] = art.result.degenerate_batches;
  j["knn_accuracy"] = art.knn_accuracy;
  j["scores"] = art.result.scores;
  j["mask"] = art.result.mask;
  std::ofstream out(path, std::ios::trunc);
  if (!out) bad("cannot write '" + path + "'");
  out << j.dump(1) << "\n";
  if (!out.flush()) bad("write failed for '" + path + "'");
}

CircuitArtifact load_circuit(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open circuit artifact '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    bad("malformed circuit artifact '" + path + "': " + e.what());
  }
  CircuitArtifact art;
  try {
    art.job.site = site_from_name(j.at("site").get<std::string>());
    art.job.variable = j.at("variable").get<std::string>();
    art.job.task = j.at("task").get<int>();
    art.job.role = j.at("role").get<std::string>();
    art.lambda = j.at("lambda").get<double>();
    art.seed = j.at("seed").get<std::uint64_t>();
    art.result.l0 = j.at("l0").get<int>();
    art.result.final_loss = j.at("final_loss").get<double>();
    art.result.degenerate_batches = j.at("degenerate_batches").get<int>();
    art.knn_accuracy = j.at("knn_accuracy").get<double>();
    art.result.scores = j.at("scores").get<std::vector<double>>();
    art.result.mask = j.at("mask").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    bad("incomplete circuit artifact '" + path + "': " + e.what());
  }
  if (art.result.mask.size() != art.result.scores.size()) {
    bad("circuit artifact '" + path + "' has inconsistent mask and scores");
  }
  return art;
}

TrainOutcome train_model(Transformer& model, AdamW& opt,
                         const ExperimentConfig& cfg, const Dataset& train,
                         const Dataset& test, const std::string& out_dir,
                         int start_epoch) {
  if (train.n < 1) bad("empty training split");
  if (start_epoch < 0 || start_epoch >= cfg.epochs) {
    bad("start epoch " + std::to_string(start_epoch) + " leaves nothing to train");
  }
  TrainOutcome out;
  out.epochs_run = start_epoch;
  std::vector<int> order(train.n);
  std::iota(order.begin(), order.end(), 0);
  const int T = train.seq_len;

  auto measure = [&](int epoch) {
    const double tr = evaluate_accuracy(model, train);
    const double te = evaluate_accuracy(model, test);
    out.curve.push_back({epoch, "train_accuracy", "", tr});
    out.curve.push_back({epoch, "test_accuracy", "", te});
    out.train_accuracy = tr;
    out.test_accuracy = te;
    log_line("[train] epoch " + std::to_string(epoch) + "/" +
             std::to_string(cfg.epochs) + " train_acc=" + format_double(tr) +
             " test_acc=" + format_double(te));
    return te;
  };

  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    // The permutation must depend only on (seed, epoch), never on shuffle
    // history, so a resumed run replays the exact batches of an
    // uninterrupted one.
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, "train_shuffle", epoch));
    shuffle_rng.shuffle(order);
    for (int begin = 0; begin < train.n; begin += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, train.n - begin);
      std::vector<int> tokens(static_cast<std::size_t>(bsz) * T);
      std::vector<int> labels(bsz);
      for (int i = 0; i < bsz; ++i) {
        const int idx = order[begin + i];
        std::copy_n(train.tokens.begin() + static_cast<std::size_t>(idx) * T, T,
                    tokens.begin() + static_cast<std::size_t>(i) * T);
        labels[i] = train.targets[idx];
      }
      opt.zero_grad();
      Tape tape;
      ModelActs acts = forward(model, tape, tokens, bsz);
      Tensor loss = ops::cross_entropy(acts.logits, labels);
      if (!std::isfinite(loss.scalar())) {
        throw NumericalError("training loss became non-finite at epoch " +
                             std::to_string(epoch));
      }
      tape.backward(loss);
      opt.step();
    }
    out.epochs_run = epoch;

    const bool last = epoch == cfg.epochs;
    if (epoch % cfg.eval_interval == 0 || last) {
      const double te = measure(epoch);
      if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0 &&
          !last) {
        save_checkpoint(join_path(out_dir, "ckpt_" + std::to_string(epoch)), model,
                        epoch, cfg.config_hash);
        out.checkpoint_epochs.push_back(epoch);
      }
      if (cfg.early_stop && te >= cfg.stop_threshold) break;
    } else if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0) {
      save_checkpoint(join_path(out_dir, "ckpt_" + std::to_string(epoch)), model,
                      epoch, cfg.config_hash);
      out.checkpoint_epochs.push_back(epoch);
    }
  }
  if (out.curve.empty() || out.curve.back().epoch != out.epochs_run) {
    measure(out.epochs_run);
  }
  return out;
}

namespace {

Transformer load_trained(const ExperimentConfig& cfg, const Dataset& full,
                         const std::string& out_dir) {
  Transformer model(cfg.model_config(full));
  load_checkpoint(join_path(out_dir, "model"), model, nullptr, &cfg.config_hash);
  return model;
}

RunRow base_row(const ExperimentConfig& cfg, const std::string& stage) {
  RunRow r;
  r.experiment = cfg.experiment;
  r.stage = stage;
  r.seed = cfg.seed;
  return r;
}

}  // namespace

void stage_train(const ExperimentConfig& cfg, const std::string& out_dir,
                 const std::string& resume) {
  fs::create_directories(out_dir);
  Dataset full = cfg.build_data();
  SplitDataset sp = cfg.split(full);
  Transformer model(cfg.model_config(full));
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(model.params(), ocfg);
  int start_epoch = 0;
  if (resume.empty()) {
    model.init(derive_seed(cfg.seed, "model_init"));
  } else {
    CheckpointInfo info = load_checkpoint(resume, model, &opt, &cfg.config_hash);
    start_epoch = static_cast<int>(info.epoch);
    log_line("[train] resuming from '" + resume + "' at epoch " +
             std::to_string(start_epoch));
  }

  TrainOutcome out = train_model(model, opt, cfg, sp.train, sp.test, out_dir,
                                 start_epoch);
  save_checkpoint(join_path(out_dir, "model"), model, out.epochs_run,
                  cfg.config_hash, &opt);

  std::vector<RunRow> rows;
  RunRow r = base_row(cfg, "train");
  r.method = "final_train_accuracy";
  r.epoch = out.epochs_run;
  r.accuracy = out.train_accuracy;
  rows.push_back(r);
  r = base_row(cfg, "train");
  r.method = "final_test_accuracy";
  r.epoch = out.epochs_run;
  r.accuracy = out.test_accuracy;
  rows.push_back(r);
  r = base_row(cfg, "train");
  r.method = "epochs_run";
  r.epoch = out.epochs_run;
  r.value = out.epochs_run;
  rows.push_back(r);
  write_runs_csv(join_path(out_dir, "runs_train.csv"), rows);
  write_curves_csv(join_path(out_dir, "curves_train.csv"), out.curve);
}

void stage_probe(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Dataset full = cfg.build_data();
  SplitDataset sp = cfg.split(full);
  Transformer model = load_trained(cfg, full, out_dir);

  std::vector<RunRow> rows;
  for (std::size_t ji = 0; ji < cfg.jobs.size(); ++ji) {
    const ProbeJob& job = cfg.jobs[ji];
    Dataset tr = job.task != 0 ? filter_task(sp.train, job.task) : sp.train;
    Dataset te = job.task != 0 ? filter_task(sp.test, job.task) : sp.test;
    std::vector<int> ltr = variable_labels(tr, job.variable);
    std::vector<int> lte = variable_labels(te, job.variable);

    CircuitProbeConfig pc = cfg.probe;
    pc.seed = derive_seed(cfg.seed, "circuit", ji);
    log_line(std::string("[probe] ") + site_name(job.site) + " " + job.variable +
             (job.task != 0 ? " " + task_tag(job.task) : ""));
    CircuitProbeResult res = train_circuit_probe(model, job.site, tr, ltr, pc);
    KnnResult knn = knn_evaluate(model, job.site, res.mask, tr, ltr, te, lte,
                                 derive_seed(cfg.seed, "knn", ji));

    CircuitArtifact art;
    art.job = job;
    art.result = res;
    art.knn_accuracy = knn.accuracy;
    art.seed = pc.seed;
    art.lambda = pc.lambda;
    save_circuit(join_path(out_dir, circuit_artifact_name(job)), art);

    const int msize = mask_size(model.cfg, job.site);
    RunRow r = base_row(cfg, "circuit");
    r.site = site_name(job.site);
    r.variable = job.variable;
    r.train_task = task_tag(job.task);
    r.method = "circuit_probe";
    r.lambda = pc.lambda;
    r.sparsity = msize > 0 ? static_cast<double>(res.l0) / msize : 0.0;
    r.accuracy = knn.accuracy;
    r.value = res.l0;
    rows.push_back(r);

    RunRow l = base_row(cfg, "circuit");
    l.site = r.site;
    l.variable = r.variable;
    l.train_task = r.train_task;
    l.method = "clustering_loss";
    l.lambda = pc.lambda;
    l.value = res.final_loss;
    rows.push_back(l);
    log_line("[probe]   l0=" + std::to_string(res.l0) + "/" + std::to_string(msize) +
             " knn=" + format_double(knn.accuracy) +
             " loss=" + format_double(res.final_loss));
  }
  write_runs_csv(join_path(out_dir, "runs_probe.csv"), rows);
}

namespace {

// Span of the site mask a scope restricts to: the whole mask when empty,
// otherwise the named transform's columns.
std::pair<int, int> scope_span(const ModelConfig& cfg, Site site,
                               const std::string& scope, int msize) {
  if (scope.empty()) return {0, msize};
  for (const TensorSlice& ts : site_tensors(cfg, site)) {
    if (ts.name == scope) return {ts.begin, ts.end};
  }
  bad("unknown scope '" + scope + "'");
}

// Random size-matched disjoint ablations for one circuit, evaluated on each
// named dataset. Emits per-draw rows plus a mean row; emits a skip row when
// the complement within the scope cannot fit a disjoint control.
void control_rows(const ExperimentConfig& cfg, const Transformer& model,
                  const ProbeJob& job, const std::vector<double>& mask,
                  const std::string& scope,
                  const std::vector<std::pair<std::string, const Dataset*>>& evals,
                  std::uint64_t ctrl_seed, std::vector<RunRow>& rows) {
  const int msize = static_cast<int>(mask.size());
  auto [begin, end] = scope_span(model.cfg, job.site, scope, msize);
  std::vector<double> segment(mask.begin() + begin, mask.begin() + end);
  int in_circuit = 0;
  for (double m : segment) in_circuit += m == 1.0 ? 1 : 0;

  RunRow base = base_row(cfg, "control");
  base.site = site_name(job.site);
  base.scope = scope;
  base.variable = job.variable;
  base.train_task = task_tag(job.task);

  if (in_circuit == 0) {
    RunRow r = base;
    r.method = "random_ablation_empty";
    rows.push_back(r);
    return;
  }
  const int complement = static_cast<int>(segment.size()) - in_circuit;
  if (complement < in_circuit) {
    RunRow r = base;
    r.method = "random_ablation_infeasible";
    r.value = complement;
    r.sparsity = static_cast<double>(in_circuit) / segment.size();
    rows.push_back(r);
    log_line("[ablate] control infeasible for " + job.variable + " at " +
             std::string(site_name(job.site)) + ": circuit " +
             std::to_string(in_circuit) + " > complement " +
             std::to_string(complement));
    return;
  }

  std::vector<std::vector<double>> controls =
      random_control(segment, cfg.n_controls, ctrl_seed);
  std::vector<double> mean_acc(evals.size(), 0.0);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    std::vector<double> whole(msize, 0.0);
    std::copy(controls[k].begin(), controls[k].end(), whole.begin() + begin);
    AblationSpec spec{job.site, whole, scope};
    Transformer ablated = ablate(model, spec);
    for (std::size_t e = 0; e < evals.size(); ++e) {
      const double acc = evaluate_accuracy(ablated, *evals[e].second);
      mean_acc[e] += acc;
      RunRow r = base;
      r.method = "random_ablation";
      r.eval_task = evals[e].first;
      r.value = static_cast<double>(k);
      r.accuracy = acc;
      rows.push_back(r);
    }
  }
  for (std::size_t e = 0; e < evals.size(); ++e) {
    RunRow r = base;
    r.method = "random_ablation_mean";
    r.eval_task = evals[e].first;
    r.accuracy = mean_acc[e] / controls.size();
    rows.push_back(r);
  }
}

void ablate_simple(const ExperimentConfig& cfg, const std::string& out_dir,
                   const Transformer& model, const SplitDataset& sp,
                   std::vector<RunRow>& rows) {
  Transformer scratch = model;  // evaluate_accuracy takes a mutable model
  const double base_acc = evaluate_accuracy(scratch, sp.test);
  RunRow u = base_row(cfg, "ablation");
  u.method = "unablated";
  u.accuracy = base_acc;
  rows.push_back(u);

  for (std::size_t ji = 0; ji < cfg.jobs.size(); ++ji) {
    const ProbeJob& job = cfg.jobs[ji];
    CircuitArtifact art =
        load_circuit(join_path(out_dir, circuit_artifact_name(job)));
    const int msize = mask_size(model.cfg, job.site);
    if (static_cast<int>(art.result.mask.size()) != msize) {
      bad("circuit artifact for '" + job.variable + "' does not fit the site");
    }
    AblationSpec spec{job.site, art.result.mask, ""};
    bool warned = false;
    Transformer ablated = ablate(model, spec, &warned);
    const double acc = evaluate_accuracy(ablated, sp.test);

    RunRow r = base_row(cfg, "ablation");
    r.site = site_name(job.site);
    r.variable = job.variable;
    r.method = "circuit_ablation";
    r.sparsity = msize > 0 ? static_cast<double>(art.result.l0) / msize : 0.0;
    r.accuracy = acc;
    r.value = art.result.l0;
    rows.push_back(r);
    log_line(std::string("[ablate] ") + site_name(job.site) + " " + job.variable +
             " l0=" + std::to_string(art.result.l0) + " acc=" + format_double(acc));

    if (cfg.run_controls) {
      control_rows(cfg, model, job, art.result.mask, "", {{"", &sp.test}},
                   derive_seed(cfg.seed, "controls", ji), rows);
    }
  }
}

void ablate_multitask(const ExperimentConfig& cfg, const std::string& out_dir,
                      const Transformer& model, const SplitDataset& sp,
                      std::vector<RunRow>& rows) {
  Dataset t1 = filter_task(sp.test, 1);
  Dataset t2 = filter_task(sp.test, 2);
  Transformer scratch = model;
  const std::vector<std::pair<std::string, const Dataset*>> evals = {
      {"task1", &t1}, {"task2", &t2}};
  for (const auto& [tag, ds] : evals) {
    RunRow u = base_row(cfg, "ablation");
    u.method = "unablated";
    u.eval_task = tag;
    u.accuracy = evaluate_accuracy(scratch, *ds);
    rows.push_back(u);
  }

  std::set<Site> sites;
  for (const ProbeJob& job : cfg.jobs) sites.insert(job.site);
  for (Site site : sites) {
    std::vector<CircuitArtifact> arts;
    std::vector<std::size_t> art_jobs;
    for (std::size_t ji = 0; ji < cfg.jobs.size(); ++ji) {
      if (cfg.jobs[ji].site != site) continue;
      arts.push_back(
          load_circuit(join_path(out_dir, circuit_artifact_name(cfg.jobs[ji]))));
      art_jobs.push_back(ji);
    }

    // Overlap morphology of the two free circuits decides the ablation scope.
    const CircuitArtifact* free1 = nullptr;
    const CircuitArtifact* free2 = nullptr;
    for (const CircuitArtifact& a : arts) {
      if (a.job.role == "free" && a.job.task == 1) free1 = &a;
      if (a.job.role == "free" && a.job.task == 2) free2 = &a;
    }
    if (!free1 || !free2) bad("multitask run is missing a free-variable circuit");
    OverlapReport ov =
        overlap(model.cfg, site, free1->result.mask, free2->result.mask);
    const std::string pair_tag =
        free1->job.variable + "+" + free2->job.variable;
    for (const TensorOverlap& to : ov.tensors) {
      RunRow r = base_row(cfg, "overlap");
      r.site = site_name(site);
      r.scope = to.tensor;
      r.variable = pair_tag;
      r.method = "jaccard";
      r.value = to.jaccard;
      rows.push_back(r);
    }
    {
      RunRow r = base_row(cfg, "overlap");
      r.site = site_name(site);
      r.scope = ov.min_jaccard_tensor;
      r.variable = pair_tag;
      r.method = "min_jaccard_tensor";
      rows.push_back(r);
    }
    for (std::size_t h = 0; h < ov.head_frac_a.size(); ++h) {
      RunRow r = base_row(cfg, "overlap");
      r.site = site_name(site);
      r.scope = "head" + std::to_string(h);
      r.variable = free1->job.variable;
      r.method = "head_fraction_task1_free";
      r.value = ov.head_frac_a[h];
      rows.push_back(r);
      r.variable = free2->job.variable;
      r.method = "head_fraction_task2_free";
      r.value = ov.head_frac_b[h];
      rows.push_back(r);
    }

    // Targeted ablation table over the shared and free circuits.
    std::vector<CircuitEntry> entries;
    std::vector<const CircuitArtifact*> entry_arts;
    for (const CircuitArtifact& a : arts) {
      if (a.job.role != "shared" && a.job.role != "free") continue;
      entries.push_back(
          {a.job.task, a.job.variable, a.job.role == "shared", a.result.mask});
      entry_arts.push_back(&a);
    }
    std::vector<ModularityRow> table =
        modularity_eval(model, site, entries, t1, t2);
    for (const ModularityRow& mr : table) {
      for (int which = 1; which <= 2; ++which) {
        RunRow r = base_row(cfg, "ablation");
        r.site = site_name(site);
        r.scope = mr.scope;
        r.variable = mr.variable;
        r.method = "targeted_ablation";
        r.train_task = task_tag(mr.task);
        r.eval_task = task_tag(which);
        r.accuracy = which == 1 ? mr.acc_task1 : mr.acc_task2;
        rows.push_back(r);
        log_line("[ablate] targeted " + mr.variable + " (" + task_tag(mr.task) +
                 (mr.scope.empty() ? "" : ", " + mr.scope) + ") on " +
                 task_tag(which) + ": " + format_double(r.accuracy));
      }
    }

    // The "other" variable circuits ablate plainly on their own task.
    for (std::size_t ai = 0; ai < arts.size(); ++ai) {
      const CircuitArtifact& a = arts[ai];
      if (a.job.role != "other") continue;
      AblationSpec spec{site, a.result.mask, ""};
      Transformer ablated = ablate(model, spec);
      const Dataset& own = a.job.task == 1 ? t1 : t2;
      RunRow r = base_row(cfg, "ablation");
      r.site = site_name(site);
      r.variable = a.job.variable;
      r.method = "circuit_ablation";
      r.train_task = task_tag(a.job.task);
      r.eval_task = task_tag(a.job.task);
      r.accuracy = evaluate_accuracy(ablated, own);
      r.value = a.result.l0;
      rows.push_back(r);
    }

    if (cfg.run_controls) {
      for (std::size_t ei = 0; ei < entries.size(); ++ei) {
        const std::string scope =
            entries[ei].shared ? std::string() : ov.min_jaccard_tensor;
        control_rows(cfg, model, entry_arts[ei]->job, entries[ei].mask, scope,
                     evals, derive_seed(cfg.seed, "controls", art_jobs[ei]),
                     rows);
      }
    }
  }
}

}  // namespace

void stage_ablate(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Dataset full = cfg.build_data();
  SplitDataset sp = cfg.split(full);
  Transformer model = load_trained(cfg, full, out_dir);

  std::vector<RunRow> rows;
  if (cfg.task == TaskKind::kMultitask) {
    ablate_multitask(cfg, out_dir, model, sp, rows);
  } else {
    ablate_simple(cfg, out_dir, model, sp, rows);
  }
  write_runs_csv(join_path(out_dir, "runs_ablate.csv"), rows);
}

namespace {

// Largest absolute entry of the centered cross-covariance between rows and
// one-hot labels; the eraser's post-fit guarantee drives this to ~0.
double cross_cov_max(const std::vector<double>& reps,
                     const std::vector<int>& labels, int n, int d) {
  int classes = 0;
  for (int y : labels) classes = std::max(classes, y + 1);
  std::vector<double> xbar(d, 0.0);
  std::vector<double> ybar(classes, 0.0);
  std::vector<double> sums(static_cast<std::size_t>(d) * classes, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = reps.data() + static_cast<std::size_t>(i) * d;
    const int y = labels[i];
    ybar[y] += 1.0;
    for (int j = 0; j < d; ++j) {
      xbar[j] += row[j];
      sums[static_cast<std::size_t>(j) * classes + y] += row[j];
    }
  }
  double worst = 0.0;
  for (int j = 0; j < d; ++j) {
    for (int k = 0; k < classes; ++k) {
      const double cov =
          sums[static_cast<std::size_t>(j) * classes + k] / n -
          (xbar[j] / n) * (ybar[k] / n);
      worst = std::max(worst, std::abs(cov));
    }
  }
  return worst;
}

Site rep_site(ProbeRep rep) {
  switch (rep) {
    case ProbeRep::kResidualPostAttn:
    case ProbeRep::kAttnUpdate:
      return Site::kAttention;
    case ProbeRep::kResidualPostMlp:
    case ProbeRep::kMlpUpdate:
      return Site::kMlp;
  }
  bad("unknown representation");
}

int predict_from_residual(Transformer& model, Site site,
                          const std::vector<double>& rep) {
  Tape tape;
  Tensor x = tape.constant(1, model.cfg.d_model, rep.data());
  Tensor logits = resume_from(model, tape, site, x);
  return argmax_rows(logits.data(), 1, logits.cols())[0];
}

// The answer the task would produce had the probed variable taken `target`
// with everything else held fixed.
int counterfactual_answer(TaskKind task, const std::string& var, int a, int b,
                          int c, int subtask, int target, int p) {
  auto mod = [](long x, int m) {
    long r = x % m;
    return static_cast<int>(r < 0 ? r + m : r);
  };
  switch (task) {
    case TaskKind::kA2MinusB2:
      if (var == "a_sq") return mod(static_cast<long>(target) - static_cast<long>(b) * b, p);
      if (var == "neg_b_sq") return mod(static_cast<long>(a) * a + target, p);
      if (var == "a_plus_b") return mod(static_cast<long>(target) * (a - b), p);
      if (var == "a_minus_b") return mod(static_cast<long>(a + b) * target, p);
      break;
    case TaskKind::kA2PlusB:
      if (var == "a_sq") return mod(static_cast<long>(target) + b, p);
      break;
    case TaskKind::kMultitask:
      if (var == "a_mod_p") {
        return subtask == 1 ? mod(target + b % 31, 29) : mod(target + c % 23, 29);
      }
      if (var == "b_mod_p1" && subtask == 1) return mod(a % 29 + target, 29);
      if (var == "c_mod_p2" && subtask == 2) return mod(a % 29 + target, 29);
      break;
    default:
      break;
  }
  bad("no counterfactual rule for variable '" + var + "'");
}

void counterfactual_rows(const ExperimentConfig& cfg, Transformer& model,
                         ProbeModel& probe, ProbeKind kind, ProbeRep rep,
                         const std::string& var, const Dataset& te,
                         const std::vector<double>& te_reps,
                         const std::vector<int>& lte, std::uint64_t tag,
                         std::vector<RunRow>& rows) {
  const int d = model.cfg.d_model;
  std::vector<int> values(lte.begin(), lte.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() < 2) return;

  const int n_samples = std::min(cfg.counterfactual_samples, te.n);
  Rng rng(derive_seed(cfg.seed, "cf_sample", tag));
  std::vector<int> picks = rng.sample_without_replacement(te.n, n_samples);

  int success = 0;
  int behavioral = 0;
  for (int i : picks) {
    const int cur = lte[i];
    int target = cur;
    do {
      target = values[rng.below(values.size())];
    } while (target == cur);
    std::vector<double> row(te_reps.begin() + static_cast<std::size_t>(i) * d,
                            te_reps.begin() + static_cast<std::size_t>(i + 1) * d);
    CounterfactualResult cf = counterfactual_embedding(probe, row, target);
    if (!cf.success) continue;
    ++success;
    const int pred = predict_from_residual(model, rep_site(rep), cf.rep);
    const int want = counterfactual_answer(cfg.task, var, te.a[i], te.b[i],
                                           te.c[i], te.task[i], target, cfg.p);
    if (pred == want) ++behavioral;
  }

  RunRow r = base_row(cfg, "counterfactual");
  r.site = probe_rep_name(rep);
  r.variable = var;
  r.method = std::string(probe_kind_name(kind)) + "_ce_success";
  r.accuracy = static_cast<double>(success) / n_samples;
  r.value = n_samples;
  rows.push_back(r);
  r.method = std::string(probe_kind_name(kind)) + "_ce_behavioral";
  r.accuracy = static_cast<double>(behavioral) / n_samples;
  rows.push_back(r);
  log_line("[baseline] counterfactual " + var + " (" + probe_kind_name(kind) +
           "): probe " + format_double(static_cast<double>(success) / n_samples) +
           " behavior " + format_double(static_cast<double>(behavioral) / n_samples));
}

}  // namespace

void stage_baseline(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Dataset full = cfg.build_data();
  SplitDataset sp = cfg.split(full);
  Transformer model = load_trained(cfg, full, out_dir);
  const int d = cfg.d_model;

  std::vector<RunRow> rows;
  std::vector<int> groups = cfg.task == TaskKind::kMultitask
                                ? std::vector<int>{1, 2}
                                : std::vector<int>{0};
  std::vector<ProbeRep> reps = {ProbeRep::kResidualPostAttn};
  if (cfg.experiment == "exp1") reps.push_back(ProbeRep::kResidualPostMlp);

  std::vector<ProbeKind> kinds;
  if (cfg.run_linear) kinds.push_back(ProbeKind::kLinear);
  if (cfg.run_nonlinear) kinds.push_back(ProbeKind::kNonlinear);
  if (cfg.run_contrastive) kinds.push_back(ProbeKind::kContrastive);

  std::uint64_t counter = 0;
  for (int g : groups) {
    Dataset tr = g != 0 ? filter_task(sp.train, g) : sp.train;
    Dataset te = g != 0 ? filter_task(sp.test, g) : sp.test;
    std::vector<std::string> vars;
    for (const ProbeJob& job : cfg.jobs) {
      if ((g == 0) != (job.task == 0)) continue;
      if (g != 0 && job.task != g) continue;
      if (std::find(vars.begin(), vars.end(), job.variable) == vars.end()) {
        vars.push_back(job.variable);
      }
    }

    for (ProbeRep rep : reps) {
      std::vector<double> tr_reps =
          collect_representations(model, rep, tr.tokens, tr.n);
      std::vector<double> te_reps =
          collect_representations(model, rep, te.tokens, te.n);

      {
        RunRow r = base_row(cfg, "amnesic");
        r.site = probe_rep_name(rep);
        r.method = "identity_patch";
        r.eval_task = task_tag(g);
        r.accuracy = patched_accuracy(model, rep, te_reps, te);
        rows.push_back(r);
      }

      for (const std::string& var : vars) {
        std::vector<int> ltr = variable_labels(tr, var);
        std::vector<int> lte = variable_labels(te, var);
        std::vector<std::pair<ProbeKind, ProbeResult>> trained;
        for (ProbeKind kind : kinds) {
          ProbeConfig bc = cfg.baseline;
          bc.seed = derive_seed(cfg.seed, "baseline", counter++);
          log_line(std::string("[baseline] ") + probe_kind_name(kind) + " " +
                   probe_rep_name(rep) + " " + var +
                   (g != 0 ? " " + task_tag(g) : ""));
          ProbeResult res = train_probe(kind, tr_reps, ltr, te_reps, lte, d, bc);
          RunRow r = base_row(cfg, "baseline");
          r.site = probe_rep_name(rep);
          r.variable = var;
          r.method = probe_kind_name(kind);
          r.train_task = task_tag(g);
          r.accuracy = res.accuracy;
          rows.push_back(r);
          trained.emplace_back(kind, std::move(res));
        }

        if (cfg.run_eraser) {
          AffineEraser eraser = fit_eraser(te_reps, lte, d);
          std::vector<double> erased = eraser.apply(te_reps, te.n);
          RunRow er = base_row(cfg, "eraser");
          er.site = probe_rep_name(rep);
          er.variable = var;
          er.train_task = task_tag(g);
          er.method = "cross_cov_max";
          er.value = cross_cov_max(erased, lte, te.n, d);
          rows.push_back(er);

          RunRow ar = base_row(cfg, "amnesic");
          ar.site = probe_rep_name(rep);
          ar.variable = var;
          ar.method = "linear_eraser";
          ar.eval_task = task_tag(g);
          ar.accuracy = patched_accuracy(model, rep, erased, te);
          rows.push_back(ar);
          log_line("[baseline] amnesic " + var + " at " + probe_rep_name(rep) +
                   ": " + format_double(ar.accuracy));
        }

        if (cfg.run_counterfactual && rep == ProbeRep::kResidualPostAttn) {
          for (auto& [kind, res] : trained) {
            if (kind == ProbeKind::kContrastive) continue;
            counterfactual_rows(cfg, model, res.model, kind, rep, var, te,
                                te_reps, lte, counter++, rows);
          }
        }
      }
    }
  }
  write_runs_csv(join_path(out_dir, "runs_baseline.csv"), rows);
}

void stage_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.task == TaskKind::kMultitask) {
    bad("the checkpoint sweep supports the single-task experiments");
  }
  fs::create_directories(out_dir);
  Dataset full = cfg.build_data();
  SplitDataset sp = cfg.split(full);
  Transformer model(cfg.model_config(full));
  const int d = cfg.d_model;

  std::vector<std::pair<long, std::string>> points;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".manifest";
    if (name.rfind("ckpt_", 0) != 0 || name.size() <= suffix.size() ||
        name.substr(name.size() - suffix.size()) != suffix) {
      continue;
    }
    const std::string mid = name.substr(5, name.size() - 5 - suffix.size());
    try {
      const long ep = std::stol(mid);
      points.emplace_back(ep, join_path(out_dir, "ckpt_" + mid));
    } catch (const std::exception&) {
      continue;
    }
  }
  std::sort(points.begin(), points.end());
  std::vector<std::pair<long, std::string>> selected;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (static_cast<int>(i) % cfg.sweep_stride == 0) selected.push_back(points[i]);
  }
  const CheckpointInfo final_info = peek_checkpoint(join_path(out_dir, "model"));
  if (selected.empty() || selected.back().first < final_info.epoch) {
    selected.emplace_back(final_info.epoch, join_path(out_dir, "model"));
  }

  std::vector<std::vector<int>> ltr(cfg.jobs.size());
  std::vector<std::vector<int>> lte(cfg.jobs.size());
  for (std::size_t ji = 0; ji < cfg.jobs.size(); ++ji) {
    ltr[ji] = variable_labels(sp.train, cfg.jobs[ji].variable);
    lte[ji] = variable_labels(sp.test, cfg.jobs[ji].variable);
  }

  std::vector<RunRow> rows;
  std::vector<CurveRow> curves;
  for (const auto& [ep, base] : selected) {
    load_checkpoint(base, model, nullptr, &cfg.config_hash);
    const double tr_acc = evaluate_accuracy(model, sp.train);
    const double te_acc = evaluate_accuracy(model, sp.test);
    curves.push_back({ep, "train_accuracy", "", tr_acc});
    curves.push_back({ep, "test_accuracy", "", te_acc});
    for (const char* m : {"train_accuracy", "test_accuracy"}) {
      RunRow r = base_row(cfg, "sweep");
      r.method = m;
      r.epoch = ep;
      r.accuracy = m == std::string("train_accuracy") ? tr_acc : te_acc;
      rows.push_back(r);
    }
    log_line("[sweep] epoch " + std::to_string(ep) + " train=" +
             format_double(tr_acc) + " test=" + format_double(te_acc));

    for (std::size_t ji = 0; ji < cfg.jobs.size(); ++ji) {
      const ProbeJob& job = cfg.jobs[ji];
      CircuitProbeConfig pc = cfg.probe;
      pc.seed = derive_seed(cfg.seed, "sweep_circuit",
                            static_cast<std::uint64_t>(ep) * 64 + ji);
      CircuitProbeResult res =
          train_circuit_probe(model, job.site, sp.train, ltr[ji], pc);
      KnnResult knn = knn_evaluate(
          model, job.site, res.mask, sp.train, ltr[ji], sp.test, lte[ji],
          derive_seed(cfg.seed, "sweep_knn",
                      static_cast<std::uint64_t>(ep) * 64 + ji));
      const int msize = mask_size(model.cfg, job.site);
      RunRow r = base_row(cfg, "sweep");
      r.site = site_name(job.site);
      r.variable = job.variable;
      r.method = "circuit_probe";
      r.epoch = ep;
      r.lambda = pc.lambda;
      r.sparsity = msize > 0 ? static_cast<double>(res.l0) / msize : 0.0;
      r.accuracy = knn.accuracy;
      r.value = res.l0;
      rows.push_back(r);
      curves.push_back({ep, "circuit", job.variable, knn.accuracy});
      log_line("[sweep]   circuit " + job.variable + " knn=" +
               format_double(knn.accuracy) + " l0=" + std::to_string(res.l0));
    }

    if (cfg.run_linear || cfg.run_nonlinear) {
      std::vector<double> tr_reps = collect_representations(
          model, ProbeRep::kResidualPostAttn, sp.train.tokens, sp.train.n);
      std::vector<double> te_reps = collect_representations(
          model, ProbeRep::kResidualPostAttn, sp.test.tokens, sp.test.n);
      std::vector<ProbeKind> kinds;
      if (cfg.run_linear) kinds.push_back(ProbeKind::kLinear);
      if (cfg.run_nonlinear) kinds.push_back(ProbeKind::kNonlinear);
      for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        for (std::size_t ji = 0; ji < cfg.jobs.size(); ++ji) {
          ProbeConfig bc = cfg.baseline;
          bc.seed = derive_seed(cfg.seed, "sweep_baseline",
                                static_cast<std::uint64_t>(ep) * 64 + ki * 16 + ji);
          ProbeResult res = train_probe(kinds[ki], tr_reps, ltr[ji], te_reps,
                                        lte[ji], d, bc);
          RunRow r = base_row(cfg, "sweep");
          r.site = probe_rep_name(ProbeRep::kResidualPostAttn);
          r.variable = cfg.jobs[ji].variable;
          r.method = probe_kind_name(kinds[ki]);
          r.epoch = ep;
          r.accuracy = res.accuracy;
          rows.push_back(r);
          curves.push_back(
              {ep, probe_kind_name(kinds[ki]), cfg.jobs[ji].variable, res.accuracy});
        }
      }
    }
  }
  write_runs_csv(join_path(out_dir, "runs_sweep.csv"), rows);
  write_curves_csv(join_path(out_dir, "curves_sweep.csv"), curves);
}

void stage_transfer(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Dataset full = cfg.build_data();
  Transformer pretrained = load_trained(cfg, full, out_dir);

  const TaskKind targets[] = {TaskKind::kTransferA2, TaskKind::kTransferAPlusB};
  std::vector<RunRow> rows;
  std::vector<CurveRow> curves;
  for (std::size_t ti = 0; ti < 2; ++ti) {
    const TaskKind target = targets[ti];
    Dataset tfull =
        build_dataset(target, cfg.p, derive_seed(cfg.seed, "transfer_data", ti));
    SplitDataset tsp =
        split_dataset(tfull, 0.6, derive_seed(cfg.seed, "transfer_split", ti));

    for (int init = 0; init < 2; ++init) {
      ExperimentConfig tcfg = cfg;
      tcfg.task = target;
      tcfg.epochs = cfg.transfer_epochs;
      tcfg.early_stop = true;
      tcfg.stop_threshold = cfg.transfer_threshold;
      tcfg.eval_interval = 1;
      tcfg.checkpoint_interval = 0;
      tcfg.seed = derive_seed(cfg.seed, "transfer_run", ti * 2 + init);

      ModelConfig mc = tcfg.model_config(tfull);
      if (mc.vocab != pretrained.cfg.vocab || mc.seq_len != pretrained.cfg.seq_len) {
        bad("transfer task shape differs from the pretrained model");
      }
      Transformer m = init == 0 ? pretrained : Transformer(mc);
      if (init == 1) m.init(derive_seed(cfg.seed, "transfer_fresh", ti));
      AdamWConfig ocfg;
      ocfg.lr = cfg.lr;
      ocfg.weight_decay = cfg.weight_decay;
      AdamW opt(m.params(), ocfg);

      const char* tag = init == 0 ? "pretrained" : "fresh";
      log_line(std::string("[transfer] ") + task_name(target) + " " + tag);
      TrainOutcome res = train_model(m, opt, tcfg, tsp.train, tsp.test, out_dir);

      long reached = -1;
      for (const CurveRow& c : res.curve) {
        if (c.method != "test_accuracy") continue;
        curves.push_back({c.epoch, std::string("transfer_") + tag,
                          task_name(target), c.accuracy});
        if (reached < 0 && c.accuracy >= cfg.transfer_threshold) reached = c.epoch;
      }

      RunRow r = base_row(cfg, "transfer");
      r.variable = task_name(target);
      r.method = tag;
      r.epoch = res.epochs_run;
      r.accuracy = res.test_accuracy;
      if (reached >= 0) r.value = reached;
      rows.push_back(r);
      log_line(std::string("[transfer]   reached ") +
               format_double(cfg.transfer_threshold) + " at epoch " +
               (reached >= 0 ? std::to_string(reached) : std::string("never")));
    }
  }
  write_runs_csv(join_path(out_dir, "runs_transfer.csv"), rows);
  write_curves_csv(join_path(out_dir, "curves_transfer.csv"), curves);
}

void stage_report(const ExperimentConfig& cfg, const std::string& out_dir) {
  static const char* run_files[] = {"runs_train.csv",    "runs_sweep.csv",
                                    "runs_probe.csv",    "runs_ablate.csv",
                                    "runs_baseline.csv", "runs_transfer.csv"};
  static const char* curve_files[] = {"curves_train.csv", "curves_sweep.csv",
                                      "curves_transfer.csv"};
  std::vector<RunRow> rows;
  for (const char* f : run_files) {
    const std::string path = join_path(out_dir, f);
    if (!fs::exists(path)) continue;
    std::vector<RunRow> part = read_runs_csv(path);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::vector<CurveRow> curves;
  for (const char* f : curve_files) {
    const std::string path = join_path(out_dir, f);
    if (!fs::exists(path)) continue;
    std::vector<CurveRow> part = read_curves_csv(path);
    curves.insert(curves.end(), part.begin(), part.end());
  }
  write_runs_csv(join_path(out_dir, "runs.csv"), rows);
  write_curves_csv(join_path(out_dir, "curves.csv"), curves);
  write_report_json(join_path(out_dir, "report.json"), cfg.config_hash, rows);
  log_line("[report] merged " + std::to_string(rows.size()) + " rows into '" +
           out_dir + "'");
}

void run_all(const ExperimentConfig& cfg, const std::string& out_dir) {
  stage_train(cfg, out_dir);
  if (cfg.experiment == "exp3") stage_sweep(cfg, out_dir);
  stage_probe(cfg, out_dir);
  stage_ablate(cfg, out_dir);
  stage_baseline(cfg, out_dir);
  stage_report(cfg, out_dir);
}

}  // namespace cprobe
