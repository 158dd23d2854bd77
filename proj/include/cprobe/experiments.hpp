#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cprobe/baselines.hpp"
#include "cprobe/config.hpp"
#include "cprobe/interventions.hpp"
#include "cprobe/model.hpp"
#include "cprobe/optim.hpp"
#include "cprobe/probe.hpp"
#include "cprobe/report.hpp"
#include "cprobe/tasks.hpp"

namespace cprobe {

// One circuit-probing job: learn a mask for `variable` at `site`, optionally
// restricted to one multitask subtask's examples.
struct ProbeJob {
  Site site = Site::kAttention;
  std::string variable;
  int task = 0;       // 0 = whole dataset, 1/2 = multitask subtask
  std::string role;   // multitask hypothesis: shared | free | other
};

// Typed, validated experiment settings. Every run stems from a flat config
// file; unknown keys and out-of-range values are rejected up front.
struct ExperimentConfig {
  std::string experiment;  // exp1 | exp2 | exp3
  TaskKind task = TaskKind::kA2MinusB2;
  int p = 113;
  double train_frac = 0.6;

  int d_model = 128;
  int n_heads = 4;
  int d_mlp = 512;

  double lr = 1e-3;
  double weight_decay = 1.0;
  int batch_size = 500;
  int epochs = 2000;
  bool early_stop = true;        // stop once test accuracy reaches 1.0
  int eval_interval = 10;        // accuracy curve cadence (epochs)
  int checkpoint_interval = 0;   // 0 = final checkpoint only

  std::vector<ProbeJob> jobs;
  CircuitProbeConfig probe;      // per-job seeds are derived at run time
  ProbeConfig baseline;

  bool run_linear = true;
  bool run_nonlinear = true;
  bool run_contrastive = false;
  bool run_eraser = false;
  bool run_counterfactual = false;
  bool run_controls = true;
  int n_controls = 5;
  int counterfactual_samples = 200;

  int sweep_stride = 1;          // probe every k-th checkpoint
  int transfer_epochs = 500;     // fine-tuning budget
  double transfer_threshold = 0.95;

  // Internal: early-stop accuracy level (transfer runs lower it).
  double stop_threshold = 1.0;

  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  // Throws std::invalid_argument on unknown keys, bad values, or variables
  // that the experiment's task cannot label.
  static ExperimentConfig from_config(const Config& raw);

  Dataset build_data() const;
  SplitDataset split(const Dataset& full) const;
  ModelConfig model_config(const Dataset& data) const;
};

struct TrainOutcome {
  int epochs_run = 0;          // last completed epoch (1-based)
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<CurveRow> curve;
  std::vector<long> checkpoint_epochs;  // intermediate checkpoints saved
};

// AdamW + cross-entropy training with seeded batch shuffling, periodic
// accuracy measurements, and optional intermediate checkpoints written as
// <out_dir>/ckpt_<epoch>. Throws NumericalError when the loss leaves the
// finite range. start_epoch > 0 resumes counting from there.
TrainOutcome train_model(Transformer& model, AdamW& opt,
                         const ExperimentConfig& cfg, const Dataset& train,
                         const Dataset& test, const std::string& out_dir,
                         int start_epoch = 0);

// Pipeline stages. Each writes its own runs_<stage>.csv (plus artifacts)
// under out_dir; later stages read earlier artifacts from the same out_dir.
// A non-empty resume base continues training from that checkpoint.
void stage_train(const ExperimentConfig& cfg, const std::string& out_dir,
                 const std::string& resume = "");
void stage_probe(const ExperimentConfig& cfg, const std::string& out_dir);
void stage_ablate(const ExperimentConfig& cfg, const std::string& out_dir);
void stage_baseline(const ExperimentConfig& cfg, const std::string& out_dir);
void stage_sweep(const ExperimentConfig& cfg, const std::string& out_dir);
void stage_transfer(const ExperimentConfig& cfg, const std::string& out_dir);

// Merges every stage file present in out_dir into runs.csv, curves.csv and
// report.json. Deterministic: fixed stage order, stable row order.
void stage_report(const ExperimentConfig& cfg, const std::string& out_dir);

// The stages that make sense for the experiment, in order, ending with the
// report. exp1/exp2: train, probe, ablate, baseline. exp3: train, sweep,
// probe, ablate, baseline.
void run_all(const ExperimentConfig& cfg, const std::string& out_dir);

// Circuit artifact path for a probe job, e.g. circuit_attention_a_sq.json
// or circuit_attention_a_mod_p_task1.json.
std::string circuit_artifact_name(const ProbeJob& job);

struct CircuitArtifact {
  ProbeJob job;
  CircuitProbeResult result;
  double knn_accuracy = 0.0;
  std::uint64_t seed = 0;  // probe seed used
  double lambda = 0.0;
};

void save_circuit(const std::string& path, const CircuitArtifact& art);
CircuitArtifact load_circuit(const std::string& path);

}  // namespace cprobe
