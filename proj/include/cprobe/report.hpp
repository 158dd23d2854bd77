#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace cprobe {

// One measurement row of runs.csv. String fields must not contain commas,
// quotes, or newlines. Numeric fields left at their defaults (epoch -1,
// doubles NaN) render as empty cells; seed always renders.
struct RunRow {
  std::string experiment;
  std::string stage;       // train | circuit | ablation | control | overlap |
                           // baseline | eraser | amnesic | counterfactual |
                           // sweep | transfer
  std::string site;        // mask site or representation name
  std::string scope;       // tensor or head restriction, if any
  std::string variable;    // probed variable
  std::string method;
  std::string train_task;  // multitask circuits: task the probe saw
  std::string eval_task;   // multitask ablations: task being scored
  long epoch = -1;
  std::uint64_t seed = 0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double sparsity = std::numeric_limits<double>::quiet_NaN();
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double value = std::numeric_limits<double>::quiet_NaN();
  // value: non-accuracy scalar (jaccard, l0, epochs-to-threshold, ...)
};

// One point of an accuracy-over-epochs series.
struct CurveRow {
  long epoch = 0;
  std::string method;
  std::string variable;
  double accuracy = 0.0;
};

extern const char* kRunsHeader;    // column list of runs.csv
extern const char* kCurvesHeader;  // column list of curves.csv

std::string format_double(double v);  // shortest round-trip; "" for NaN

void write_runs_csv(const std::string& path, const std::vector<RunRow>& rows);
std::vector<RunRow> read_runs_csv(const std::string& path);

void write_curves_csv(const std::string& path,
                      const std::vector<CurveRow>& rows);
std::vector<CurveRow> read_curves_csv(const std::string& path);

// report.json: rows nested experiment -> site (or "global") -> variable
// (or "all"), each leaf an array of row objects with empty fields omitted.
void write_report_json(const std::string& path, std::uint64_t config_hash,
                       const std::vector<RunRow>& rows);

}  // namespace cprobe
