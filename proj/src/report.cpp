#include "cprobe/report.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "cprobe/config.hpp"

namespace cprobe {

const char* kRunsHeader =
    "experiment,stage,site,scope,variable,method,train_task,eval_task,"
    "epoch,seed,lambda,sparsity,accuracy,value";
const char* kCurvesHeader = "epoch,method,variable,accuracy";

namespace {

[[noreturn]] void bad(const std::string& msg) {
  throw std::invalid_argument("report: " + msg);
}

void check_field(const std::string& s) {
  for (char c : s) {
    if (c == ',' || c == '"' || c == '\n' || c == '\r') {
      bad("field contains a reserved character: '" + s + "'");
    }
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_cell(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end == s.c_str() || *end != '\0') bad("bad numeric cell '" + s + "'");
  return v;
}

std::vector<std::string> read_lines(const std::string& path, const char* header) {
  std::ifstream in(path);
  if (!in) bad("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.empty() || lines[0] != header) bad("'" + path + "' has a wrong header");
  return lines;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_runs_csv(const std::string& path, const std::vector<RunRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) bad("cannot write '" + path + "'");
  out << kRunsHeader << "\n";
  for (const RunRow& r : rows) {
    for (const std::string* s : {&r.experiment, &r.stage, &r.site, &r.scope,
                                 &r.variable, &r.method, &r.train_task, &r.eval_task}) {
      check_field(*s);
    }
    out << r.experiment << ',' << r.stage << ',' << r.site << ',' << r.scope << ','
        << r.variable << ',' << r.method << ',' << r.train_task << ',' << r.eval_task << ','
        << (r.epoch < 0 ? std::string() : std::to_string(r.epoch)) << ','
        << r.seed << ','
        << format_double(r.lambda) << ',' << format_double(r.sparsity) << ','
        << format_double(r.accuracy) << ',' << format_double(r.value) << "\n";
  }
  if (!out.flush()) bad("write failed for '" + path + "'");
}

std::vector<RunRow> read_runs_csv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path, kRunsHeader);
  std::vector<RunRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = split_csv(lines[i]);
    if (f.size() != 14) bad("'" + path + "' line " + std::to_string(i + 1) + " has " +
                            std::to_string(f.size()) + " fields");
    RunRow r;
    r.experiment = f[0];
    r.stage = f[1];
    r.site = f[2];
    r.scope = f[3];
    r.variable = f[4];
    r.method = f[5];
    r.train_task = f[6];
    r.eval_task = f[7];
    r.epoch = f[8].empty() ? -1 : std::stol(f[8]);
    r.seed = f[9].empty() ? 0 : std::stoull(f[9]);
    r.lambda = parse_cell(f[10]);
    r.sparsity = parse_cell(f[11]);
    r.accuracy = parse_cell(f[12]);
    r.value = parse_cell(f[13]);
    rows.push_back(r);
  }
  return rows;
}

void write_curves_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) bad("cannot write '" + path + "'");
  out << kCurvesHeader << "\n";
  for (const CurveRow& r : rows) {
    check_field(r.method);
    check_field(r.variable);
    out << r.epoch << ',' << r.method << ',' << r.variable << ','
        << format_double(r.accuracy) << "\n";
  }
  if (!out.flush()) bad("write failed for '" + path + "'");
}

std::vector<CurveRow> read_curves_csv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path, kCurvesHeader);
  std::vector<CurveRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = split_csv(lines[i]);
    if (f.size() != 4) bad("'" + path + "' line " + std::to_string(i + 1) + " malformed");
    CurveRow r;
    r.epoch = std::stol(f[0]);
    r.method = f[1];
    r.variable = f[2];
    r.accuracy = parse_cell(f[3]);
    rows.push_back(r);
  }
  return rows;
}

void write_report_json(const std::string& path, std::uint64_t config_hash,
                       const std::vector<RunRow>& rows) {
  nlohmann::json root;
  root["config_hash"] = hash_hex(config_hash);
  root["experiments"] = nlohmann::json::object();
  for (const RunRow& r : rows) {
    nlohmann::json obj;
    obj["stage"] = r.stage;
    obj["method"] = r.method;
    if (!r.scope.empty()) obj["scope"] = r.scope;
    if (!r.train_task.empty()) obj["train_task"] = r.train_task;
    if (!r.eval_task.empty()) obj["eval_task"] = r.eval_task;
    if (r.epoch >= 0) obj["epoch"] = r.epoch;
    obj["seed"] = r.seed;
    if (!std::isnan(r.lambda)) obj["lambda"] = r.lambda;
    if (!std::isnan(r.sparsity)) obj["sparsity"] = r.sparsity;
    if (!std::isnan(r.accuracy)) obj["accuracy"] = r.accuracy;
    if (!std::isnan(r.value)) obj["value"] = r.value;
    std::string exp = r.experiment.empty() ? "unknown" : r.experiment;
    std::string site = r.site.empty() ? "global" : r.site;
    std::string var = r.variable.empty() ? "all" : r.variable;
    root["experiments"][exp][site][var].push_back(obj);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) bad("cannot write '" + path + "'");
  out << root.dump(2) << "\n";
  if (!out.flush()) bad("write failed for '" + path + "'");
}

}  // namespace cprobe
