#include "cprobe/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "cprobe/config.hpp"

namespace cprobe {

namespace {

constexpr const char* kFormatTag = "circuitprobe-checkpoint-v1";

[[noreturn]] void bad(const std::string& msg) {
  throw std::invalid_argument("checkpoint: " + msg);
}

const char* kParamNames[] = {
    "wte",       "wpe",        "ln1_g", "ln1_b", "c_attn_w", "c_attn_b",
    "c_proj_w",  "c_proj_b",   "ln2_g", "ln2_b", "c_fc_w",   "c_fc_b",
    "mlp_proj_w", "mlp_proj_b", "lnf_g", "lnf_b", "head_w"};

struct NamedTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  const double* data = nullptr;  // save side
};

void append_le(std::vector<unsigned char>& out, const double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &v[i], 8);
    for (int b = 0; b < 8; ++b) {
      out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xff));
    }
  }
}

double read_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  }
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::vector<NamedTensor> collect(Transformer& model, AdamW* opt) {
  std::vector<NamedTensor> out;
  std::vector<Param*> params = model.params();
  if (params.size() != sizeof(kParamNames) / sizeof(kParamNames[0])) {
    bad("parameter list does not match canonical names");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({kParamNames[i], params[i]->rows, params[i]->cols,
                   params[i]->value.data()});
  }
  if (opt) {
    const std::vector<Param*>& oparams = opt->params();
    for (std::size_t i = 0; i < oparams.size(); ++i) {
      std::size_t which = params.size();
      for (std::size_t j = 0; j < params.size(); ++j) {
        if (params[j] == oparams[i]) {
          which = j;
          break;
        }
      }
      if (which == params.size()) bad("optimizer tracks an unknown parameter");
      out.push_back({std::string("opt.m.") + kParamNames[which],
                     oparams[i]->rows, oparams[i]->cols,
                     opt->moment1(static_cast<int>(i)).data()});
      out.push_back({std::string("opt.v.") + kParamNames[which],
                     oparams[i]->rows, oparams[i]->cols,
                     opt->moment2(static_cast<int>(i)).data()});
    }
  }
  return out;
}

struct IndexEntry {
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;  // bytes into the payload
};

}  // namespace

void save_checkpoint(const std::string& base, Transformer& model, long epoch,
                     std::uint64_t config_hash, AdamW* opt) {
  std::vector<NamedTensor> tensors = collect(model, opt);
  double steps_value = 0.0;
  if (opt) {
    steps_value = static_cast<double>(opt->steps());
    tensors.push_back({"opt.steps", 1, 1, &steps_value});
  }

  std::ostringstream manifest;
  manifest << "format=" << kFormatTag << "\n";
  manifest << "config_hash=" << hash_hex(config_hash) << "\n";
  manifest << "epoch=" << epoch << "\n";
  manifest << "tensors=" << tensors.size() << "\n";
  std::vector<unsigned char> payload;
  std::size_t offset = 0;
  for (const NamedTensor& t : tensors) {
    manifest << "tensor=" << t.name << " " << t.rows << " " << t.cols << " "
             << offset << "\n";
    std::size_t n = static_cast<std::size_t>(t.rows) * t.cols;
    append_le(payload, t.data, n);
    offset += 8 * n;
  }

  {
    std::ofstream out(base + ".manifest", std::ios::trunc);
    if (!out) bad("cannot write '" + base + ".manifest'");
    out << manifest.str();
    if (!out.flush()) bad("write failed for '" + base + ".manifest'");
  }
  {
    std::ofstream out(base + ".payload", std::ios::trunc | std::ios::binary);
    if (!out) bad("cannot write '" + base + ".payload'");
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out.flush()) bad("write failed for '" + base + ".payload'");
  }
}

namespace {

struct Manifest {
  CheckpointInfo info;
  std::map<std::string, IndexEntry> index;
  std::size_t payload_bytes = 0;
};

Manifest read_manifest(const std::string& base) {
  std::ifstream in(base + ".manifest");
  if (!in) bad("cannot open '" + base + ".manifest'");
  Manifest m;
  std::string line;
  int lineno = 0;
  long declared = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) bad("manifest line " + std::to_string(lineno) + " malformed");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "format") {
      if (value != kFormatTag) bad("unsupported format '" + value + "'");
    } else if (key == "config_hash") {
      m.info.config_hash = parse_hash_hex(value);
    } else if (key == "epoch") {
      m.info.epoch = std::stol(value);
    } else if (key == "tensors") {
      declared = std::stol(value);
    } else if (key == "tensor") {
      std::istringstream fields(value);
      std::string name;
      IndexEntry e;
      if (!(fields >> name >> e.rows >> e.cols >> e.offset)) {
        bad("manifest line " + std::to_string(lineno) + " malformed");
      }
      if (e.rows <= 0 || e.cols <= 0) bad("tensor '" + name + "' has bad shape");
      if (m.index.count(name)) bad("duplicate tensor '" + name + "'");
      if (e.offset != m.payload_bytes) bad("tensor '" + name + "' offset mismatch");
      m.index[name] = e;
      m.payload_bytes += 8 * static_cast<std::size_t>(e.rows) * e.cols;
    } else {
      bad("unknown manifest key '" + key + "'");
    }
  }
  if (declared < 0 || static_cast<std::size_t>(declared) != m.index.size()) {
    bad("tensor count mismatch");
  }
  return m;
}

}  // namespace

CheckpointInfo peek_checkpoint(const std::string& base) {
  return read_manifest(base).info;
}

CheckpointInfo load_checkpoint(const std::string& base, Transformer& model,
                               AdamW* opt, const std::uint64_t* expect_hash) {
  Manifest m = read_manifest(base);
  if (expect_hash && m.info.config_hash != *expect_hash) {
    bad("config hash mismatch: checkpoint " + hash_hex(m.info.config_hash) +
        " vs expected " + hash_hex(*expect_hash));
  }

  std::ifstream in(base + ".payload", std::ios::binary);
  if (!in) bad("cannot open '" + base + ".payload'");
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
  if (payload.size() != m.payload_bytes) {
    bad("payload is " + std::to_string(payload.size()) + " bytes, manifest declares " +
        std::to_string(m.payload_bytes));
  }

  // Validate every expected tensor before touching the model.
  std::vector<Param*> params = model.params();
  std::size_t named = sizeof(kParamNames) / sizeof(kParamNames[0]);
  if (params.size() != named) bad("parameter list does not match canonical names");
  auto require = [&m](const std::string& name, int rows, int cols) -> const IndexEntry& {
    auto it = m.index.find(name);
    if (it == m.index.end()) bad("missing tensor '" + name + "'");
    if (it->second.rows != rows || it->second.cols != cols) {
      bad("tensor '" + name + "' has shape " + std::to_string(it->second.rows) + "x" +
          std::to_string(it->second.cols) + ", expected " + std::to_string(rows) + "x" +
          std::to_string(cols));
    }
    return it->second;
  };
  for (std::size_t i = 0; i < named; ++i) {
    require(kParamNames[i], params[i]->rows, params[i]->cols);
  }
  std::vector<std::string> known(kParamNames, kParamNames + named);
  if (opt) {
    const std::vector<Param*>& oparams = opt->params();
    for (std::size_t i = 0; i < oparams.size(); ++i) {
      std::size_t which = named;
      for (std::size_t j = 0; j < named; ++j) {
        if (params[j] == oparams[i]) {
          which = j;
          break;
        }
      }
      if (which == named) bad("optimizer tracks an unknown parameter");
      require(std::string("opt.m.") + kParamNames[which], oparams[i]->rows, oparams[i]->cols);
      require(std::string("opt.v.") + kParamNames[which], oparams[i]->rows, oparams[i]->cols);
      known.push_back(std::string("opt.m.") + kParamNames[which]);
      known.push_back(std::string("opt.v.") + kParamNames[which]);
    }
    require("opt.steps", 1, 1);
    known.push_back("opt.steps");
  }
  for (const auto& [name, entry] : m.index) {
    (void)entry;
    bool ok = false;
    for (const std::string& k : known) {
      if (name == k) {
        ok = true;
        break;
      }
    }
    if (!ok && !(opt == nullptr && name.rfind("opt.", 0) == 0)) {
      bad("unexpected tensor '" + name + "'");
    }
  }

  auto copy_in = [&m, &payload](const std::string& name, std::vector<double>& dst) {
    const IndexEntry& e = m.index.at(name);
    std::size_t n = static_cast<std::size_t>(e.rows) * e.cols;
    dst.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = read_le(payload.data() + e.offset + 8 * i);
    }
  };
  for (std::size_t i = 0; i < named; ++i) {
    copy_in(kParamNames[i], params[i]->value);
    std::fill(params[i]->grad.begin(), params[i]->grad.end(), 0.0);
  }
  if (opt) {
    const std::vector<Param*>& oparams = opt->params();
    for (std::size_t i = 0; i < oparams.size(); ++i) {
      std::size_t which = 0;
      for (std::size_t j = 0; j < named; ++j) {
        if (params[j] == oparams[i]) which = j;
      }
      copy_in(std::string("opt.m.") + kParamNames[which], opt->moment1(static_cast<int>(i)));
      copy_in(std::string("opt.v.") + kParamNames[which], opt->moment2(static_cast<int>(i)));
    }
    const IndexEntry& e = m.index.at("opt.steps");
    opt->set_steps(static_cast<long>(read_le(payload.data() + e.offset)));
  }
  return m.info;
}

}  // namespace cprobe
