#include "cprobe/tasks.hpp"

#include <cmath>
#include <stdexcept>

#include "cprobe/rng.hpp"

namespace cprobe {

namespace {

constexpr int kModA = 29, kModB = 31, kModC = 23;

void push_example(Dataset& d, std::initializer_list<int> toks, int target,
                  int a, int b, int c, int task) {
  d.tokens.insert(d.tokens.end(), toks);
  d.targets.push_back(target);
  d.a.push_back(a);
  d.b.push_back(b);
  d.c.push_back(c);
  d.task.push_back(task);
  ++d.n;
}

}  // namespace

TaskKind task_from_name(const std::string& name) {
  if (name == "a2_minus_b2") return TaskKind::kA2MinusB2;
  if (name == "multitask") return TaskKind::kMultitask;
  if (name == "a2_plus_b") return TaskKind::kA2PlusB;
  if (name == "transfer_a2") return TaskKind::kTransferA2;
  if (name == "transfer_a_plus_b") return TaskKind::kTransferAPlusB;
  throw std::invalid_argument("unknown task '" + name + "'");
}

const char* task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kA2MinusB2: return "a2_minus_b2";
    case TaskKind::kMultitask: return "multitask";
    case TaskKind::kA2PlusB: return "a2_plus_b";
    case TaskKind::kTransferA2: return "transfer_a2";
    case TaskKind::kTransferAPlusB: return "transfer_a_plus_b";
  }
  return "?";
}

Dataset build_dataset(TaskKind kind, int p, std::uint64_t seed) {
  if (p < 2) throw std::invalid_argument("task: modulus p must be >= 2");
  Dataset d;
  d.kind = kind;
  d.p = p;

  if (kind == TaskKind::kMultitask) {
    if (p <= kModB)
      throw std::invalid_argument(
          "multitask: p must exceed the largest operand modulus (31)");
    const int t1 = p + 1, t2 = p + 2, fin = p + 3;
    d.vocab = p + 4;
    d.seq_len = 5;
    Rng rng(derive_seed(seed, "free_ops"));
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b) {
        const int c = static_cast<int>(rng.below(p));
        const int target = (a % kModA + b % kModB) % kModA;
        push_example(d, {t1, a, b, c, fin}, target, a, b, c, 1);
      }
    for (int a = 0; a < p; ++a)
      for (int c = 0; c < p; ++c) {
        const int b = static_cast<int>(rng.below(p));
        const int target = (a % kModA + c % kModC) % kModA;
        push_example(d, {t2, a, b, c, fin}, target, a, b, c, 2);
      }
    return d;
  }

  const int sep = p;
  d.vocab = p + 1;
  d.seq_len = 3;
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) {
      int target = 0;
      switch (kind) {
        case TaskKind::kA2MinusB2:
          target = ((a * a - b * b) % p + p) % p;
          break;
        case TaskKind::kA2PlusB:
          target = (a * a + b) % p;
          break;
        case TaskKind::kTransferA2:
          target = (a * a) % p;
          break;
        case TaskKind::kTransferAPlusB:
          target = (a + b) % p;
          break;
        case TaskKind::kMultitask:
          break;  // handled above
      }
      push_example(d, {a, b, sep}, target, a, b, -1, 0);
    }
  return d;
}

SplitDataset split_dataset(const Dataset& full, double train_frac,
                           std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("split: train_frac must be in (0, 1)");
  std::vector<int> order(full.n);
  for (int i = 0; i < full.n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const int train_n = static_cast<int>(std::lround(train_frac * full.n));
  if (train_n == 0 || train_n == full.n)
    throw std::invalid_argument("split: a side would be empty");

  SplitDataset out;
  for (Dataset* side : {&out.train, &out.test}) {
    side->kind = full.kind;
    side->p = full.p;
    side->vocab = full.vocab;
    side->seq_len = full.seq_len;
  }
  for (int i = 0; i < full.n; ++i) {
    Dataset& side = i < train_n ? out.train : out.test;
    const int e = order[i];
    for (int t = 0; t < full.seq_len; ++t)
      side.tokens.push_back(full.tokens[e * full.seq_len + t]);
    side.targets.push_back(full.targets[e]);
    side.a.push_back(full.a[e]);
    side.b.push_back(full.b[e]);
    side.c.push_back(full.c[e]);
    side.task.push_back(full.task[e]);
    ++side.n;
  }
  return out;
}

Dataset filter_task(const Dataset& data, int task) {
  Dataset out;
  out.kind = data.kind;
  out.p = data.p;
  out.vocab = data.vocab;
  out.seq_len = data.seq_len;
  for (int e = 0; e < data.n; ++e) {
    if (data.task[e] != task) continue;
    for (int t = 0; t < data.seq_len; ++t)
      out.tokens.push_back(data.tokens[e * data.seq_len + t]);
    out.targets.push_back(data.targets[e]);
    out.a.push_back(data.a[e]);
    out.b.push_back(data.b[e]);
    out.c.push_back(data.c[e]);
    out.task.push_back(data.task[e]);
    ++out.n;
  }
  return out;
}

std::vector<int> variable_labels(const Dataset& d, const std::string& var) {
  std::vector<int> out(d.n);
  const int p = d.p;
  for (int e = 0; e < d.n; ++e) {
    const int a = d.a[e], b = d.b[e], c = d.c[e];
    if (var == "a_sq") {
      out[e] = (a * a) % p;
    } else if (var == "b_sq") {
      out[e] = (b * b) % p;
    } else if (var == "neg_b_sq") {
      out[e] = ((-b * b) % p + p) % p;
    } else if (var == "a_plus_b") {
      out[e] = (a + b) % p;
    } else if (var == "a_minus_b") {
      out[e] = ((a - b) % p + p) % p;
    } else if (var == "a_mod_p") {
      out[e] = a % kModA;
    } else if (var == "b_mod_p1") {
      out[e] = b % kModB;
    } else if (var == "c_mod_p2") {
      if (c < 0)
        throw std::invalid_argument("variable 'c_mod_p2' needs the multitask format");
      out[e] = c % kModC;
    } else {
      throw std::invalid_argument("unknown variable '" + var + "'");
    }
  }
  return out;
}

int variable_cardinality(const Dataset& d, const std::string& var) {
  if (var == "a_mod_p") return kModA;
  if (var == "b_mod_p1") return kModB;
  if (var == "c_mod_p2") return kModC;
  if (var == "a_sq" || var == "b_sq" || var == "neg_b_sq") {
    // Quadratic residues mod an odd prime p: (p-1)/2 of them, plus zero.
    return (d.p - 1) / 2 + 1;
  }
  if (var == "a_plus_b" || var == "a_minus_b") return d.p;
  throw std::invalid_argument("unknown variable '" + var + "'");
}

}  // namespace cprobe
