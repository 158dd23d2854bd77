#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cprobe {

// The task family. Operands live in [0, p); every task reads its answer at
// the final token position.
//   a2_minus_b2:      [a, b, SEP]            target (a^2 - b^2) mod p
//   a2_plus_b:        [a, b, SEP]            target (a^2 + b) mod p
//   multitask:        [T, a, b, c, N]        two interleaved subtasks
//     task 1 (T=p+1): ((a mod 29) + (b mod 31)) mod 29, exhaustive (a, b)
//     task 2 (T=p+2): ((a mod 29) + (c mod 23)) mod 29, exhaustive (a, c)
//     the unused operand is drawn uniformly from [0, p) with the split seed
//   transfer_a2:      [a, b, SEP]            target a^2 mod p
//   transfer_a_plus_b:[a, b, SEP]            target (a + b) mod p
enum class TaskKind {
  kA2MinusB2,
  kMultitask,
  kA2PlusB,
  kTransferA2,
  kTransferAPlusB,
};

TaskKind task_from_name(const std::string& name);
const char* task_name(TaskKind kind);

struct Dataset {
  TaskKind kind;
  int p = 0;        // operand modulus
  int vocab = 0;    // p+1 for [a,b,SEP] tasks, p+4 for the multitask format
  int seq_len = 0;  // 3 or 5
  int n = 0;
  std::vector<int> tokens;   // n * seq_len
  std::vector<int> targets;  // n, the class to predict at the last position
  std::vector<int> a, b, c;  // operands per example (c all -1 except multitask)
  std::vector<int> task;     // 1 or 2 for multitask, 0 otherwise
};

struct SplitDataset {
  Dataset train, test;
};

// Full deterministic example grid. seed feeds only the multitask free
// operands; the other tasks ignore it.
Dataset build_dataset(TaskKind kind, int p, std::uint64_t seed = 0);

// Seeded shuffle, then the first round(train_frac * n) examples train.
SplitDataset split_dataset(const Dataset& full, double train_frac,
                           std::uint64_t seed);

// Keep only examples of one multitask subtask.
Dataset filter_task(const Dataset& data, int task);

// Labels of a hypothesized intermediate variable for every example:
//   a_sq, b_sq, neg_b_sq, a_plus_b, a_minus_b  (mod p)
//   a_mod_p   = a mod 29
//   b_mod_p1  = b mod 31
//   c_mod_p2  = c mod 23
// Throws std::invalid_argument for unknown names or variables that need an
// operand the task does not have.
std::vector<int> variable_labels(const Dataset& data, const std::string& var);

// Number of distinct label values the variable can take on this dataset.
int variable_cardinality(const Dataset& data, const std::string& var);

}  // namespace cprobe
