#pragma once

#include <cstdint>
#include <string>

#include "cprobe/model.hpp"
#include "cprobe/optim.hpp"

namespace cprobe {

// Checkpoints are two files derived from a base path:
//   <base>.manifest  text: format tag, config hash, epoch, tensor index
//                    (name, rows, cols, byte offset into the payload)
//   <base>.payload   raw little-endian f64 values, concatenated in index
//                    order with no framing
// Model weights use the canonical parameter names; optimizer state rides
// along as opt.m.<name> / opt.v.<name> plus an opt.steps scalar so training
// resumes bit-exactly.

struct CheckpointInfo {
  long epoch = 0;
  std::uint64_t config_hash = 0;
};

// Writes both files, replacing existing ones. Pass the optimizer to include
// its state. Throws std::invalid_argument on IO failure.
void save_checkpoint(const std::string& base, Transformer& model, long epoch,
                     std::uint64_t config_hash, AdamW* opt = nullptr);

// Restores weights (and optimizer state when opt is given). The payload
// length and every tensor's shape are validated before anything is mutated.
// When expect_hash is given a differing recorded hash is rejected. Unknown
// tensor names are rejected, except optimizer state when opt is null.
CheckpointInfo load_checkpoint(const std::string& base, Transformer& model,
                               AdamW* opt = nullptr,
                               const std::uint64_t* expect_hash = nullptr);

// Reads just the header of <base>.manifest.
CheckpointInfo peek_checkpoint(const std::string& base);

}  // namespace cprobe
