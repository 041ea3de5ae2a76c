#pragma once

#include <string>

#include "npssl/np_model.hpp"

namespace npssl::io {

/// One named parameter tensor of the flat checkpoint record.
struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    Vector data;
};

/// Versioned little-endian binary layout:
///   magic "NPSSLCK1", u32 version, u32 tensor count, then per tensor:
///   u32 name length, name bytes, u32 ndim, u64 dims..., f64 data...
/// Stable across runs; any inconsistency on load raises IoError.
void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

/// Everything evaluation needs: student and EMA weights plus both banks.
struct CheckpointState {
    np::NpModel student;
    np::NpModel ema;
    np::MemoryBank bank_a;
    np::MemoryBank bank_b;
};

std::vector<NamedTensor> to_tensors(np::NpModel& student, np::NpModel& ema,
                                    const np::MemoryBank& bank_a,
                                    const np::MemoryBank& bank_b);
CheckpointState from_tensors(std::span<const NamedTensor> tensors);

}  // namespace npssl::io
