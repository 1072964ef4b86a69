#pragma once

// CPF1 parameter checkpoints (all integers little-endian):
//
//   "CPF1"
//   u32 D, u32 R, u32 m, u32 L
//   D x L x (u32 rows, u32 cols)         layer shape table
//   u32 hidden activation, u32 head activation, u32 bias flag
//   f64 a[m], f64 b[m], D x (f64 lo, f64 hi), f64 weights[...]
//   optional trailer: "SDFN" f64 center[3] f64 scale
//
// The weights follow FieldParams::weights() order.

#include "cppruner/field.hpp"
#include "cppruner/geometry.hpp"

#include <optional>
#include <string>

namespace cppruner {

struct Checkpoint {
    FieldParams params;
    std::optional<PointNormalization> normalization;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

} // namespace cppruner
