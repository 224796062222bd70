#pragma once

#include <map>
#include <string>

#include "milens/tensor.hpp"

namespace milens {

// Flat versioned binary container of named f64 parameter arrays with shapes.
// Little-endian throughout. Layout:
//   magic "MLNSCKPT" | u32 version | u32 count |
//   per entry: u32 name_len | name bytes | u32 ndim | i64 dims[] | f64 data[]
void save_checkpoint(const ParamStore& store, const std::string& path);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

// Restores parameter values into an existing store; every stored entry must
// match a parameter by name and shape.
void restore_checkpoint(ParamStore& store, const std::string& path);

}  // namespace milens
