#pragma once

#include <string>
#include <utility>
#include <vector>

#include "jacmatch/nn.hpp"
#include "jacmatch/tensor.hpp"

namespace jm::nn {

// Versioned binary container of named parameter tensors:
//   magic "JMCKPT01", u32 tensor count, then per tensor
//   u16 name length, name bytes, u8 dtype tag (0 = f64), u8 ndim,
//   i32 extents, raw little-endian f64 payload.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, ad::Tensor>>& tensors);
std::vector<std::pair<std::string, ad::Tensor>> load_tensors(const std::string& path);

void save_network(const std::string& path, const Network& net);
// Loads parameters by name into an existing network of matching
// architecture; rejects shape mismatches naming the offending tensor.
void load_network_params(const std::string& path, Network& net);

}  // namespace jm::nn
