#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audiobert/tensor.hpp"

namespace ab::num {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Parameter container: 4-byte magic "ABCK", u32 version, then a manifest of
// (name, shape, byte offset) records followed by raw little-endian f64 data.
// Writes go to a temporary file that is renamed into place on success.
void save_params(const std::string& path, const std::vector<NamedTensor>& params);

// Reads every entry of a container into fresh leaf tensors.
std::vector<NamedTensor> load_params(const std::string& path);

// Copies container entries into existing tensors, matching by name; shapes
// must agree. Returns the number of parameters filled. With require_all set,
// a destination name missing from the file is an error; container entries
// with no matching destination are always ignored.
size_t load_params_into(const std::string& path, std::vector<NamedTensor>& dst, bool require_all = true);

// Order-sensitive FNV-1a digest over names, shapes, and raw parameter bytes;
// used to audit that a frozen parameter set did not move during training.
uint64_t params_fingerprint(const std::vector<NamedTensor>& params);

}  // namespace ab::num
