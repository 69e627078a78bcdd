#pragma once

#include <map>
#include <string>
#include <vector>

#include "windformer/data.hpp"
#include "windformer/model.hpp"

namespace windformer {

// On-disk format: "<prefix>.manifest" is a text file (version, endianness,
// dtype, meta key/value lines, then one tensor line per array with name,
// rank, dims and byte offset); "<prefix>.bin" is the raw little-endian
// row-major f64 payload, tensors back to back at their stated offsets.

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

struct TensorFile {
    std::map<std::string, std::string> meta;  // insertion order is not kept
    std::vector<NamedTensor> tensors;
};

void write_tensor_file(const std::string& prefix,
                       const std::vector<std::pair<std::string, std::string>>& meta,
                       const std::vector<NamedTensor>& tensors);
TensorFile read_tensor_file(const std::string& prefix);

// Model checkpoints carry the architecture and the normalization statistics
// next to the weights, so eval/predict rebuild the exact network.
void save_checkpoint(const std::string& prefix, const ModelParams& params,
                     const ModelConfig& cfg, const NormStats& stats);

struct LoadedCheckpoint {
    ModelConfig config;
    NormStats stats;
    ModelParams params;
};
LoadedCheckpoint load_checkpoint(const std::string& prefix);

}  // namespace windformer
