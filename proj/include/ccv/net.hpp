#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ccv/context.hpp"
#include "ccv/graph.hpp"
#include "ccv/tensor.hpp"

namespace ccv {

// Architecture descriptor; parameter names and shapes are fully determined
// by these three numbers (see parameter_spec).
struct ArchDesc {
  int levels = 3;
  int base_channels = 16;
  int image_side = 64;
};

// Frozen parameter set of the in-context segmentation network. The map is
// name-ordered, which fixes the checkpoint layout byte for byte.
template <typename T>
struct ModelWeights {
  ArchDesc arch;
  std::map<std::string, Tensor<T>> params;

  static ModelWeights random_init(const ArchDesc& arch, uint64_t seed);

  const Tensor<T>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
      throw std::invalid_argument("missing parameter \"" + name + "\"");
    return it->second;
  }

  void set_requires_grad(bool b) {
    for (auto& [name, t] : params) t.set_requires_grad(b);
  }

  ModelWeights clone() const {
    ModelWeights w;
    w.arch = arch;
    for (const auto& [name, t] : params) w.params.emplace(name, t.clone());
    return w;
  }

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> w;
    w.arch = arch;
    for (const auto& [name, t] : params) w.params.emplace(name, t.template cast<U>());
    return w;
  }
};

// (name, shape) list implied by the descriptor, in checkpoint order.
std::vector<std::pair<std::string, std::vector<int>>> parameter_spec(const ArchDesc& arch);

// The network: a 3-level U-shape of shared "cross" blocks. At every level
// each pair's features are concatenated with the query features, passed
// through one shared conv+relu, and the query representation is updated
// with the mean over pairs. The mean is the only place pairs interact, so
// the output is exactly invariant to pair order. Returns the per-pixel
// probability map [1,H,W]; differentiable w.r.t. query, context images and
// context masks.
template <typename T>
Tensor<T> forward(Graph<T>& g, const ModelWeights<T>& w, const Tensor<T>& query,
                  const ContextSet<T>& ctx);

// Pre-sigmoid variant used by the trainer's logit-space loss.
template <typename T>
Tensor<T> forward_logits(Graph<T>& g, const ModelWeights<T>& w, const Tensor<T>& query,
                         const ContextSet<T>& ctx);

// Global-average-pooled bottleneck feature of a single image (the image is
// probed as a query against itself with an empty mask). Used for context
// ranking.
template <typename T>
std::vector<T> encode_query(const ModelWeights<T>& w, const Tensor<T>& image);

// Checkpoint format (little-endian): magic "CCVW", u32 version, u32 levels,
// u32 base_channels, u32 image_side, u32 parameter count, then per parameter
// u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload.
void save_checkpoint(const ModelWeights<float>& w, const std::string& path);
ModelWeights<float> load_checkpoint(const std::string& path);

// In-memory serialization (same byte layout as the file).
std::string checkpoint_bytes(const ModelWeights<float>& w);

}  // namespace ccv
