#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dap/layers.hpp"

namespace dap {

struct VisionBackboneConfig {
  std::size_t layers = 4;  // N
  std::size_t width = 64;  // d
  std::size_t heads = 4;
  std::size_t patch = 4;   // p
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t mlp_hidden = 128;

  /// Image token count M = (H/p)(W/p).
  std::size_t tokens() const { return (image_size / patch) * (image_size / patch); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  void validate() const;
};

/// An H×W×C image together with its flattened non-overlapping patches.
class ImagePatchGrid {
 public:
  ImagePatchGrid(Tensor image, std::size_t patch_size);

  const Tensor& image() const { return image_; }
  /// (H/p·W/p) × (p·p·C), patches in row-major grid order, each patch
  /// flattened row-major with channels innermost.
  const Tensor& tokens() const { return tokens_; }
  std::size_t patch_size() const { return patch_; }
  std::size_t token_count() const { return tokens_.rows(); }

 private:
  Tensor image_;
  std::size_t patch_;
  Tensor tokens_;
};

/// Class token X, prompt rows P and image-token rows E after `layer_index`
/// encoder layers.
struct EncoderState {
  Var cls;
  Var prompts;
  Var patches;
  std::size_t layer_index = 0;

  std::size_t prompt_count() const { return prompts.rows(); }
  std::size_t sequence_length() const { return 1 + prompts.rows() + patches.rows(); }
};

/// Observer of each layer application; receives (layer i, input state,
/// output state) with i counted from 1.
using LayerHook = std::function<void(std::size_t, const EncoderState&, const EncoderState&)>;

/// Mini vision transformer over the sequence [CLS; prompts; patches]. Prompts
/// are position-free: only CLS and patch rows receive positional embeddings.
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const VisionBackboneConfig& config, const std::string& prefix, Rng& rng);

  EncoderState embed_image(Tape& tape, const ImagePatchGrid& image);
  /// Runs every layer over the concatenated state. `prompts` (K×d) may be
  /// absent, which is the same as K = 0.
  EncoderState encode(Tape& tape, const EncoderState& initial, std::optional<Var> prompts,
                      const LayerHook& hook = {});
  /// Final layer norm of X_N: the pooled image feature.
  Var pooled(Tape& tape, const EncoderState& final_state);
  /// embed_image + encode + pooled.
  Var features(Tape& tape, const ImagePatchGrid& image, std::optional<Var> prompts);

  ParameterList parameters();
  /// Layer L_i, 1-based.
  TransformerLayer& layer(std::size_t i) { return layers_.at(i - 1); }
  const VisionBackboneConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

 private:
  VisionBackboneConfig config_;
  std::string prefix_;
  Linear patch_proj_;
  Parameter cls_;
  Parameter pos_;
  std::vector<TransformerLayer> layers_;
  LayerNorm norm_;
};

}  // namespace dap
