// SPDX-License-Identifier: Apache-2.0
//
// Gradient-isolated encoder modules and the stack built from them.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gim/rng.hpp"
#include "gim/tensor.hpp"

namespace gim {

enum class InputKind { sequence, patch_grid };

struct LayerSpec {
  enum class Kind { conv1d, conv2d, relu, mean_pool };
  Kind kind = Kind::relu;
  std::size_t channels_in = 0;
  std::size_t channels_out = 0;
  // Per-dimension values; 1D layers only use index 0.
  std::array<std::size_t, 2> kernel{1, 1};
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> pad{0, 0};

  bool is_conv() const { return kind == Kind::conv1d || kind == Kind::conv2d; }
};

std::string to_string(LayerSpec::Kind kind);

struct ModuleSpec {
  std::vector<LayerSpec> layers;
};

/// Architecture of an M-module stack.
///
/// `input_extent` is the sequence length (sequence inputs) or the patch side
/// in pixels (patch grids); channel counts chain across module boundaries.
struct StackConfig {
  InputKind input = InputKind::sequence;
  std::size_t input_channels = 1;
  std::vector<std::size_t> input_extent;
  std::vector<ModuleSpec> modules;

  std::size_t module_count() const { return modules.size(); }
};

/// Per-module input/output geometry derived from a StackConfig.
struct ModuleGeometry {
  std::size_t channels_in = 0;
  std::size_t channels_out = 0;
  std::vector<std::size_t> extent_in;
  std::vector<std::size_t> extent_out;
};

/// Validates channel chaining and spatial extents; throws ShapeError naming
/// the offending module boundary or layer.
std::vector<ModuleGeometry> check_stack(const StackConfig& config);

/// One gradient-isolated encoder g_enc^m. Holds its own parameters only.
class EncoderModule {
 public:
  EncoderModule(std::size_t index, ModuleSpec spec, InputKind input, SeededRng& rng);

  std::size_t index() const noexcept { return index_; }
  const ModuleSpec& spec() const noexcept { return spec_; }
  InputKind input_kind() const noexcept { return input_; }
  std::size_t out_dim() const noexcept { return out_dim_; }

  /// Weights and biases in layer order (weight then bias per conv).
  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  std::vector<Tensor>& parameters() noexcept { return params_; }

  void set_trainable(bool on);

  /// Applies the layers to `x` with no input blocking.
  Tensor apply_layers(Graph& g, const Tensor& x) const;

 private:
  std::size_t index_;
  ModuleSpec spec_;
  InputKind input_;
  std::size_t out_dim_ = 0;
  std::vector<Tensor> params_;
  // params_ offset of each conv layer's weight, or npos.
  std::vector<std::size_t> param_slot_;
};

using Stack = std::vector<EncoderModule>;

/// Builds M modules, each initialised uniformly in +-sqrt(6/(fan_in+fan_out))
/// with zero biases, from per-module child streams of `rng`.
Stack build_stack(const StackConfig& config, const SeededRng& rng);

/// z^m = g_enc^m(grad_block(z^{m-1})); module 0 receives raw data.
Tensor encode(Graph& g, const EncoderModule& module, const Tensor& z_prev);

enum class Isolation { blocked, unblocked };

/// Outputs of every module, in depth order; back() is z^M.
std::vector<Tensor> stack_forward(Graph& g, const Stack& stack, const Tensor& x,
                                  Isolation isolation = Isolation::blocked);

/// One row of a shape audit over a chain of 1D convolutions.
struct ShapeAuditRow {
  std::size_t layer = 0;
  std::size_t kernel = 0, stride = 0, pad = 0;
  std::size_t length_in = 0;
  std::size_t computed = 0;
  std::optional<std::size_t> declared;
  bool consistent() const { return !declared || *declared == computed; }
};

struct ConvStep {
  std::size_t kernel, stride, pad;
  std::optional<std::size_t> declared_out;
};

/// Applies conv_out_len layer by layer. Rows whose declared length disagrees
/// with the formula are reported, and the chain continues from the computed
/// value.
std::vector<ShapeAuditRow> audit_conv_chain(std::size_t input_length,
                                            const std::vector<ConvStep>& steps);

/// Five-conv layout of the reference audio encoder (kernel, stride, pad,
/// declared output length) on 20480-sample inputs.
std::vector<ConvStep> reference_audio_conv_steps();
constexpr std::size_t kReferenceAudioInputLength = 20480;

}  // namespace gim
