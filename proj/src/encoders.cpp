// SPDX-License-Identifier: Apache-2.0
#include "gim/encoders.hpp"

#include <cmath>
#include <limits>

#include "gim/errors.hpp"
#include "gim/ops.hpp"

namespace gim {
namespace {

constexpr std::size_t kNoSlot = std::numeric_limits<std::size_t>::max();

std::string where(std::size_t module, std::size_t layer) {
  return "module " + std::to_string(module) + " layer " + std::to_string(layer);
}

}  // namespace

std::string to_string(LayerSpec::Kind kind) {
  switch (kind) {
    case LayerSpec::Kind::conv1d: return "conv1d";
    case LayerSpec::Kind::conv2d: return "conv2d";
    case LayerSpec::Kind::relu: return "relu";
    case LayerSpec::Kind::mean_pool: return "mean_pool";
  }
  return "?";
}

std::vector<ModuleGeometry> check_stack(const StackConfig& config) {
  if (config.modules.empty()) throw ShapeError("stack needs at least one module");
  const std::size_t spatial = config.input == InputKind::sequence ? 1 : 2;
  if (config.input_extent.size() != spatial)
    throw ShapeError("input extent must have " + std::to_string(spatial) + " entries");
  std::size_t channels = config.input_channels;
  std::vector<std::size_t> extent = config.input_extent;
  std::vector<ModuleGeometry> out;
  for (std::size_t m = 0; m < config.modules.size(); ++m) {
    const auto& layers = config.modules[m].layers;
    if (layers.empty()) throw ShapeError("module " + std::to_string(m) + " has no layers");
    ModuleGeometry geo;
    geo.channels_in = channels;
    geo.extent_in = extent;
    bool has_conv = false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const LayerSpec& layer = layers[l];
      if (layer.kind == LayerSpec::Kind::conv1d && config.input != InputKind::sequence)
        throw ShapeError(where(m, l) + ": conv1d in a patch-grid stack");
      if (layer.kind == LayerSpec::Kind::conv2d && config.input != InputKind::patch_grid)
        throw ShapeError(where(m, l) + ": conv2d in a sequence stack");
      if (layer.is_conv()) {
        has_conv = true;
        if (layer.channels_in != channels) {
          const std::string site = (l == 0 && m > 0)
                                       ? "module boundary " + std::to_string(m - 1) + " -> " +
                                             std::to_string(m)
                                       : where(m, l);
          throw ShapeError(site + ": expects " + std::to_string(layer.channels_in) +
                           " input channels but receives " + std::to_string(channels));
        }
        if (layer.channels_out == 0) throw ShapeError(where(m, l) + ": zero output channels");
        for (std::size_t a = 0; a < spatial; ++a) {
          if (extent[a] + 2 * layer.pad[a] < layer.kernel[a] || layer.stride[a] == 0 || layer.kernel[a] == 0)
            throw ShapeError(where(m, l) + ": kernel " + std::to_string(layer.kernel[a]) +
                             " does not fit extent " + std::to_string(extent[a]) + " with pad " +
                             std::to_string(layer.pad[a]));
          extent[a] = ops::conv_out_len(extent[a], layer.kernel[a], layer.stride[a], layer.pad[a]);
        }
        channels = layer.channels_out;
      } else if (layer.kind == LayerSpec::Kind::mean_pool) {
        for (std::size_t a = 0; a < spatial; ++a) {
          if (layer.kernel[a] == 0 || extent[a] % layer.kernel[a] != 0)
            throw ShapeError(where(m, l) + ": pooling window does not tile extent " +
                             std::to_string(extent[a]));
          extent[a] /= layer.kernel[a];
        }
      }
    }
    if (!has_conv) throw ShapeError("module " + std::to_string(m) + " has no convolution");
    geo.channels_out = channels;
    geo.extent_out = extent;
    out.push_back(std::move(geo));
  }
  return out;
}

EncoderModule::EncoderModule(std::size_t index, ModuleSpec spec, InputKind input, SeededRng& rng)
    : index_(index), spec_(std::move(spec)), input_(input) {
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    const LayerSpec& layer = spec_.layers[l];
    if (!layer.is_conv()) {
      param_slot_.push_back(kNoSlot);
      continue;
    }
    const std::size_t taps = layer.kind == LayerSpec::Kind::conv2d ? layer.kernel[0] * layer.kernel[1]
                                                                    : layer.kernel[0];
    const double fan_in = static_cast<double>(layer.channels_in * taps);
    const double fan_out = static_cast<double>(layer.channels_out * taps);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Shape wshape{layer.channels_out, layer.channels_in, layer.kernel[0]};
    if (layer.kind == LayerSpec::Kind::conv2d) wshape.push_back(layer.kernel[1]);
    std::vector<double> w(numel(wshape));
    for (double& v : w) v = rng.uniform(-a, a);
    const std::string prefix = "enc" + std::to_string(index_) + ".layer" + std::to_string(l);
    param_slot_.push_back(params_.size());
    params_.push_back(Tensor::parameter(wshape, std::move(w), prefix + ".weight"));
    params_.push_back(Tensor::parameter(Shape{layer.channels_out},
                                        std::vector<double>(layer.channels_out, 0.0),
                                        prefix + ".bias"));
    out_dim_ = layer.channels_out;
  }
}

void EncoderModule::set_trainable(bool on) {
  for (Tensor& p : params_) p.set_requires_grad(on);
}

Tensor EncoderModule::apply_layers(Graph& g, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    const LayerSpec& layer = spec_.layers[l];
    switch (layer.kind) {
      case LayerSpec::Kind::conv1d: {
        const std::size_t s = param_slot_[l];
        h = ops::conv1d(g, h, params_[s], params_[s + 1], layer.stride[0], layer.pad[0]);
        break;
      }
      case LayerSpec::Kind::conv2d: {
        const std::size_t s = param_slot_[l];
        h = ops::conv2d(g, h, params_[s], params_[s + 1], layer.stride, layer.pad);
        break;
      }
      case LayerSpec::Kind::relu:
        h = ops::relu(g, h);
        break;
      case LayerSpec::Kind::mean_pool: {
        const std::size_t n = input_ == InputKind::sequence ? 1 : 2;
        h = ops::avg_pool(g, h, std::span<const std::size_t>(layer.kernel.data(), n));
        break;
      }
    }
  }
  return h;
}

Stack build_stack(const StackConfig& config, const SeededRng& rng) {
  check_stack(config);
  Stack stack;
  stack.reserve(config.modules.size());
  for (std::size_t m = 0; m < config.modules.size(); ++m) {
    SeededRng init = rng.derive(Stream::init, m);
    stack.emplace_back(m, config.modules[m], config.input, init);
  }
  return stack;
}

Tensor encode(Graph& g, const EncoderModule& module, const Tensor& z_prev) {
  if (module.index() == 0) return module.apply_layers(g, z_prev);
  return module.apply_layers(g, ops::grad_block(g, z_prev));
}

std::vector<Tensor> stack_forward(Graph& g, const Stack& stack, const Tensor& x,
                                  Isolation isolation) {
  std::vector<Tensor> outs;
  outs.reserve(stack.size());
  Tensor z = x;
  for (const EncoderModule& module : stack) {
    z = isolation == Isolation::blocked ? encode(g, module, z) : module.apply_layers(g, z);
    outs.push_back(z);
  }
  return outs;
}

std::vector<ShapeAuditRow> audit_conv_chain(std::size_t input_length,
                                            const std::vector<ConvStep>& steps) {
  std::vector<ShapeAuditRow> rows;
  std::size_t length = input_length;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    ShapeAuditRow row;
    row.layer = i + 1;
    row.kernel = steps[i].kernel;
    row.stride = steps[i].stride;
    row.pad = steps[i].pad;
    row.length_in = length;
    row.computed = ops::conv_out_len(length, row.kernel, row.stride, row.pad);
    row.declared = steps[i].declared_out;
    rows.push_back(row);
    length = row.computed;
  }
  return rows;
}

std::vector<ConvStep> reference_audio_conv_steps() {
  return {{10, 5, 2, 4095}, {8, 4, 2, 1023}, {4, 2, 2, 512}, {4, 2, 2, 257}, {1, 2, 1, 128}};
}

}  // namespace gim
