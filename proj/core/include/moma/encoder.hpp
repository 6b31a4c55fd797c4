#pragma once

#include "moma/numerics.hpp"
#include "moma/sha256.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace moma {

enum class Activation { tanh, relu };
enum class ModuleKind { full, adapter };

const char * to_string(Activation a);
const char * to_string(ModuleKind k);
Activation activation_from_string(const std::string & s);
ModuleKind module_kind_from_string(const std::string & s);

// Feed-forward encoder: input -> act(hidden_0) -> ... -> act(hidden_last)
// -> linear embedding. Adapter variants insert a residual bottleneck block
// h <- h + Up(act(Down(h))) after every layer, embedding layer included.
struct EncoderConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t embed_dim = 0;
    Activation activation = Activation::tanh;
    std::size_t adapter_bottleneck = 0; // 0 selects the default, ceil(embed_dim / 2)

    std::size_t effective_bottleneck() const;
    void validate() const;

    // Identifies the architecture plus the parameter flattening order;
    // modules may only be composed when fingerprints match.
    Digest32 fingerprint() const;
    std::string fingerprint_hex() const;
    std::string canonical_string() const;

    bool operator==(const EncoderConfig &) const = default;
};

struct ModuleMeta {
    std::string id;          // unique within a hub; empty until registered
    std::string task_name;
    std::uint64_t created_from_seed = 0;
    double train_mae = 0.0;
    std::string notes;
};

// A flat parameter vector in the canonical flattening order:
//   full:    per layer, weights (row-major) then biases
//   adapter: per adapted layer, down-weights, down-bias, up-weights, up-bias
struct Module {
    ModuleKind kind = ModuleKind::full;
    EncoderConfig config;
    Vec64 params;
    ModuleMeta meta;

    Digest32 fingerprint() const { return config.fingerprint(); }
    std::string fingerprint_hex() const { return config.fingerprint_hex(); }
};

// Linear prediction head over the embedding.
struct Head {
    Vec64 weights;
    double bias = 0.0;
};

std::size_t full_param_count(const EncoderConfig & cfg);
std::size_t adapter_param_count(const EncoderConfig & cfg);

// Deterministic Glorot-uniform weights, zero biases.
Module init_backbone(const EncoderConfig & cfg, std::uint64_t seed);

// Fresh adapter module over a frozen backbone. Down-projections are small
// normal draws (sigma 0.02); up-projections and all adapter biases start at
// exactly zero, so the adapted forward pass equals the bare backbone's.
Module attach_adapters(const Module & backbone, const EncoderConfig & cfg, std::uint64_t seed);

// Embedding of one input. For adapter modules `backbone` must point at the
// matching frozen full module; for full modules it is ignored.
Vec64 forward_embed(const Module & module, const Module * backbone, const Vec64 & x);

double forward_predict(const Module & module, const Module * backbone,
                       const Head & head, const Vec64 & x);

struct GradientResult {
    Vec64 param_grad;       // same layout/length as the module's trainable params
    Vec64 head_weight_grad;
    double head_bias_grad = 0.0;
    double prediction = 0.0;
};

// Exact gradients of (forward_predict(x) - y)^2. Full modules return
// gradients for every backbone parameter, adapter modules for adapter
// parameters only.
GradientResult gradient(const Module & module, const Module * backbone,
                        const Head & head, const Vec64 & x, double y);

} // namespace moma
