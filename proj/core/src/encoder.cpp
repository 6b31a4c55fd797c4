#include "moma/encoder.hpp"

#include "moma/errors.hpp"
#include "moma/rng.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace moma {

const char * to_string(Activation a) {
    return a == Activation::tanh ? "tanh" : "relu";
}

const char * to_string(ModuleKind k) {
    return k == ModuleKind::full ? "full" : "adapter";
}

Activation activation_from_string(const std::string & s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw InvalidInputError("unknown activation: " + s);
}

ModuleKind module_kind_from_string(const std::string & s) {
    if (s == "full") return ModuleKind::full;
    if (s == "adapter") return ModuleKind::adapter;
    throw InvalidInputError("unknown module kind: " + s);
}

std::size_t EncoderConfig::effective_bottleneck() const {
    return adapter_bottleneck > 0 ? adapter_bottleneck : (embed_dim + 1) / 2;
}

void EncoderConfig::validate() const {
    if (input_dim < 1) {
        throw InvalidInputError("encoder config: input_dim must be >= 1");
    }
    if (hidden_dims.empty()) {
        throw InvalidInputError("encoder config: at least one hidden layer required");
    }
    for (std::size_t w : hidden_dims) {
        if (w < 1) {
            throw InvalidInputError("encoder config: zero-width hidden layer");
        }
    }
    if (embed_dim < 1) {
        throw InvalidInputError("encoder config: embed_dim must be >= 1");
    }
    const std::size_t b = effective_bottleneck();
    for (std::size_t w : hidden_dims) {
        if (b > w) {
            throw InvalidInputError("encoder config: adapter bottleneck exceeds layer width");
        }
    }
    if (b > embed_dim) {
        throw InvalidInputError("encoder config: adapter bottleneck exceeds embed_dim");
    }
}

std::string EncoderConfig::canonical_string() const {
    std::ostringstream os;
    os << "in=" << input_dim << ";hidden=";
    for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
        if (i) os << ',';
        os << hidden_dims[i];
    }
    os << ";embed=" << embed_dim
       << ";act=" << to_string(activation)
       << ";bottleneck=" << effective_bottleneck()
       << ";order=layer-major.weights-first.row-major.v1";
    return os.str();
}

Digest32 EncoderConfig::fingerprint() const {
    return sha256(canonical_string());
}

std::string EncoderConfig::fingerprint_hex() const {
    return hex_encode(fingerprint());
}

namespace {

// layer widths in forward order: hidden..., embed
std::vector<std::size_t> layer_widths(const EncoderConfig & cfg) {
    std::vector<std::size_t> w = cfg.hidden_dims;
    w.push_back(cfg.embed_dim);
    return w;
}

struct LinearSpec {
    std::size_t in = 0, out = 0;
    std::size_t w_off = 0, b_off = 0; // into the full-module param vector
};

std::vector<LinearSpec> full_layout(const EncoderConfig & cfg) {
    std::vector<LinearSpec> specs;
    std::size_t off = 0, prev = cfg.input_dim;
    for (std::size_t width : layer_widths(cfg)) {
        LinearSpec s;
        s.in = prev;
        s.out = width;
        s.w_off = off;
        s.b_off = off + s.in * s.out;
        off = s.b_off + s.out;
        specs.push_back(s);
        prev = width;
    }
    return specs;
}

struct AdapterSpec {
    std::size_t width = 0, bneck = 0;
    std::size_t dw = 0, db = 0, uw = 0, ub = 0; // into the adapter param vector
};

std::vector<AdapterSpec> adapter_layout(const EncoderConfig & cfg) {
    std::vector<AdapterSpec> specs;
    const std::size_t b = cfg.effective_bottleneck();
    std::size_t off = 0;
    for (std::size_t width : layer_widths(cfg)) {
        AdapterSpec s;
        s.width = width;
        s.bneck = b;
        s.dw = off;                    // b x width, row-major
        s.db = s.dw + b * width;
        s.uw = s.db + b;               // width x b, row-major
        s.ub = s.uw + width * b;
        off = s.ub + width;
        specs.push_back(s);
    }
    return specs;
}

double activate(Activation a, double x) {
    return a == Activation::tanh ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}

// derivative given pre-activation z and activation value s
double activate_grad(Activation a, double z, double s) {
    return a == Activation::tanh ? 1.0 - s * s : (z > 0.0 ? 1.0 : 0.0);
}

// y = W x + b with W row-major (out x in)
void linear_forward(const double * w, const double * b, const Vec64 & x, Vec64 & y,
                    std::size_t in, std::size_t out) {
    y.resize(out);
    for (std::size_t r = 0; r < out; ++r) {
        double s = b ? b[r] : 0.0;
        const double * row = w + r * in;
        for (std::size_t c = 0; c < in; ++c) {
            s += row[c] * x[c];
        }
        y[r] = s;
    }
}

void check_module_shape(const Module & m) {
    m.config.validate();
    const std::size_t expect = m.kind == ModuleKind::full ? full_param_count(m.config)
                                                          : adapter_param_count(m.config);
    if (m.params.size() != expect) {
        throw InvalidModuleError("module params length " + std::to_string(m.params.size()) +
                                 ", layout requires " + std::to_string(expect));
    }
}

const Module & resolve_backbone(const Module & module, const Module * backbone) {
    if (module.kind == ModuleKind::full) {
        return module;
    }
    if (backbone == nullptr) {
        throw MissingBackboneError("adapter module requires a backbone");
    }
    if (backbone->kind != ModuleKind::full) {
        throw ConfigMismatchError("backbone must be a full module");
    }
    if (backbone->fingerprint() != module.fingerprint()) {
        throw ConfigMismatchError("backbone fingerprint does not match module config");
    }
    return *backbone;
}

// Per-sample forward pass keeping everything backward needs.
struct Trace {
    std::vector<Vec64> inputs;    // input to each linear layer (post adapter of previous)
    std::vector<Vec64> pre;       // pre-activation per layer (embed layer: the linear output)
    std::vector<Vec64> act;       // activation output per layer (embed layer: same as pre)
    // adapter internals per layer (only for adapter modules)
    std::vector<Vec64> ad_z;      // Down h + db
    std::vector<Vec64> ad_s;      // act(ad_z)
    std::vector<Vec64> ad_in;     // h entering the adapter
    Vec64 embedding;
};

Trace run_forward(const Module & module, const Module * backbone_arg, const Vec64 & x) {
    check_module_shape(module);
    const Module & bb = resolve_backbone(module, backbone_arg);
    if (&bb != &module) {
        check_module_shape(bb);
    }
    const EncoderConfig & cfg = module.config;
    if (x.size() != cfg.input_dim) {
        throw ShapeMismatchError("input length " + std::to_string(x.size()) +
                                 ", encoder expects " + std::to_string(cfg.input_dim));
    }

    const bool adapted = module.kind == ModuleKind::adapter;
    const auto lin = full_layout(cfg);
    const auto ad = adapted ? adapter_layout(cfg) : std::vector<AdapterSpec>{};
    const double * theta = bb.params.data();
    const double * delta = adapted ? module.params.data() : nullptr;
    const std::size_t n_layers = lin.size();

    Trace t;
    t.inputs.resize(n_layers);
    t.pre.resize(n_layers);
    t.act.resize(n_layers);
    if (adapted) {
        t.ad_z.resize(n_layers);
        t.ad_s.resize(n_layers);
        t.ad_in.resize(n_layers);
    }

    Vec64 h = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const LinearSpec & s = lin[l];
        t.inputs[l] = h;
        linear_forward(theta + s.w_off, theta + s.b_off, h, t.pre[l], s.in, s.out);
        const bool is_embed = l + 1 == n_layers;
        if (is_embed) {
            t.act[l] = t.pre[l]; // embedding layer is linear
        } else {
            t.act[l].resize(s.out);
            for (std::size_t r = 0; r < s.out; ++r) {
                t.act[l][r] = activate(cfg.activation, t.pre[l][r]);
            }
        }
        h = t.act[l];
        if (adapted) {
            const AdapterSpec & a = ad[l];
            t.ad_in[l] = h;
            linear_forward(delta + a.dw, delta + a.db, h, t.ad_z[l], a.width, a.bneck);
            t.ad_s[l].resize(a.bneck);
            for (std::size_t r = 0; r < a.bneck; ++r) {
                t.ad_s[l][r] = activate(cfg.activation, t.ad_z[l][r]);
            }
            Vec64 up;
            linear_forward(delta + a.uw, delta + a.ub, t.ad_s[l], up, a.bneck, a.width);
            for (std::size_t r = 0; r < a.width; ++r) {
                h[r] += up[r];
            }
        }
    }
    t.embedding = h;
    return t;
}

} // namespace

std::size_t full_param_count(const EncoderConfig & cfg) {
    std::size_t total = 0, prev = cfg.input_dim;
    for (std::size_t width : layer_widths(cfg)) {
        total += prev * width + width;
        prev = width;
    }
    return total;
}

std::size_t adapter_param_count(const EncoderConfig & cfg) {
    const std::size_t b = cfg.effective_bottleneck();
    std::size_t total = 0;
    for (std::size_t width : layer_widths(cfg)) {
        total += 2 * width * b + b + width;
    }
    return total;
}

Module init_backbone(const EncoderConfig & cfg, std::uint64_t seed) {
    cfg.validate();
    Module m;
    m.kind = ModuleKind::full;
    m.config = cfg;
    m.params.assign(full_param_count(cfg), 0.0);
    m.meta.created_from_seed = seed;

    Rng rng(seed);
    for (const LinearSpec & s : full_layout(cfg)) {
        const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
        for (std::size_t i = 0; i < s.in * s.out; ++i) {
            m.params[s.w_off + i] = rng.uniform(-limit, limit);
        }
        // biases stay zero
    }
    return m;
}

Module attach_adapters(const Module & backbone, const EncoderConfig & cfg, std::uint64_t seed) {
    cfg.validate();
    if (backbone.kind != ModuleKind::full) {
        throw ConfigMismatchError("attach_adapters: backbone must be a full module");
    }
    if (backbone.fingerprint() != cfg.fingerprint()) {
        throw ConfigMismatchError("attach_adapters: backbone fingerprint does not match config");
    }

    Module m;
    m.kind = ModuleKind::adapter;
    m.config = cfg;
    m.params.assign(adapter_param_count(cfg), 0.0);
    m.meta.created_from_seed = seed;

    Rng rng(seed);
    for (const AdapterSpec & a : adapter_layout(cfg)) {
        for (std::size_t i = 0; i < a.bneck * a.width; ++i) {
            m.params[a.dw + i] = 0.02 * rng.normal();
        }
        // down-bias, up-weights and up-bias stay exactly zero: the adapted
        // forward pass starts out identical to the frozen backbone
    }
    return m;
}

Vec64 forward_embed(const Module & module, const Module * backbone, const Vec64 & x) {
    return run_forward(module, backbone, x).embedding;
}

double forward_predict(const Module & module, const Module * backbone,
                       const Head & head, const Vec64 & x) {
    Vec64 e = forward_embed(module, backbone, x);
    if (head.weights.size() != e.size()) {
        throw ShapeMismatchError("head length " + std::to_string(head.weights.size()) +
                                 " vs embedding " + std::to_string(e.size()));
    }
    return dot(head.weights, e) + head.bias;
}

GradientResult gradient(const Module & module, const Module * backbone,
                        const Head & head, const Vec64 & x, double y) {
    const EncoderConfig & cfg = module.config;
    Trace t = run_forward(module, backbone, x);
    if (head.weights.size() != t.embedding.size()) {
        throw ShapeMismatchError("head length does not match embedding");
    }

    GradientResult g;
    g.param_grad.assign(module.params.size(), 0.0);
    g.head_weight_grad.assign(head.weights.size(), 0.0);
    g.prediction = dot(head.weights, t.embedding) + head.bias;

    const double dpred = 2.0 * (g.prediction - y);
    g.head_bias_grad = dpred;
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
        g.head_weight_grad[i] = dpred * t.embedding[i];
    }

    const bool adapted = module.kind == ModuleKind::adapter;
    const Module & bb = resolve_backbone(module, backbone);
    const auto lin = full_layout(cfg);
    const auto ad = adapted ? adapter_layout(cfg) : std::vector<AdapterSpec>{};
    const double * theta = bb.params.data();
    const double * delta = adapted ? module.params.data() : nullptr;

    // d(loss)/d(embedding)
    Vec64 dh(t.embedding.size());
    for (std::size_t i = 0; i < dh.size(); ++i) {
        dh[i] = dpred * head.weights[i];
    }

    for (std::size_t l = lin.size(); l-- > 0;) {
        const LinearSpec & s = lin[l];

        if (adapted) {
            // adapter block: out = h + Up(act(Down h + db)) + ub
            const AdapterSpec & a = ad[l];
            const Vec64 & h_in = t.ad_in[l];
            const Vec64 & z = t.ad_z[l];
            const Vec64 & sv = t.ad_s[l];

            Vec64 ds(a.bneck, 0.0);
            for (std::size_t r = 0; r < a.width; ++r) {
                const double d_out = dh[r];
                g.param_grad[a.ub + r] += d_out;
                const double * up_row = delta + a.uw + r * a.bneck;
                double * up_grad_row = g.param_grad.data() + a.uw + r * a.bneck;
                for (std::size_t c = 0; c < a.bneck; ++c) {
                    up_grad_row[c] += d_out * sv[c];
                    ds[c] += up_row[c] * d_out;
                }
            }
            Vec64 dh_through(a.width, 0.0);
            for (std::size_t r = 0; r < a.bneck; ++r) {
                const double dz = ds[r] * activate_grad(cfg.activation, z[r], sv[r]);
                g.param_grad[a.db + r] += dz;
                const double * down_row = delta + a.dw + r * a.width;
                double * down_grad_row = g.param_grad.data() + a.dw + r * a.width;
                for (std::size_t c = 0; c < a.width; ++c) {
                    down_grad_row[c] += dz * h_in[c];
                    dh_through[c] += down_row[c] * dz;
                }
            }
            for (std::size_t r = 0; r < a.width; ++r) {
                dh[r] += dh_through[r]; // identity path plus adapter path
            }
        }

        // activation (skip on the linear embedding layer)
        const bool is_embed = l + 1 == lin.size();
        Vec64 da(s.out);
        if (is_embed) {
            da = dh;
        } else {
            for (std::size_t r = 0; r < s.out; ++r) {
                da[r] = dh[r] * activate_grad(cfg.activation, t.pre[l][r], t.act[l][r]);
            }
        }

        // linear layer; weight gradients only collected for full modules
        const Vec64 & h_prev = t.inputs[l];
        Vec64 dprev(s.in, 0.0);
        for (std::size_t r = 0; r < s.out; ++r) {
            const double * w_row = theta + s.w_off + r * s.in;
            for (std::size_t c = 0; c < s.in; ++c) {
                dprev[c] += w_row[c] * da[r];
            }
        }
        if (!adapted) {
            for (std::size_t r = 0; r < s.out; ++r) {
                double * w_grad_row = g.param_grad.data() + s.w_off + r * s.in;
                for (std::size_t c = 0; c < s.in; ++c) {
                    w_grad_row[c] += da[r] * h_prev[c];
                }
                g.param_grad[s.b_off + r] += da[r];
            }
        }
        dh = std::move(dprev);
    }
    return g;
}

} // namespace moma
