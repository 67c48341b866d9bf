#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sipa/common.hpp"

namespace sipa {

using ordered_json = nlohmann::ordered_json;

enum class Activation { none, relu, swish, sigmoid };

/// How a block group expands into primitive layers.
///  - mbconv: inverted bottleneck with optional squeeze-excite (expansion 1x1,
///    depthwise kxk, SE, projection 1x1), swish activations.
///  - basic: pre-activation residual pair of full kxk convolutions with a 1x1
///    projection shortcut when the shape changes, relu activations.
enum class BlockKind { mbconv, basic };

/// One repeated block group: (k, s, e, i, o, se) plus a repeat count.
/// Repetitions 2..r use stride 1 and in_channels = o.
struct BlockArgs {
    BlockKind kind = BlockKind::mbconv;
    int k = 3;        // spatial kernel size, odd
    int s = 1;        // stride of the first repetition, 1 or 2
    double e = 1.0;   // channel expansion ratio, >= 1
    int i = 0;        // input channels of the first repetition
    int o = 0;        // output channels
    double se = 0.0;  // squeeze-excite ratio in [0, 1], 0 disables SE
    int r = 1;        // repetitions, >= 1

    friend bool operator==(const BlockArgs&, const BlockArgs&) = default;
};

/// Stem / head primitive convolution description.
struct ConvStage {
    int k = 3;
    int s = 1;
    int o = 0;
    bool bias = false;
    bool bn = true;
    Activation act = Activation::swish;

    friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

/// Auxiliary early-exit classifier attached after a block group.
struct ExitSpec {
    int after_block = 0;            // block group index, strictly before the last
    std::vector<BlockArgs> blocks;  // exit module body; first block's i chains from the attach point
    int classifier = 0;             // class count; 0 inherits the main classifier

    friend bool operator==(const ExitSpec&, const ExitSpec&) = default;
};

/// Compound scaling coefficients: depth alpha^phi, width beta^phi, resolution gamma^phi.
struct ScalingCoefficients {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    double phi = 0.0;
};

struct QuantRule {
    std::string pattern;  // glob over tensor names
    int bits = 32;        // 32 or 16

    friend bool operator==(const QuantRule&, const QuantRule&) = default;
};

/// Declarative architecture description. See parse_model_spec for the
/// document format.
struct ModelSpec {
    std::string name;
    int input_h = 32, input_w = 32, input_c = 3;
    ConvStage stem;
    std::vector<BlockArgs> blocks;
    std::optional<ConvStage> head;
    int classifier = 2;  // class count K >= 2
    std::vector<ExitSpec> exits;
    std::vector<QuantRule> quantization;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_block(const BlockArgs& b, const std::string& where) {
    if (b.k < 1 || b.k % 2 == 0) throw ValidationError(where + ": kernel must be odd and >= 1");
    if (b.s != 1 && b.s != 2) throw ValidationError(where + ": stride must be 1 or 2");
    if (b.e < 1.0) throw ValidationError(where + ": expansion ratio must be >= 1");
    if (b.i < 1 || b.o < 1) throw ValidationError(where + ": channel counts must be >= 1");
    if (b.se < 0.0 || b.se > 1.0) throw ValidationError(where + ": se ratio must be in [0, 1]");
    if (b.r < 1) throw ValidationError(where + ": repeats must be >= 1");
}

/// Checks every ModelSpec invariant; throws ValidationError naming the first violation.
inline void validate(const ModelSpec& spec) {
    if (spec.input_h < 1 || spec.input_w < 1 || spec.input_c < 1)
        throw ValidationError("input dimensions must be >= 1");
    if (spec.stem.o < 1) throw ValidationError("stem output channels must be >= 1");
    if (spec.stem.k < 1 || spec.stem.k % 2 == 0) throw ValidationError("stem: kernel must be odd and >= 1");
    if (spec.classifier < 2) throw ValidationError("classifier class count must be >= 2");
    if (spec.blocks.empty()) throw ValidationError("model needs at least one block group");

    for (size_t j = 0; j < spec.blocks.size(); ++j)
        validate_block(spec.blocks[j], "blocks[" + std::to_string(j) + "]");

    if (spec.blocks[0].i != spec.stem.o)
        throw ValidationError("channel chaining: blocks[0].i must equal stem output channels");
    for (size_t j = 1; j < spec.blocks.size(); ++j) {
        if (spec.blocks[j].i != spec.blocks[j - 1].o)
            throw ValidationError("channel chaining: blocks[" + std::to_string(j) + "].i must equal blocks[" +
                                  std::to_string(j - 1) + "].o");
    }

    // Spatial dimensions stay >= 1 under ceil-division stride arithmetic, but
    // reject degenerate inputs smaller than one pixel per remaining stride.
    for (const auto& ex : spec.exits) {
        if (ex.after_block < 0 || ex.after_block + 1 >= static_cast<int>(spec.blocks.size()))
            throw ValidationError("exit attach index must be a block index strictly before the last block");
        if (ex.blocks.empty()) throw ValidationError("exit module needs at least one block");
        for (size_t j = 0; j < ex.blocks.size(); ++j)
            validate_block(ex.blocks[j], "exit blocks[" + std::to_string(j) + "]");
        if (ex.blocks[0].i != spec.blocks[static_cast<size_t>(ex.after_block)].o)
            throw ValidationError("exit module input channels must chain from the attach block's output");
        for (size_t j = 1; j < ex.blocks.size(); ++j)
            if (ex.blocks[j].i != ex.blocks[j - 1].o)
                throw ValidationError("exit module channel chaining broken at block " + std::to_string(j));
        if (ex.classifier != 0 && ex.classifier < 2)
            throw ValidationError("exit classifier class count must be >= 2");
    }
    for (const auto& q : spec.quantization)
        if (q.bits != 32 && q.bits != 16) throw ValidationError("quantization bits must be 32 or 16");
}

// ---------------------------------------------------------------------------
// Document format (strict JSON; unknown keys rejected)

namespace detail {

inline Activation parse_activation(const std::string& s) {
    if (s == "none") return Activation::none;
    if (s == "relu") return Activation::relu;
    if (s == "swish") return Activation::swish;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ValidationError("unknown activation '" + s + "'");
}

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::swish: return "swish";
        case Activation::sigmoid: return "sigmoid";
    }
    return "none";
}

inline void reject_unknown_keys(const ordered_json& obj, std::initializer_list<const char*> known,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw ValidationError(where + ": unknown key '" + it.key() + "'");
    }
}

inline ConvStage conv_stage_from_json(const ordered_json& j, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    reject_unknown_keys(j, {"k", "s", "o", "bias", "bn", "act"}, where);
    ConvStage cs;
    cs.k = j.value("k", 3);
    cs.s = j.value("s", 1);
    cs.o = j.value("o", 0);
    cs.bias = j.value("bias", false);
    cs.bn = j.value("bn", true);
    cs.act = parse_activation(j.value("act", std::string("swish")));
    return cs;
}

inline ordered_json conv_stage_to_json(const ConvStage& cs) {
    ordered_json j;
    j["k"] = cs.k;
    j["s"] = cs.s;
    j["o"] = cs.o;
    j["bias"] = cs.bias;
    j["bn"] = cs.bn;
    j["act"] = activation_name(cs.act);
    return j;
}

inline BlockArgs block_from_json(const ordered_json& j, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    reject_unknown_keys(j, {"type", "k", "s", "e", "i", "o", "se", "r"}, where);
    BlockArgs b;
    const std::string type = j.value("type", std::string("mbconv"));
    if (type == "mbconv")
        b.kind = BlockKind::mbconv;
    else if (type == "basic")
        b.kind = BlockKind::basic;
    else
        throw ValidationError(where + ": unknown block type '" + type + "'");
    if (!j.contains("k") || !j.contains("s") || !j.contains("i") || !j.contains("o"))
        throw ValidationError(where + ": block entries require keys k, s, i, o");
    b.k = j.at("k").get<int>();
    b.s = j.at("s").get<int>();
    b.e = j.value("e", 1.0);
    b.i = j.at("i").get<int>();
    b.o = j.at("o").get<int>();
    b.se = j.value("se", 0.0);
    b.r = j.value("r", 1);
    return b;
}

inline ordered_json block_to_json(const BlockArgs& b) {
    ordered_json j;
    if (b.kind == BlockKind::basic) j["type"] = "basic";
    j["k"] = b.k;
    j["s"] = b.s;
    j["e"] = b.e;
    j["i"] = b.i;
    j["o"] = b.o;
    j["se"] = b.se;
    j["r"] = b.r;
    return j;
}

}  // namespace detail

/// Parses a model-spec document. The format is UTF-8 JSON with top-level keys
/// `name`, `input`, `stem`, `blocks`, `head`, `classifier`, `exits`,
/// `quantization`; block entries carry `k,s,e,i,o,se,r` (plus an optional
/// `type`: "mbconv" | "basic"). Unknown keys anywhere are a validation error.
inline ModelSpec parse_model_spec(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("model spec: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("model spec: top level must be an object");
    detail::reject_unknown_keys(doc, {"name", "input", "stem", "blocks", "head", "classifier", "exits", "quantization"},
                                "model spec");
    for (const char* req : {"name", "input", "stem", "blocks", "classifier"})
        if (!doc.contains(req)) throw ValidationError(std::string("model spec: missing required key '") + req + "'");

    ModelSpec spec;
    spec.name = doc.at("name").get<std::string>();
    const auto& in = doc.at("input");
    if (!in.is_array() || in.size() != 3) throw ValidationError("model spec: input must be [height, width, channels]");
    spec.input_h = in[0].get<int>();
    spec.input_w = in[1].get<int>();
    spec.input_c = in[2].get<int>();
    spec.stem = detail::conv_stage_from_json(doc.at("stem"), "stem");
    if (!doc.at("blocks").is_array()) throw ValidationError("model spec: blocks must be an array");
    for (size_t j = 0; j < doc.at("blocks").size(); ++j)
        spec.blocks.push_back(detail::block_from_json(doc.at("blocks")[j], "blocks[" + std::to_string(j) + "]"));
    if (doc.contains("head") && !doc.at("head").is_null())
        spec.head = detail::conv_stage_from_json(doc.at("head"), "head");
    spec.classifier = doc.at("classifier").get<int>();
    if (doc.contains("exits")) {
        if (!doc.at("exits").is_array()) throw ValidationError("model spec: exits must be an array");
        for (size_t j = 0; j < doc.at("exits").size(); ++j) {
            const auto& je = doc.at("exits")[j];
            const std::string where = "exits[" + std::to_string(j) + "]";
            detail::reject_unknown_keys(je, {"after_block", "blocks", "pool", "classifier"}, where);
            ExitSpec ex;
            ex.after_block = je.at("after_block").get<int>();
            for (size_t m = 0; m < je.at("blocks").size(); ++m)
                ex.blocks.push_back(detail::block_from_json(je.at("blocks")[m], where + ".blocks"));
            if (je.contains("pool") && je.at("pool").get<std::string>() != "gavg")
                throw ValidationError(where + ": only 'gavg' pooling is supported");
            ex.classifier = je.value("classifier", 0);
            spec.exits.push_back(std::move(ex));
        }
    }
    if (doc.contains("quantization")) {
        if (!doc.at("quantization").is_object()) throw ValidationError("model spec: quantization must be an object");
        for (auto it = doc.at("quantization").begin(); it != doc.at("quantization").end(); ++it)
            spec.quantization.push_back({it.key(), it.value().get<int>()});
    }
    validate(spec);
    return spec;
}

/// Inverse of parse_model_spec; emits the same strict document format.
inline std::string serialize_model_spec(const ModelSpec& spec) {
    ordered_json doc;
    doc["name"] = spec.name;
    doc["input"] = {spec.input_h, spec.input_w, spec.input_c};
    doc["stem"] = detail::conv_stage_to_json(spec.stem);
    doc["blocks"] = ordered_json::array();
    for (const auto& b : spec.blocks) doc["blocks"].push_back(detail::block_to_json(b));
    if (spec.head) doc["head"] = detail::conv_stage_to_json(*spec.head);
    doc["classifier"] = spec.classifier;
    if (!spec.exits.empty()) {
        doc["exits"] = ordered_json::array();
        for (const auto& ex : spec.exits) {
            ordered_json je;
            je["after_block"] = ex.after_block;
            je["blocks"] = ordered_json::array();
            for (const auto& b : ex.blocks) je["blocks"].push_back(detail::block_to_json(b));
            je["pool"] = "gavg";
            if (ex.classifier != 0) je["classifier"] = ex.classifier;
            doc["exits"].push_back(std::move(je));
        }
    }
    if (!spec.quantization.empty()) {
        ordered_json jq = ordered_json::object();
        for (const auto& q : spec.quantization) jq[q.pattern] = q.bits;
        doc["quantization"] = std::move(jq);
    }
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Primitive layer graph

enum class LayerKind { conv2d, dense, batchnorm, activation, pool, add, channel_scale, softmax };

enum class PoolKind { avg, max, global_avg };

struct Shape {
    int h = 1, w = 1, c = 1;

    int64_t elements() const { return static_cast<int64_t>(h) * w * c; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

/// One primitive layer. Weighted layers (conv2d, dense) carry a stable tensor
/// base name; their checkpoint tensors are "<name>.weight" / "<name>.bias".
struct Layer {
    LayerKind kind = LayerKind::conv2d;
    std::string name;  // tensor base name; empty for weightless layers
    Shape in, out;
    int block = -1;  // originating block group index; -1 for stem/head/classifier

    // conv2d / dense
    int kernel = 1;
    int stride = 1;
    int groups = 1;
    bool bias = false;

    Activation act = Activation::none;   // activation layers
    PoolKind pool = PoolKind::global_avg;  // pool layers
    int residual_source = -1;            // producer of the side input when not the previous layer
};

struct LayerGraph {
    Shape input;
    std::vector<Layer> layers;
};

namespace detail {

inline int out_spatial(int extent, int stride) { return (extent + stride - 1) / stride; }

struct GraphBuilder {
    LayerGraph g;
    Shape cur;

    explicit GraphBuilder(Shape input) : cur(input) { g.input = input; }

    int last_index() const { return static_cast<int>(g.layers.size()) - 1; }

    int conv(const std::string& name, int k, int s, int cout, int groups, bool bias, int block) {
        Layer l;
        l.kind = LayerKind::conv2d;
        l.name = name;
        l.in = cur;
        l.out = {out_spatial(cur.h, s), out_spatial(cur.w, s), cout};
        if (l.out.h < 1 || l.out.w < 1) throw ValidationError("spatial collapse at layer " + name);
        l.block = block;
        l.kernel = k;
        l.stride = s;
        l.groups = groups;
        l.bias = bias;
        g.layers.push_back(l);
        cur = l.out;
        return last_index();
    }

    int dense(const std::string& name, int cout, bool bias, int block) {
        Layer l;
        l.kind = LayerKind::dense;
        l.name = name;
        l.in = cur;
        l.out = {1, 1, cout};
        l.block = block;
        l.bias = bias;
        g.layers.push_back(l);
        cur = l.out;
        return last_index();
    }

    void bn(int block) {
        Layer l;
        l.kind = LayerKind::batchnorm;
        l.in = l.out = cur;
        l.block = block;
        g.layers.push_back(l);
    }

    void activation(Activation a, int block) {
        if (a == Activation::none) return;
        Layer l;
        l.kind = LayerKind::activation;
        l.in = l.out = cur;
        l.block = block;
        l.act = a;
        g.layers.push_back(l);
    }

    void global_pool(int block) {
        Layer l;
        l.kind = LayerKind::pool;
        l.pool = PoolKind::global_avg;
        l.in = cur;
        l.out = {1, 1, cur.c};
        l.block = block;
        g.layers.push_back(l);
        cur = l.out;
    }

    void residual_add(int source_layer, int block) {
        Layer l;
        l.kind = LayerKind::add;
        l.in = l.out = cur;
        l.block = block;
        l.residual_source = source_layer;
        g.layers.push_back(l);
    }

    void channel_scale(int block) {
        Layer l;
        l.kind = LayerKind::channel_scale;
        l.in = l.out = cur;
        l.block = block;
        g.layers.push_back(l);
    }

    void mark_source(int layer_index) { g.layers.back().residual_source = layer_index; }

    void softmax(int block) {
        Layer l;
        l.kind = LayerKind::softmax;
        l.in = l.out = cur;
        l.block = block;
        g.layers.push_back(l);
    }
};

inline int expanded_channels(double e, int cin) { return static_cast<int>(std::llround(e * cin)); }

/// Reduce width from the repetition's input channels, not expanded channels.
inline int se_reduce_width(double se, int cin) { return static_cast<int>(std::ceil(se * cin)); }

/// Emits one repetition of a block group. `input_producer` is the layer index
/// producing the block input (-1 only for a hypothetical graph head, which
/// cannot happen since the stem always precedes blocks).
inline void emit_block_rep(GraphBuilder& gb, const BlockArgs& b, int rep, int block_idx,
                           const std::string& prefix) {
    const int cin = rep == 0 ? b.i : b.o;
    const int stride = rep == 0 ? b.s : 1;
    const int input_producer = gb.last_index();

    if (b.kind == BlockKind::mbconv) {
        const int cmid = expanded_channels(b.e, cin);
        if (b.e > 1.0) {
            gb.conv(prefix + ".expand.conv", 1, 1, cmid, 1, false, block_idx);
            gb.bn(block_idx);
            gb.activation(Activation::swish, block_idx);
        }
        gb.conv(prefix + ".dw.conv", b.k, stride, cmid, cmid, false, block_idx);
        gb.bn(block_idx);
        gb.activation(Activation::swish, block_idx);
        if (b.se > 0.0) {
            const int se_w = std::max(1, se_reduce_width(b.se, cin));
            const Shape spatial = gb.cur;
            const int trunk_index = gb.last_index();
            gb.global_pool(block_idx);
            gb.dense(prefix + ".se.reduce", se_w, true, block_idx);
            gb.activation(Activation::swish, block_idx);
            gb.dense(prefix + ".se.expand", cmid, true, block_idx);
            gb.activation(Activation::sigmoid, block_idx);
            gb.cur = spatial;  // scale re-broadcasts over the spatial map
            gb.channel_scale(block_idx);
            gb.mark_source(trunk_index);
        }
        gb.conv(prefix + ".project.conv", 1, 1, b.o, 1, false, block_idx);
        gb.bn(block_idx);
        if (stride == 1 && cin == b.o) gb.residual_add(input_producer, block_idx);
    } else {
        // Pre-activation basic residual block: BN-relu-conv, BN-relu-conv,
        // projection shortcut from the activated input when shape changes.
        gb.bn(block_idx);
        gb.activation(Activation::relu, block_idx);
        const int act_index = gb.last_index();
        const Shape after_act = gb.cur;
        gb.conv(prefix + ".conv1", b.k, stride, b.o, 1, false, block_idx);
        gb.bn(block_idx);
        gb.activation(Activation::relu, block_idx);
        gb.conv(prefix + ".conv2", b.k, 1, b.o, 1, false, block_idx);
        int skip_producer = input_producer;
        if (stride != 1 || cin != b.o) {
            const Shape trunk = gb.cur;
            gb.cur = after_act;
            skip_producer = gb.conv(prefix + ".shortcut.conv", 1, stride, b.o, 1, false, block_idx);
            gb.mark_source(act_index);
            gb.cur = trunk;
        }
        gb.residual_add(skip_producer, block_idx);
    }
}

inline void emit_classifier(GraphBuilder& gb, const std::string& prefix, int classes, int block_idx) {
    gb.global_pool(block_idx);
    gb.dense(prefix, classes, true, block_idx);
    gb.softmax(block_idx);
}

}  // namespace detail

/// Expands a spec into its primitive main-path layer graph (exit modules are
/// expanded separately by expand_exit). Shapes are propagated from the input
/// resolution; throws on spatial collapse.
inline LayerGraph expand(const ModelSpec& spec) {
    validate(spec);
    detail::GraphBuilder gb({spec.input_h, spec.input_w, spec.input_c});
    gb.conv("stem.conv", spec.stem.k, spec.stem.s, spec.stem.o, 1, spec.stem.bias, -1);
    if (spec.stem.bn) gb.bn(-1);
    gb.activation(spec.stem.act, -1);

    for (size_t g = 0; g < spec.blocks.size(); ++g) {
        const auto& b = spec.blocks[g];
        for (int rep = 0; rep < b.r; ++rep)
            detail::emit_block_rep(gb, b, rep, static_cast<int>(g),
                                   "b" + std::to_string(g) + "." + std::to_string(rep));
    }

    // Pre-activation groups leave their output unnormalized; close with BN+relu.
    if (spec.blocks.back().kind == BlockKind::basic) {
        gb.bn(-1);
        gb.activation(Activation::relu, -1);
    }
    if (spec.head) {
        gb.conv("head.conv", spec.head->k, spec.head->s, spec.head->o, 1, spec.head->bias, -1);
        if (spec.head->bn) gb.bn(-1);
        gb.activation(spec.head->act, -1);
    }
    detail::emit_classifier(gb, "classifier", spec.classifier, -1);
    return gb.g;
}

/// Expands one exit module: its blocks, pooling and classifier, starting from
/// the shape at the attach point. Tensor names are prefixed "exit<idx>.".
inline LayerGraph expand_exit(const ModelSpec& spec, int exit_index) {
    validate(spec);
    if (exit_index < 0 || exit_index >= static_cast<int>(spec.exits.size()))
        throw ValidationError("exit index out of range");
    const ExitSpec& ex = spec.exits[static_cast<size_t>(exit_index)];

    // Shape at the attach point: replay the main path through the attach block.
    Shape cur{spec.input_h, spec.input_w, spec.input_c};
    cur = {detail::out_spatial(cur.h, spec.stem.s), detail::out_spatial(cur.w, spec.stem.s), spec.stem.o};
    for (int g = 0; g <= ex.after_block; ++g) {
        const auto& b = spec.blocks[static_cast<size_t>(g)];
        cur = {detail::out_spatial(cur.h, b.s), detail::out_spatial(cur.w, b.s), b.o};
    }

    detail::GraphBuilder gb(cur);
    const std::string prefix = "exit" + std::to_string(exit_index);
    for (size_t g = 0; g < ex.blocks.size(); ++g) {
        const auto& b = ex.blocks[g];
        for (int rep = 0; rep < b.r; ++rep)
            detail::emit_block_rep(gb, b, rep, ex.after_block,
                                   prefix + ".b" + std::to_string(g) + "." + std::to_string(rep));
    }
    if (ex.blocks.back().kind == BlockKind::basic) {
        gb.bn(ex.after_block);
        gb.activation(Activation::relu, ex.after_block);
    }
    const int classes = ex.classifier != 0 ? ex.classifier : spec.classifier;
    detail::emit_classifier(gb, prefix + ".classifier", classes, ex.after_block);
    return gb.g;
}

// ---------------------------------------------------------------------------
// Compound scaling

/// alpha * beta^2 * gamma^2 - 2; how far the coefficients sit from the
/// compound-scaling budget. Reported, never enforced.
inline double constraint_residual(const ScalingCoefficients& c) {
    return c.alpha * c.beta * c.beta * c.gamma * c.gamma - 2.0;
}

/// Rounds a scaled channel count to the nearest multiple of `divisor`, never
/// below the divisor, bumping one step up if rounding lost more than 10%.
inline int round_channels(double scaled, int divisor = 8) {
    int v = std::max(divisor, static_cast<int>(scaled + divisor / 2.0) / divisor * divisor);
    if (static_cast<double>(v) < 0.9 * scaled) v += divisor;
    return v;
}

/// Applies compound scaling: repeats by ceil(r * alpha^phi), channels by
/// beta^phi with divisor rounding, input resolution by gamma^phi rounded to
/// the nearest integer (>= 1). Channel chaining is re-established, so the
/// result always re-validates. A width multiplier of exactly 1 keeps channel
/// counts untouched (identity contract).
inline ModelSpec apply_compound_scaling(const ModelSpec& spec, const ScalingCoefficients& c,
                                        int channel_divisor = 8) {
    validate(spec);
    if (c.alpha <= 0.0 || c.beta <= 0.0 || c.gamma <= 0.0)
        throw ValidationError("scaling coefficients must be positive");

    const double depth_mult = std::pow(c.alpha, c.phi);
    const double width_mult = std::pow(c.beta, c.phi);
    const double res_mult = std::pow(c.gamma, c.phi);

    auto scale_channels = [&](int ch) {
        if (width_mult == 1.0) return ch;
        return round_channels(width_mult * ch, channel_divisor);
    };
    auto scale_repeats = [&](int r) { return std::max(1, static_cast<int>(std::ceil(r * depth_mult))); };
    auto scale_res = [&](int extent) {
        return std::max(1, static_cast<int>(std::floor(extent * res_mult + 0.5)));
    };

    ModelSpec out = spec;
    out.input_h = scale_res(spec.input_h);
    out.input_w = scale_res(spec.input_w);
    out.stem.o = scale_channels(spec.stem.o);

    int prev = out.stem.o;
    for (auto& b : out.blocks) {
        b.i = prev;
        b.o = scale_channels(b.o);
        b.r = scale_repeats(b.r);
        prev = b.o;
    }
    if (out.head) out.head->o = scale_channels(out.head->o);
    for (auto& ex : out.exits) {
        int eprev = out.blocks[static_cast<size_t>(ex.after_block)].o;
        for (auto& b : ex.blocks) {
            b.i = eprev;
            b.o = scale_channels(b.o);
            b.r = scale_repeats(b.r);
            eprev = b.o;
        }
    }
    validate(out);
    return out;
}

// ---------------------------------------------------------------------------
// Built-in specs

/// WideResNet-28-10 for 32x32x3 inputs and 100 classes: 3 groups of 4
/// pre-activation basic blocks at widths 160/320/640 (28 convolutions
/// counting the three projection shortcuts).
inline ModelSpec wrn28_10() {
    ModelSpec spec;
    spec.name = "wrn28-10";
    spec.input_h = spec.input_w = 32;
    spec.input_c = 3;
    spec.stem = {3, 1, 16, false, false, Activation::none};
    spec.blocks = {
        {BlockKind::basic, 3, 1, 1.0, 16, 160, 0.0, 4},
        {BlockKind::basic, 3, 2, 1.0, 160, 320, 0.0, 4},
        {BlockKind::basic, 3, 2, 1.0, 320, 640, 0.0, 4},
    };
    spec.classifier = 100;
    return spec;
}

/// A small representative MBConv baseline in the spirit of the searched
/// CIFAR-100 model (the exact searched block arguments are not public), with
/// one early-exit module attached after block group 4 and 16-bit accounting.
inline ModelSpec mbconv_baseline() {
    ModelSpec spec;
    spec.name = "mbconv-cifar100-baseline";
    spec.input_h = spec.input_w = 32;
    spec.input_c = 3;
    spec.stem = {3, 1, 16, false, true, Activation::swish};
    spec.blocks = {
        {BlockKind::mbconv, 3, 1, 1.0, 16, 16, 0.25, 1},
        {BlockKind::mbconv, 3, 2, 6.0, 16, 24, 0.25, 2},
        {BlockKind::mbconv, 5, 2, 6.0, 24, 40, 0.25, 2},
        {BlockKind::mbconv, 3, 1, 6.0, 40, 48, 0.25, 2},
        {BlockKind::mbconv, 5, 2, 6.0, 48, 96, 0.25, 2},
        {BlockKind::mbconv, 3, 1, 6.0, 96, 112, 0.25, 1},
    };
    spec.head = ConvStage{1, 1, 448, false, true, Activation::swish};
    spec.classifier = 100;
    spec.exits = {{4, {{BlockKind::mbconv, 3, 1, 3.0, 96, 48, 0.25, 1}}, 0}};
    spec.quantization = {{"*", 16}};
    return spec;
}

}  // namespace sipa
