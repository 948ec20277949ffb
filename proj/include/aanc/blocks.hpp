#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aanc/ops.hpp"
#include "aanc/tensor.hpp"

namespace aanc {

/// Callback receiving every trainable parameter with its hierarchical path,
/// e.g. "decoder.up1.doubleconv.conv1.weight". Visit order is deterministic.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng);
Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng);

enum class NormKind { none, batch, group };
NormKind norm_kind_from_string(const std::string& s);
std::string to_string(NormKind k);

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1, padding = 0;
    static Conv2dLayer make(int cin, int cout, int k, int stride, int padding,
                            std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, padding); }
    void visit(const std::string& prefix, const ParamVisitor& v);
};

/// Depthwise k x k (same padding) followed by pointwise 1 x 1, both biased.
struct DscConv {
    Tensor dw_w, dw_b;  // [C,1,k,k], [C]
    Tensor pw_w, pw_b;  // [Cout,C,1,1], [Cout]
    static DscConv make(int cin, int cout, int k, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    void visit(const std::string& prefix, const ParamVisitor& v);
};

/// Standard or depthwise-separable 3x3 same-padding convolution, switched by
/// flag so encoder/decoder blocks share one code path.
struct ConvAny {
    bool dsc = false;
    Conv2dLayer std_conv;
    DscConv sep;
    static ConvAny make(int cin, int cout, int k, bool dsc, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const { return dsc ? sep.forward(x) : std_conv.forward(x); }
    void visit(const std::string& prefix, const ParamVisitor& v);
};

/// Stateless feature normalization: `batch` normalizes each channel over the
/// (batch, spatial) axes of the current tensor, `group` over channel groups
/// per instance. No running statistics.
struct NormLayer {
    NormKind kind = NormKind::batch;
    Tensor gamma, beta;  // [C]; undefined when kind == none
    int groups = 8;
    double eps = 1e-5;
    static NormLayer make(NormKind kind, int channels, int groups, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    void visit(const std::string& prefix, const ParamVisitor& v);
};

/// Channel then spatial attention gating. Channel attention pushes global
/// avg- and max-pooled descriptors through a shared bottleneck MLP
/// (bias-free); spatial attention convolves the stacked channel mean/max
/// maps (bias-free conv).
struct Cbam {
    int reduction = 16;
    Tensor mlp_w0;  // [C/r, C]
    Tensor mlp_w1;  // [C, C/r]
    Tensor spatial_w;  // [1, 2, k, k]
    Tensor spatial_zero_bias;  // frozen at zero, not a parameter
    int spatial_k = 7;

    static Cbam make(int channels, int reduction, int spatial_k, std::mt19937_64& rng);
    Tensor channel_attention(const Tensor& f) const;  // [B,C,1,1] in (0,1)
    Tensor spatial_attention(const Tensor& f) const;  // [B,1,H,W] in (0,1)
    Tensor forward(const Tensor& f) const;
    void visit(const std::string& prefix, const ParamVisitor& v);
};

/// Two (conv -> norm -> relu) stages with optional trailing CBAM; spatial
/// dims preserved.
struct DoubleConv {
    ConvAny conv1, conv2;
    NormLayer norm1, norm2;
    std::optional<Cbam> cbam;
    static DoubleConv make(int cin, int cmid, int cout, bool dsc, NormKind norm, int groups,
                           bool cbam_after, int cbam_reduction, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    void visit(const std::string& prefix, const ParamVisitor& v);
};

struct Linear {
    Tensor w, b;  // [in,out], [out]
    static Linear make(int in, int out, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const { return add(matmul(x, w), b); }
    void visit(const std::string& prefix, const ParamVisitor& v);
};

/// Non-overlapping P x P patches, flattened, linearly projected, plus
/// learned position embeddings.
struct PatchEmbed {
    int patch = 2;
    Tensor proj_w;  // [C*P*P, D]
    Tensor proj_b;  // [D]
    Tensor pos;     // [N, D]
    static PatchEmbed make(int channels, int patch, int tokens, int dim, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;  // [B,C,H,W] -> [B,N,D]
    void visit(const std::string& prefix, const ParamVisitor& v);
};

/// Pre-norm residual Transformer layer: z' = z + MSA(LN(z)),
/// out = z' + MLP(LN(z')). MLP hidden uses GELU with a dropout site.
struct TransformerLayer {
    int heads = 8;
    double dropout_p = 0.0;
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Linear q, k, v, out;
    Linear fc1, fc2;

    static TransformerLayer make(int dim, int heads, int mlp_hidden, double dropout_p,
                                 std::mt19937_64& rng);
    /// Multi-head scaled dot-product attention with output projection,
    /// scale 1/sqrt(D/h). No normalization inside.
    Tensor msa(const Tensor& z) const;
    Tensor forward(const Tensor& z, bool training, std::mt19937_64* rng,
                   std::optional<double> dropout_override = {}) const;
    void visit(const std::string& prefix, const ParamVisitor& v);
};

Tensor stack_transformer(const Tensor& z, const std::vector<TransformerLayer>& layers,
                         bool training, std::mt19937_64* rng,
                         std::optional<double> dropout_override = {});

/// Number of scalars a visitor would report under `visit`.
template <class Block>
std::int64_t block_param_count(Block& b) {
    std::int64_t n = 0;
    b.visit("", [&n](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

}  // namespace aanc
