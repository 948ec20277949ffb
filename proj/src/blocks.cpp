#include "aanc/blocks.hpp"

#include <cmath>

namespace aanc {

Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
    if (fan_in <= 0) throw ConfigError("kaiming_uniform: fan_in must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
    }
    return t;
}

Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    // Box-Muller on hand-rolled uniforms keeps draws platform-stable.
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double u1 = uniform01(rng);
        while (u1 <= 0.0) u1 = uniform01(rng);
        const double u2 = uniform01(rng);
        t.data()[i] = stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    return t;
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "none") return NormKind::none;
    if (s == "batch") return NormKind::batch;
    if (s == "group") return NormKind::group;
    throw ConfigError("unknown norm kind '" + s + "' (expected none|batch|group)");
}

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::none: return "none";
        case NormKind::batch: return "batch";
        case NormKind::group: return "group";
    }
    return "?";
}

// --- conv layers -------------------------------------------------------------

Conv2dLayer Conv2dLayer::make(int cin, int cout, int k, int stride, int padding,
                              std::mt19937_64& rng) {
    Conv2dLayer l;
    l.w = kaiming_uniform({cout, cin, k, k}, cin * k * k, rng).set_requires_grad(true);
    l.b = Tensor::zeros({cout}).set_requires_grad(true);
    l.stride = stride;
    l.padding = padding;
    return l;
}

void Conv2dLayer::visit(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + ".weight", w);
    v(prefix + ".bias", b);
}

DscConv DscConv::make(int cin, int cout, int k, std::mt19937_64& rng) {
    DscConv l;
    l.dw_w = kaiming_uniform({cin, 1, k, k}, k * k, rng).set_requires_grad(true);
    l.dw_b = Tensor::zeros({cin}).set_requires_grad(true);
    l.pw_w = kaiming_uniform({cout, cin, 1, 1}, cin, rng).set_requires_grad(true);
    l.pw_b = Tensor::zeros({cout}).set_requires_grad(true);
    return l;
}

Tensor DscConv::forward(const Tensor& x) const {
    const int k = dw_w.dim(2);
    Tensor mid = depthwise_conv2d(x, dw_w, dw_b, 1, (k - 1) / 2);
    return conv2d(mid, pw_w, pw_b, 1, 0);
}

void DscConv::visit(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + ".dw.weight", dw_w);
    v(prefix + ".dw.bias", dw_b);
    v(prefix + ".pw.weight", pw_w);
    v(prefix + ".pw.bias", pw_b);
}

ConvAny ConvAny::make(int cin, int cout, int k, bool dsc, std::mt19937_64& rng) {
    ConvAny c;
    c.dsc = dsc;
    if (dsc) {
        c.sep = DscConv::make(cin, cout, k, rng);
    } else {
        c.std_conv = Conv2dLayer::make(cin, cout, k, 1, (k - 1) / 2, rng);
    }
    return c;
}

void ConvAny::visit(const std::string& prefix, const ParamVisitor& v) {
    if (dsc)
        sep.visit(prefix, v);
    else
        std_conv.visit(prefix, v);
}

// --- normalization -------------------------------------------------------------

NormLayer NormLayer::make(NormKind kind, int channels, int groups, std::mt19937_64&) {
    NormLayer n;
    n.kind = kind;
    n.groups = groups;
    if (kind != NormKind::none) {
        n.gamma = Tensor::full({channels}, 1.0).set_requires_grad(true);
        n.beta = Tensor::zeros({channels}).set_requires_grad(true);
    }
    if (kind == NormKind::group && channels % groups != 0) {
        throw ConfigError("group norm: " + std::to_string(channels) +
                          " channels not divisible by " + std::to_string(groups) + " groups");
    }
    return n;
}

Tensor NormLayer::forward(const Tensor& x) const {
    if (kind == NormKind::none) return x;
    if (x.rank() != 4) throw ShapeError("NormLayer expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor xh;
    if (kind == NormKind::batch) {
        xh = normalize_over(x, {0, 2, 3}, eps);
    } else {
        Tensor grouped = reshape(x, {b, groups, c / groups, h, w});
        xh = reshape(normalize_over(grouped, {2, 3, 4}, eps), {b, c, h, w});
    }
    Tensor g4 = reshape(gamma, {1, c, 1, 1});
    Tensor b4 = reshape(beta, {1, c, 1, 1});
    return add(mul(xh, g4), b4);
}

void NormLayer::visit(const std::string& prefix, const ParamVisitor& v) {
    if (kind == NormKind::none) return;
    v(prefix + ".gamma", gamma);
    v(prefix + ".beta", beta);
}

// --- CBAM ----------------------------------------------------------------------

Cbam Cbam::make(int channels, int reduction, int spatial_k, std::mt19937_64& rng) {
    if (reduction < 1 || channels % reduction != 0) {
        throw ConfigError("CBAM: channels " + std::to_string(channels) +
                          " not divisible by reduction " + std::to_string(reduction));
    }
    if (spatial_k % 2 == 0) throw ConfigError("CBAM: spatial kernel must be odd");
    Cbam c;
    c.reduction = reduction;
    c.spatial_k = spatial_k;
    const int hidden = channels / reduction;
    c.mlp_w0 = kaiming_uniform({hidden, channels}, channels, rng).set_requires_grad(true);
    c.mlp_w1 = kaiming_uniform({channels, hidden}, hidden, rng).set_requires_grad(true);
    c.spatial_w =
        kaiming_uniform({1, 2, spatial_k, spatial_k}, 2 * spatial_k * spatial_k, rng)
            .set_requires_grad(true);
    c.spatial_zero_bias = Tensor::zeros({1});
    return c;
}

Tensor Cbam::channel_attention(const Tensor& f) const {
    const int b = f.dim(0), c = f.dim(1);
    if (c != mlp_w0.dim(1)) {
        throw ShapeError("CBAM built for " + std::to_string(mlp_w0.dim(1)) +
                         " channels, got " + std::to_string(c));
    }
    auto mlp = [&](const Tensor& pooled) {
        Tensor vec = reshape(pooled, {b, c});
        Tensor hidden = relu(matmul(vec, transpose(mlp_w0, {1, 0})));
        return matmul(hidden, transpose(mlp_w1, {1, 0}));
    };
    Tensor avg = mlp(global_pool(f, PoolKind::avg));
    Tensor mx = mlp(global_pool(f, PoolKind::max));
    return reshape(sigmoid(add(avg, mx)), {b, c, 1, 1});
}

Tensor Cbam::spatial_attention(const Tensor& f) const {
    Tensor mean_c = reduce_mean(f, 1, /*keepdim=*/true);
    Tensor max_c = reduce_max(f, 1, /*keepdim=*/true);
    Tensor stacked = concat({mean_c, max_c}, 1);
    return sigmoid(conv2d(stacked, spatial_w, spatial_zero_bias, 1, (spatial_k - 1) / 2));
}

Tensor Cbam::forward(const Tensor& f) const {
    Tensor gated = mul(f, channel_attention(f));
    return mul(gated, spatial_attention(gated));
}

void Cbam::visit(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + ".mlp.w0", mlp_w0);
    v(prefix + ".mlp.w1", mlp_w1);
    v(prefix + ".spatial.weight", spatial_w);
}

// --- double conv -----------------------------------------------------------------

DoubleConv DoubleConv::make(int cin, int cmid, int cout, bool dsc, NormKind norm, int groups,
                            bool cbam_after, int cbam_reduction, std::mt19937_64& rng) {
    DoubleConv d;
    d.conv1 = ConvAny::make(cin, cmid, 3, dsc, rng);
    d.norm1 = NormLayer::make(norm, cmid, groups, rng);
    d.conv2 = ConvAny::make(cmid, cout, 3, dsc, rng);
    d.norm2 = NormLayer::make(norm, cout, groups, rng);
    if (cbam_after) d.cbam = Cbam::make(cout, cbam_reduction, 7, rng);
    return d;
}

Tensor DoubleConv::forward(const Tensor& x) const {
    Tensor y = relu(norm1.forward(conv1.forward(x)));
    y = relu(norm2.forward(conv2.forward(y)));
    if (cbam) y = cbam->forward(y);
    return y;
}

void DoubleConv::visit(const std::string& prefix, const ParamVisitor& v) {
    conv1.visit(prefix + ".conv1", v);
    norm1.visit(prefix + ".norm1", v);
    conv2.visit(prefix + ".conv2", v);
    norm2.visit(prefix + ".norm2", v);
    if (cbam) cbam->visit(prefix + ".cbam", v);
}

// --- linear / patch embedding ------------------------------------------------------

Linear Linear::make(int in, int out, std::mt19937_64& rng) {
    Linear l;
    l.w = kaiming_uniform({in, out}, in, rng).set_requires_grad(true);
    l.b = Tensor::zeros({out}).set_requires_grad(true);
    return l;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + ".weight", w);
    v(prefix + ".bias", b);
}

PatchEmbed PatchEmbed::make(int channels, int patch, int tokens, int dim, std::mt19937_64& rng) {
    PatchEmbed pe;
    pe.patch = patch;
    pe.proj_w = kaiming_uniform({channels * patch * patch, dim}, channels * patch * patch, rng)
                    .set_requires_grad(true);
    pe.proj_b = Tensor::zeros({dim}).set_requires_grad(true);
    pe.pos = normal_init({tokens, dim}, 0.02, rng).set_requires_grad(true);
    return pe;
}

Tensor PatchEmbed::forward(const Tensor& x) const {
    if (x.rank() != 4) throw ShapeError("patch_embed expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int p = patch;
    if (h % p != 0 || w % p != 0) {
        throw ConfigError("patch_embed: spatial dims " + shape_str(x.shape()) +
                          " not divisible by patch " + std::to_string(p));
    }
    const int gh = h / p, gw = w / p;
    const int n = gh * gw;
    if (n != pos.dim(0)) {
        throw ShapeError("patch_embed: " + std::to_string(n) + " tokens vs " +
                         std::to_string(pos.dim(0)) + " position rows");
    }
    Tensor split = reshape(x, {b, c, gh, p, gw, p});
    Tensor ordered = transpose(split, {0, 2, 4, 1, 3, 5});  // [B,gh,gw,C,P,P]
    Tensor tokens = reshape(ordered, {b, n, c * p * p});
    return add(add(matmul(tokens, proj_w), proj_b), pos);
}

void PatchEmbed::visit(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + ".proj.weight", proj_w);
    v(prefix + ".proj.bias", proj_b);
    v(prefix + ".pos", pos);
}

// --- transformer -----------------------------------------------------------------

TransformerLayer TransformerLayer::make(int dim, int heads, int mlp_hidden, double dropout_p,
                                        std::mt19937_64& rng) {
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("transformer: dim " + std::to_string(dim) +
                          " not divisible by heads " + std::to_string(heads));
    }
    TransformerLayer t;
    t.heads = heads;
    t.dropout_p = dropout_p;
    t.ln1_gamma = Tensor::full({dim}, 1.0).set_requires_grad(true);
    t.ln1_beta = Tensor::zeros({dim}).set_requires_grad(true);
    t.ln2_gamma = Tensor::full({dim}, 1.0).set_requires_grad(true);
    t.ln2_beta = Tensor::zeros({dim}).set_requires_grad(true);
    t.q = Linear::make(dim, dim, rng);
    t.k = Linear::make(dim, dim, rng);
    t.v = Linear::make(dim, dim, rng);
    t.out = Linear::make(dim, dim, rng);
    t.fc1 = Linear::make(dim, mlp_hidden, rng);
    t.fc2 = Linear::make(mlp_hidden, dim, rng);
    return t;
}

Tensor TransformerLayer::msa(const Tensor& z) const {
    if (z.rank() != 3) throw ShapeError("msa expects [B,N,D]");
    const int b = z.dim(0), n = z.dim(1), d = z.dim(2);
    const int hd = d / heads;
    auto to_heads = [&](const Tensor& t) {
        return transpose(reshape(t, {b, n, heads, hd}), {0, 2, 1, 3});  // [B,h,N,hd]
    };
    Tensor qs = to_heads(q.forward(z));
    Tensor ks = to_heads(k.forward(z));
    Tensor vs = to_heads(v.forward(z));
    Tensor scores = mul_scalar(matmul(qs, transpose(ks, {0, 1, 3, 2})),
                               1.0 / std::sqrt(static_cast<double>(hd)));
    Tensor attn = softmax(scores, 3);  // rows over keys sum to 1
    Tensor ctx = matmul(attn, vs);     // [B,h,N,hd]
    Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {b, n, d});
    return out.forward(merged);
}

Tensor TransformerLayer::forward(const Tensor& z, bool training, std::mt19937_64* rng,
                                 std::optional<double> dropout_override) const {
    const double p = dropout_override.value_or(dropout_p);
    Tensor z1 = add(z, msa(layer_norm(z, ln1_gamma, ln1_beta)));
    Tensor hidden = gelu(fc1.forward(layer_norm(z1, ln2_gamma, ln2_beta)));
    if (training && p > 0.0) {
        if (!rng) throw ConfigError("transformer: dropout requested without an rng");
        hidden = dropout(hidden, p, true, *rng);
    }
    return add(z1, fc2.forward(hidden));
}

void TransformerLayer::visit(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + ".ln1.gamma", ln1_gamma);
    v(prefix + ".ln1.beta", ln1_beta);
    q.visit(prefix + ".attn.q", v);
    k.visit(prefix + ".attn.k", v);
    this->v.visit(prefix + ".attn.v", v);
    out.visit(prefix + ".attn.out", v);
    v(prefix + ".ln2.gamma", ln2_gamma);
    v(prefix + ".ln2.beta", ln2_beta);
    fc1.visit(prefix + ".mlp.fc1", v);
    fc2.visit(prefix + ".mlp.fc2", v);
}

Tensor stack_transformer(const Tensor& z, const std::vector<TransformerLayer>& layers,
                         bool training, std::mt19937_64* rng,
                         std::optional<double> dropout_override) {
    Tensor cur = z;
    for (const TransformerLayer& layer : layers) {
        cur = layer.forward(cur, training, rng, dropout_override);
    }
    return cur;
}

}  // namespace aanc
