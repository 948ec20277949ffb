#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aanc/blocks.hpp"
#include "aanc/tensor.hpp"

namespace aanc {

enum class ModelKind { aa_transunet, transunet, unet };
ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind k);

struct ModelConfig {
    int t_in = 12;
    int t_out = 1;
    int image_size = 288;
    std::vector<int> widths = {64, 128, 256, 512};  // stem + one per downsampling
    int patch = 2;
    int embed_dim = 512;
    int heads = 8;
    int depth = 1;  // transformer layers
    bool dsc = true;
    bool cbam = true;
    double dropout = 0.0;
    NormKind norm = NormKind::batch;
    int norm_groups = 8;
    int cbam_reduction = 16;

    int downsamplings() const { return static_cast<int>(widths.size()) - 1; }

    /// Desk-scale config: paper widths divided by 8, 64px frames.
    static ModelConfig tiny();
    /// Full-size precipitation config (288px, 12 frames in, 1 out).
    static ModelConfig paper_precip();
    /// Full-size cloud-cover config (256px, 4 frames in, 6 out).
    static ModelConfig paper_cloud();
};

std::string model_config_to_json(ModelKind kind, const ModelConfig& cfg);
void model_config_from_json(const std::string& text, ModelKind* kind, ModelConfig* cfg);

/// Encoder-decoder nowcasting network. aa_transunet / transunet share the
/// hybrid CNN-Transformer geometry (skips at the three downsampled stages,
/// final decoder stage without a skip); unet is the classical variant whose
/// full-resolution stem features are a skip and whose bottleneck is a
/// convolution block.
class Model {
public:
    ModelKind kind = ModelKind::aa_transunet;
    ModelConfig cfg;

    DoubleConv stem;
    std::vector<DoubleConv> enc;  // downsampled stages, widths[1..]
    PatchEmbed patch_embed;       // aa/transunet only
    std::vector<TransformerLayer> transformer;
    DoubleConv bottleneck;  // unet only
    std::vector<DoubleConv> dec;
    std::vector<int> dec_skip;  // resolution of the skip to concat, 0 = none
    Conv2dLayer head;

    /// Weight init: Kaiming-uniform convs/linears, N(0,0.02^2) position
    /// embeddings, zero biases; head weights zero so the initial prediction
    /// is the zero map.
    static Model build(ModelKind kind, ModelConfig cfg, std::uint64_t seed);

    /// [B,t_in,H,W] -> [B,t_out,H,W]. Dropout sites (decoder double-conv
    /// outputs, transformer MLP) fire when training && p > 0, where p is
    /// dropout_override if given else cfg.dropout. Raises NumericError with
    /// the layer path if a stage output goes non-finite.
    Tensor forward(const Tensor& x, bool training = false, std::mt19937_64* rng = nullptr,
                   std::optional<double> dropout_override = {}) const;

    void visit_params(const ParamVisitor& v) const;
    std::int64_t param_count() const;
};

/// Every output frame is input frame t_in-1.
Tensor persistence(const Tensor& x, int t_out);

struct ParamReport {
    std::vector<std::pair<std::string, std::int64_t>> per_path;
    std::int64_t total = 0;
    std::int64_t encoder = 0;
    std::int64_t decoder = 0;
    std::int64_t cbam_only = 0;   // all CBAM parameters
    std::int64_t conv_only = 0;   // conv-block parameters (convs + norms + head)
    std::int64_t decoder_cbam = 0;
    std::int64_t decoder_conv = 0;
};

ParamReport count_parameters(const Model& m);

/// Checkpoint directory: config.json + manifest.txt + params/<path>.t32
/// (32-bit storage).
void save_checkpoint(const Model& m, const std::string& dir);
Model load_checkpoint(const std::string& dir);

}  // namespace aanc
