#include "aanc/model.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace aanc {

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "aa_transunet") return ModelKind::aa_transunet;
    if (s == "transunet") return ModelKind::transunet;
    if (s == "unet") return ModelKind::unet;
    throw ConfigError("unknown model kind '" + s + "' (expected aa_transunet|transunet|unet)");
}

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::aa_transunet: return "aa_transunet";
        case ModelKind::transunet: return "transunet";
        case ModelKind::unet: return "unet";
    }
    return "?";
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.t_in = 4;
    c.t_out = 1;
    c.image_size = 64;
    c.widths = {8, 16, 32, 64};
    c.patch = 2;
    c.embed_dim = 64;
    c.heads = 8;
    c.depth = 1;
    c.cbam_reduction = 4;
    return c;
}

ModelConfig ModelConfig::paper_precip() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_cloud() {
    ModelConfig c;
    c.t_in = 4;
    c.t_out = 6;
    c.image_size = 256;
    return c;
}

std::string model_config_to_json(ModelKind kind, const ModelConfig& cfg) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = to_string(kind);
    j["t_in"] = cfg.t_in;
    j["t_out"] = cfg.t_out;
    j["image_size"] = cfg.image_size;
    j["widths"] = cfg.widths;
    j["patch"] = cfg.patch;
    j["embed_dim"] = cfg.embed_dim;
    j["heads"] = cfg.heads;
    j["depth"] = cfg.depth;
    j["dsc"] = cfg.dsc;
    j["cbam"] = cfg.cbam;
    j["dropout"] = cfg.dropout;
    j["norm"] = to_string(cfg.norm);
    j["norm_groups"] = cfg.norm_groups;
    j["cbam_reduction"] = cfg.cbam_reduction;
    return j.dump(2);
}

void model_config_from_json(const std::string& text, ModelKind* kind, ModelConfig* cfg) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("bad model config JSON: ") + e.what());
    }
    try {
        if (j.value("schema_version", 1) != 1) {
            throw DataError("unsupported model config schema_version");
        }
        if (kind) *kind = model_kind_from_string(j.at("kind").get<std::string>());
        ModelConfig c;
        c.t_in = j.at("t_in").get<int>();
        c.t_out = j.at("t_out").get<int>();
        c.image_size = j.at("image_size").get<int>();
        c.widths = j.at("widths").get<std::vector<int>>();
        c.patch = j.at("patch").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.heads = j.at("heads").get<int>();
        c.depth = j.at("depth").get<int>();
        c.dsc = j.at("dsc").get<bool>();
        c.cbam = j.at("cbam").get<bool>();
        c.dropout = j.at("dropout").get<double>();
        c.norm = norm_kind_from_string(j.at("norm").get<std::string>());
        c.norm_groups = j.at("norm_groups").get<int>();
        c.cbam_reduction = j.at("cbam_reduction").get<int>();
        if (cfg) *cfg = c;
    } catch (const json::exception& e) {
        throw DataError(std::string("incomplete model config JSON: ") + e.what());
    }
}

namespace {

void validate_config(ModelKind kind, const ModelConfig& cfg) {
    if (cfg.t_in < 1 || cfg.t_out < 1) throw ConfigError("t_in and t_out must be >= 1");
    if (cfg.widths.size() < 2) throw ConfigError("need at least two encoder widths");
    for (int w : cfg.widths) {
        if (w < 1) throw ConfigError("encoder widths must be positive");
    }
    if (cfg.depth < 0) throw ConfigError("transformer depth must be >= 0");
    const int down = cfg.downsamplings();
    int res = cfg.image_size;
    for (int i = 0; i < down; ++i) {
        if (res % 2 != 0) {
            throw ConfigError("image size " + std::to_string(cfg.image_size) +
                              " does not survive " + std::to_string(down) + " downsamplings");
        }
        res /= 2;
    }
    if (kind != ModelKind::unet) {
        if (cfg.patch < 2 || (cfg.patch & (cfg.patch - 1)) != 0) {
            throw ConfigError("patch size must be a power of two >= 2");
        }
        if (res % cfg.patch != 0 || res / cfg.patch < 1) {
            throw ConfigError("bottleneck " + std::to_string(res) +
                              "px not divisible by patch " + std::to_string(cfg.patch));
        }
        if (cfg.embed_dim % cfg.heads != 0) {
            throw ConfigError("embed_dim not divisible by heads");
        }
    }
}

}  // namespace

Model Model::build(ModelKind kind, ModelConfig cfg, std::uint64_t seed) {
    // kind overrides: the baselines are the same topology without the
    // attention/DSC additions
    if (kind != ModelKind::aa_transunet) {
        cfg.dsc = false;
        cfg.cbam = false;
    }
    validate_config(kind, cfg);

    Model m;
    m.kind = kind;
    m.cfg = cfg;
    std::mt19937_64 rng(seed ^ 0xa11cafe5ULL);

    const auto& w = cfg.widths;
    const int n = static_cast<int>(w.size());
    // DSC only replaces decoder convolutions; encoder stages stay standard.
    auto enc_dc = [&](int cin, int cout, bool cbam_here) {
        return DoubleConv::make(cin, cout, cout, /*dsc=*/false, cfg.norm, cfg.norm_groups,
                                cbam_here, cfg.cbam_reduction, rng);
    };
    m.stem = enc_dc(cfg.t_in, w[0], cfg.cbam);
    for (int i = 1; i < n; ++i) {
        m.enc.push_back(
            enc_dc(w[static_cast<std::size_t>(i - 1)], w[static_cast<std::size_t>(i)], cfg.cbam));
    }

    int res = cfg.image_size >> (n - 1);  // bottleneck resolution
    if (kind == ModelKind::unet) {
        m.bottleneck = enc_dc(w[static_cast<std::size_t>(n - 1)],
                              w[static_cast<std::size_t>(n - 1)], /*cbam=*/false);
    } else {
        const int grid = res / cfg.patch;
        m.patch_embed =
            PatchEmbed::make(w[static_cast<std::size_t>(n - 1)], cfg.patch, grid * grid,
                             cfg.embed_dim, rng);
        for (int l = 0; l < cfg.depth; ++l) {
            m.transformer.push_back(TransformerLayer::make(cfg.embed_dim, cfg.heads,
                                                           4 * cfg.embed_dim, cfg.dropout, rng));
        }
    }

    // decoder: upsample until full resolution, consuming skips by resolution
    std::map<int, int> skip_channels;  // resolution -> channels
    if (kind == ModelKind::unet) {
        int r = cfg.image_size;
        skip_channels[r] = w[0];
        for (int i = 1; i < n - 1; ++i) {
            r /= 2;
            skip_channels[r] = w[static_cast<std::size_t>(i)];
        }
    } else {
        int r = cfg.image_size;
        for (int i = 1; i < n; ++i) {
            r /= 2;
            skip_channels[r] = w[static_cast<std::size_t>(i)];
        }
    }

    int cur_res = kind == ModelKind::unet ? res : res / cfg.patch;
    int cur_ch = kind == ModelKind::unet ? w[static_cast<std::size_t>(n - 1)] : cfg.embed_dim;
    int width_idx = n - 2;  // next output width, walking the list backwards
    while (cur_res < cfg.image_size) {
        cur_res *= 2;
        int cin = cur_ch;
        int skip = 0;
        auto it = skip_channels.find(cur_res);
        if (it != skip_channels.end()) {
            cin += it->second;
            skip = cur_res;
        }
        const int cout = w[static_cast<std::size_t>(std::max(width_idx, 0))];
        --width_idx;
        m.dec.push_back(DoubleConv::make(cin, cout, cout, cfg.dsc, cfg.norm, cfg.norm_groups,
                                         cfg.cbam, cfg.cbam_reduction, rng));
        m.dec_skip.push_back(skip);
        cur_ch = cout;
    }

    // zero-initialized 1x1 head: the untrained model predicts the zero map
    m.head.w = Tensor::zeros({cfg.t_out, cur_ch, 1, 1}).set_requires_grad(true);
    m.head.b = Tensor::zeros({cfg.t_out}).set_requires_grad(true);
    m.head.stride = 1;
    m.head.padding = 0;
    return m;
}

namespace {

void check_finite(const Tensor& t, const std::string& path) {
    if (!t.all_finite()) {
        throw NumericError("non-finite activation after " + path);
    }
}

}  // namespace

Tensor Model::forward(const Tensor& x, bool training, std::mt19937_64* rng,
                      std::optional<double> dropout_override) const {
    if (x.rank() != 4 || x.dim(1) != cfg.t_in || x.dim(2) != cfg.image_size ||
        x.dim(3) != cfg.image_size) {
        throw ShapeError("forward expects [B," + std::to_string(cfg.t_in) + "," +
                         std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                         "], got " + shape_str(x.shape()));
    }
    const double site_p = dropout_override.value_or(cfg.dropout);
    const int b = x.dim(0);
    const int n = static_cast<int>(cfg.widths.size());

    std::map<int, Tensor> skips;
    int res = cfg.image_size;
    Tensor cur = stem.forward(x);
    check_finite(cur, "encoder.stem");
    if (kind == ModelKind::unet) skips[res] = cur;
    for (std::size_t i = 0; i < enc.size(); ++i) {
        cur = pool2d(cur, PoolKind::max, 2, 2);
        res /= 2;
        cur = enc[i].forward(cur);
        check_finite(cur, "encoder.stage" + std::to_string(i + 1));
        const bool is_last = i + 1 == enc.size();
        if (kind == ModelKind::unet) {
            if (!is_last) skips[res] = cur;
        } else {
            skips[res] = cur;
        }
    }

    if (kind == ModelKind::unet) {
        cur = bottleneck.forward(cur);
        check_finite(cur, "encoder.bottleneck");
    } else {
        Tensor tokens = patch_embed.forward(cur);
        tokens = stack_transformer(tokens, transformer, training, rng, dropout_override);
        check_finite(tokens, "encoder.transformer");
        const int grid = res / cfg.patch;
        cur = reshape(transpose(tokens, {0, 2, 1}), {b, cfg.embed_dim, grid, grid});
        res = grid;
    }

    for (std::size_t j = 0; j < dec.size(); ++j) {
        cur = upsample_bilinear2x(cur);
        res *= 2;
        if (dec_skip[j] != 0) {
            cur = concat({cur, skips.at(dec_skip[j])}, 1);
        }
        cur = dec[j].forward(cur, site_p, training, rng);
        check_finite(cur, "decoder.up" + std::to_string(j + 1));
    }
    Tensor out = head.forward(cur);
    check_finite(out, "decoder.head");
    return out;
}

void Model::visit_params(const ParamVisitor& v) const {
    auto* self = const_cast<Model*>(this);
    self->stem.visit("encoder.stem", v);
    for (std::size_t i = 0; i < enc.size(); ++i) {
        self->enc[i].visit("encoder.stage" + std::to_string(i + 1), v);
    }
    if (kind == ModelKind::unet) {
        self->bottleneck.visit("encoder.bottleneck", v);
    } else {
        self->patch_embed.visit("encoder.patch_embed", v);
        for (std::size_t l = 0; l < transformer.size(); ++l) {
            self->transformer[l].visit("encoder.transformer." + std::to_string(l), v);
        }
    }
    for (std::size_t j = 0; j < dec.size(); ++j) {
        self->dec[j].visit("decoder.up" + std::to_string(j + 1) + ".doubleconv", v);
    }
    self->head.visit("decoder.head", v);
}

std::int64_t Model::param_count() const {
    std::int64_t n = 0;
    visit_params([&n](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

Tensor persistence(const Tensor& x, int t_out) {
    if (x.rank() != 4) throw ShapeError("persistence expects [B,T,H,W]");
    if (t_out < 1) throw ConfigError("persistence: t_out must be >= 1");
    const int b = x.dim(0), t_in = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out({b, t_out, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int n = 0; n < b; ++n) {
        const double* last = x.data() + ((static_cast<std::int64_t>(n) * t_in) + t_in - 1) * plane;
        for (int t = 0; t < t_out; ++t) {
            std::copy(last, last + plane,
                      out.data() + ((static_cast<std::int64_t>(n) * t_out) + t) * plane);
        }
    }
    return out;
}

ParamReport count_parameters(const Model& m) {
    ParamReport r;
    m.visit_params([&](const std::string& path, Tensor& t) {
        const std::int64_t n = t.numel();
        r.per_path.emplace_back(path, n);
        r.total += n;
        const bool is_enc = path.rfind("encoder.", 0) == 0;
        const bool is_dec = path.rfind("decoder.", 0) == 0;
        const bool is_cbam = path.find(".cbam.") != std::string::npos;
        const bool is_convblock =
            !is_cbam && (path.find(".conv1.") != std::string::npos ||
                         path.find(".conv2.") != std::string::npos ||
                         path.find(".norm1.") != std::string::npos ||
                         path.find(".norm2.") != std::string::npos ||
                         path.find("head.") != std::string::npos);
        if (is_enc) r.encoder += n;
        if (is_dec) r.decoder += n;
        if (is_cbam) r.cbam_only += n;
        if (is_convblock) r.conv_only += n;
        if (is_dec && is_cbam) r.decoder_cbam += n;
        if (is_dec && !is_cbam) r.decoder_conv += n;
    });
    return r;
}

// --- checkpoints ---------------------------------------------------------------

void save_checkpoint(const Model& m, const std::string& dir) {
    if (dir.empty()) throw DataError("checkpoint path is empty");
    fs::create_directories(fs::path(dir) / "params");
    {
        std::ofstream cfg(fs::path(dir) / "config.json");
        if (!cfg) throw DataError("cannot write checkpoint config in " + dir);
        cfg << model_config_to_json(m.kind, m.cfg) << "\n";
    }
    std::ostringstream manifest;
    m.visit_params([&](const std::string& path, Tensor& t) {
        const std::string file = "params/" + path + ".t32";
        save_tensor(t, (fs::path(dir) / file).string());
        manifest << path << " " << file << " " << t.rank();
        for (int i = 0; i < t.rank(); ++i) manifest << " " << t.dim(i);
        manifest << "\n";
    });
    std::ofstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw DataError("cannot write checkpoint manifest in " + dir);
    mf << manifest.str();
}

Model load_checkpoint(const std::string& dir) {
    if (dir.empty()) throw DataError("checkpoint path is empty");
    std::ifstream cfg_in(fs::path(dir) / "config.json");
    if (!cfg_in) throw DataError("missing config.json in checkpoint " + dir);
    std::stringstream buf;
    buf << cfg_in.rdbuf();
    ModelKind kind{};
    ModelConfig cfg;
    model_config_from_json(buf.str(), &kind, &cfg);
    Model m = Model::build(kind, cfg, /*seed=*/0);

    std::ifstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw DataError("missing manifest.txt in checkpoint " + dir);
    struct Entry {
        std::string file;
        Shape shape;
    };
    std::map<std::string, Entry> entries;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string path, file;
        int rank = -1;
        if (!(ls >> path >> file >> rank) || rank < 0) {
            throw DataError("bad manifest line in " + dir + ": " + line);
        }
        Entry e;
        e.file = file;
        e.shape.resize(static_cast<std::size_t>(rank));
        for (int i = 0; i < rank; ++i) {
            if (!(ls >> e.shape[static_cast<std::size_t>(i)])) {
                throw DataError("bad manifest shape in " + dir + ": " + line);
            }
        }
        entries[path] = std::move(e);
    }

    std::size_t used = 0;
    m.visit_params([&](const std::string& path, Tensor& t) {
        auto it = entries.find(path);
        if (it == entries.end()) {
            throw DataError("checkpoint " + dir + " is missing parameter " + path);
        }
        if (it->second.shape != t.shape()) {
            throw DataError("checkpoint parameter " + path + " has shape " +
                            shape_str(it->second.shape) + ", model expects " +
                            shape_str(t.shape()));
        }
        Tensor stored = load_tensor((fs::path(dir) / it->second.file).string());
        if (stored.shape() != t.shape()) {
            throw DataError("checkpoint tensor file for " + path + " has shape " +
                            shape_str(stored.shape()) + ", manifest declares " +
                            shape_str(it->second.shape));
        }
        std::copy(stored.data(), stored.data() + stored.numel(), t.data());
        ++used;
    });
    if (used != entries.size()) {
        throw DataError("checkpoint " + dir + " contains " +
                        std::to_string(entries.size() - used) + " unknown parameters");
    }
    return m;
}

}  // namespace aanc
