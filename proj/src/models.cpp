#include "aa/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "aa/error.hpp"
#include "aa/ops.hpp"
#include "aa/rng.hpp"

namespace aa {

bool is_variational(ModelKind kind) {
    return kind == ModelKind::dVAE || kind == ModelKind::sVAE || kind == ModelKind::AnoVAEGAN;
}

bool is_adversarial(ModelKind kind) {
    return kind == ModelKind::sAE_GAN || kind == ModelKind::AnoVAEGAN;
}

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::dAE: return "dae";
        case ModelKind::sAE: return "sae";
        case ModelKind::dVAE: return "dvae";
        case ModelKind::sVAE: return "svae";
        case ModelKind::sAE_GAN: return "saegan";
        case ModelKind::AnoVAEGAN: return "anovaegan";
    }
    throw ContractError("unknown model kind");
}

ModelKind parse_model_kind(const std::string& name) {
    if (name == "dae") return ModelKind::dAE;
    if (name == "sae") return ModelKind::sAE;
    if (name == "dvae") return ModelKind::dVAE;
    if (name == "svae") return ModelKind::sVAE;
    if (name == "saegan") return ModelKind::sAE_GAN;
    if (name == "anovaegan") return ModelKind::AnoVAEGAN;
    throw ConfigError("unknown model kind '" + name + "' (expected dae|sae|dvae|svae|saegan|anovaegan)");
}

LatentSpec LatentSpec::dense(int d) {
    if (d <= 0) {
        throw ConfigError("dense latent needs d > 0, got " + std::to_string(d));
    }
    LatentSpec s;
    s.kind = Kind::Dense;
    s.d = d;
    return s;
}

LatentSpec LatentSpec::spatial(int h, int w, int c) {
    if (h <= 0 || w <= 0 || c <= 0) {
        throw ConfigError("spatial latent needs positive h,w,c");
    }
    LatentSpec s;
    s.kind = Kind::Spatial;
    s.h = h;
    s.w = w;
    s.c = c;
    return s;
}

std::string LatentSpec::to_string() const {
    if (kind == Kind::Dense) {
        return "dense:" + std::to_string(d);
    }
    return "spatial:" + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

LatentSpec LatentSpec::parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        throw ConfigError("latent spec '" + text + "' must be dense:D or spatial:HxWxC");
    }
    const std::string head = text.substr(0, colon);
    const std::string rest = text.substr(colon + 1);
    try {
        if (head == "dense") {
            return dense(std::stoi(rest));
        }
        if (head == "spatial") {
            const auto x1 = rest.find('x');
            const auto x2 = rest.find('x', x1 + 1);
            if (x1 == std::string::npos || x2 == std::string::npos) {
                throw ConfigError("spatial latent '" + rest + "' must be HxWxC");
            }
            return spatial(std::stoi(rest.substr(0, x1)), std::stoi(rest.substr(x1 + 1, x2 - x1 - 1)),
                           std::stoi(rest.substr(x2 + 1)));
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("latent spec '" + text + "' has non-numeric fields");
    }
    throw ConfigError("latent spec '" + text + "' must start with dense: or spatial:");
}

TensorPtr ModelParams::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) {
            return e.tensor;
        }
    }
    throw ContractError("model has no parameter '" + name + "'");
}

std::vector<TensorPtr> ModelParams::group(const std::string& prefix) const {
    std::vector<TensorPtr> out;
    for (const auto& e : entries) {
        if (e.name.rfind(prefix, 0) == 0) {
            out.push_back(e.tensor);
        }
    }
    return out;
}

std::vector<TensorPtr> ModelParams::generator_params() const {
    auto out = group("enc.");
    for (auto& t : group("dec.")) {
        out.push_back(t);
    }
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) {
        n += e.tensor->numel();
    }
    return n;
}

namespace {

std::vector<int> stage_widths(const ModelConfig& cfg) {
    std::vector<int> w(static_cast<std::size_t>(cfg.stages));
    for (int s = 0; s < cfg.stages; ++s) {
        w[static_cast<std::size_t>(s)] = cfg.base_width << s;
    }
    return w;
}

struct Builder {
    Rng rng;
    std::vector<NamedParam>* entries;

    void conv(const std::string& name, int out_ch, int in_ch, int k, float bias_init = 0.0f) {
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
        std::vector<float> w(static_cast<std::size_t>(out_ch) * in_ch * k * k);
        for (auto& v : w) {
            v = static_cast<float>(rng.normal() * std_dev);
        }
        entries->push_back({name + ".w", Tensor::make({out_ch, in_ch, k, k}, std::move(w), true)});
        entries->push_back({name + ".b", Tensor::full({out_ch}, bias_init, true)});
    }

    void fc(const std::string& name, int in_dim, int out_dim, float bias_init = 0.0f) {
        const double std_dev = std::sqrt(2.0 / static_cast<double>(in_dim));
        std::vector<float> w(static_cast<std::size_t>(in_dim) * out_dim);
        for (auto& v : w) {
            v = static_cast<float>(rng.normal() * std_dev);
        }
        entries->push_back({name + ".w", Tensor::make({in_dim, out_dim}, std::move(w), true)});
        entries->push_back({name + ".b", Tensor::full({out_dim}, bias_init, true)});
    }
};

// Initial decoder output bias; sigmoid(-1.7) ~ 0.15, near the data mean.
constexpr float kOutputBiasInit = -1.7f;
constexpr float kLogvarClampAbs = 10.0f;

}  // namespace

ModelParams build_model(ModelKind kind, const LatentSpec& latent, const ModelConfig& config, std::uint64_t seed) {
    if (config.stages < 1 || config.base_width < 1) {
        throw ConfigError("model config needs stages >= 1 and base_width >= 1");
    }
    if (!(config.leaky_slope >= 0.0f && config.leaky_slope < 1.0f)) {
        throw ConfigError("leaky_slope must be in [0,1)");
    }
    const int div = 1 << config.stages;
    if (config.input_h % div != 0 || config.input_w % div != 0) {
        throw ConfigError("input " + std::to_string(config.input_h) + "x" + std::to_string(config.input_w) +
                          " is not divisible by 2^" + std::to_string(config.stages));
    }
    const int fh = config.input_h / div;
    const int fw = config.input_w / div;
    if (latent.kind == LatentSpec::Kind::Spatial && (latent.h != fh || latent.w != fw)) {
        throw ConfigError("spatial latent " + latent.to_string() + " does not match the encoder feature map " +
                          std::to_string(fh) + "x" + std::to_string(fw));
    }

    ModelParams params;
    params.kind = kind;
    params.latent = latent;
    params.config = config;
    Builder b{Rng(seed), &params.entries};

    const auto widths = stage_widths(config);
    const int top = widths.back();
    const int flat = top * fh * fw;
    const bool variational = is_variational(kind);

    int in_ch = 1;
    for (int s = 0; s < config.stages; ++s) {
        b.conv("enc.conv" + std::to_string(s), widths[static_cast<std::size_t>(s)], in_ch, 3);
        in_ch = widths[static_cast<std::size_t>(s)];
    }
    if (latent.kind == LatentSpec::Kind::Spatial) {
        if (variational) {
            b.conv("enc.mu", latent.c, top, 1);
            b.conv("enc.logvar", latent.c, top, 1);
        } else {
            b.conv("enc.code", latent.c, top, 1);
        }
        b.conv("dec.in", top, latent.c, 1);
    } else {
        if (variational) {
            b.fc("enc.mu", flat, latent.d);
            b.fc("enc.logvar", flat, latent.d);
        } else {
            b.fc("enc.code", flat, latent.d);
        }
        b.fc("dec.in", latent.d, flat);
    }
    int ch = top;
    for (int s = 0; s < config.stages; ++s) {
        const int out_ch = widths[static_cast<std::size_t>(std::max(config.stages - 2 - s, 0))];
        b.conv("dec.conv" + std::to_string(s), out_ch, ch, 3);
        ch = out_ch;
    }
    b.conv("dec.out", 1, ch, 3, kOutputBiasInit);

    if (is_adversarial(kind)) {
        in_ch = 1;
        for (int s = 0; s < config.stages; ++s) {
            b.conv("dis.conv" + std::to_string(s), widths[static_cast<std::size_t>(s)], in_ch, 3);
            in_ch = widths[static_cast<std::size_t>(s)];
        }
        b.fc("dis.fc", top, 1);
    }
    return params;
}

namespace {

void check_input_shape(const ModelParams& params, const TensorPtr& x) {
    if (x->rank() != 4 || x->dim(1) != 1 || x->dim(2) != params.config.input_h ||
        x->dim(3) != params.config.input_w) {
        throw DimensionError("expected input [N,1," + std::to_string(params.config.input_h) + "," +
                             std::to_string(params.config.input_w) + "], got " + shape_str(x->shape()));
    }
}

TensorPtr conv_stack(Tape& tape, const ModelParams& params, const TensorPtr& x, const std::string& prefix) {
    TensorPtr h = x;
    for (int s = 0; s < params.config.stages; ++s) {
        const std::string name = prefix + "conv" + std::to_string(s);
        h = conv2d(tape, h, params.find(name + ".w"), 2, 1);
        h = bias_channels(tape, h, params.find(name + ".b"));
        h = leaky_relu(tape, h, params.config.leaky_slope);
    }
    return h;
}

}  // namespace

EncoderOutput encode(Tape& tape, const ModelParams& params, const TensorPtr& x) {
    check_input_shape(params, x);
    auto h = conv_stack(tape, params, x, "enc.");

    EncoderOutput out;
    out.variational = is_variational(params.kind);
    const bool spatial = params.latent.kind == LatentSpec::Kind::Spatial;
    auto head = [&](const std::string& name) {
        if (spatial) {
            return bias_channels(tape, conv2d(tape, h, params.find(name + ".w"), 1, 0), params.find(name + ".b"));
        }
        return dense(tape, flatten2d(tape, h), params.find(name + ".w"), params.find(name + ".b"));
    };
    if (out.variational) {
        out.mu = head("enc.mu");
        out.logvar = clamp(tape, head("enc.logvar"), -kLogvarClampAbs, kLogvarClampAbs);
    } else {
        out.code = head("enc.code");
    }
    return out;
}

TensorPtr reparameterize(Tape& tape, const EncoderOutput& out, const ReparamMode& mode) {
    if (!out.variational) {
        throw ContractError("reparameterize() requires a variational encoder output");
    }
    if (mode.kind == ReparamMode::Kind::Mean) {
        return out.mu;
    }
    Rng rng(mode.seed);
    std::vector<float> noise(out.mu->numel());
    for (auto& v : noise) {
        v = rng.normal_f();
    }
    auto eps = Tensor::make(out.mu->shape(), std::move(noise));
    auto sigma = exp_elem(tape, scale(tape, out.logvar, 0.5f));
    return add(tape, out.mu, mul(tape, sigma, eps));
}

TensorPtr decode(Tape& tape, const ModelParams& params, const TensorPtr& z) {
    const auto& cfg = params.config;
    const int fh = cfg.input_h >> cfg.stages;
    const int fw = cfg.input_w >> cfg.stages;
    const int top = cfg.base_width << (cfg.stages - 1);

    TensorPtr h;
    if (params.latent.kind == LatentSpec::Kind::Spatial) {
        if (z->rank() != 4 || z->dim(1) != params.latent.c || z->dim(2) != fh || z->dim(3) != fw) {
            throw DimensionError("expected latent [N," + std::to_string(params.latent.c) + "," +
                                 std::to_string(fh) + "," + std::to_string(fw) + "], got " + shape_str(z->shape()));
        }
        h = bias_channels(tape, conv2d(tape, z, params.find("dec.in.w"), 1, 0), params.find("dec.in.b"));
    } else {
        if (z->rank() != 2 || z->dim(1) != params.latent.d) {
            throw DimensionError("expected latent [N," + std::to_string(params.latent.d) + "], got " +
                                 shape_str(z->shape()));
        }
        h = dense(tape, z, params.find("dec.in.w"), params.find("dec.in.b"));
        h = reshape(tape, h, {z->dim(0), top, fh, fw});
    }
    h = leaky_relu(tape, h, cfg.leaky_slope);
    for (int s = 0; s < cfg.stages; ++s) {
        const std::string name = "dec.conv" + std::to_string(s);
        h = upsample_nearest(tape, h, 2);
        h = conv2d(tape, h, params.find(name + ".w"), 1, 1);
        h = bias_channels(tape, h, params.find(name + ".b"));
        h = leaky_relu(tape, h, cfg.leaky_slope);
    }
    h = conv2d(tape, h, params.find("dec.out.w"), 1, 1);
    h = bias_channels(tape, h, params.find("dec.out.b"));
    return sigmoid(tape, h);
}

TensorPtr discriminate(Tape& tape, const ModelParams& params, const TensorPtr& x) {
    if (!is_adversarial(params.kind)) {
        throw ContractError("discriminate() requires an adversarial kind, got " + to_string(params.kind));
    }
    check_input_shape(params, x);
    auto h = conv_stack(tape, params, x, "dis.");
    auto pooled = global_avg_pool(tape, h);
    auto score = sigmoid(tape, dense(tape, pooled, params.find("dis.fc.w"), params.find("dis.fc.b")));
    return reshape(tape, score, {x->dim(0)});
}

TensorPtr reconstruct(Tape& tape, const ModelParams& params, const TensorPtr& x) {
    auto enc = encode(tape, params, x);
    auto z = enc.variational ? reparameterize(tape, enc, ReparamMode::mean()) : enc.code;
    return decode(tape, params, z);
}

namespace {

constexpr char kCheckpointMagic[] = "AACKPT1";
constexpr std::size_t kMagicLen = 7;

void append_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    append_u32_le(out, bits);
}

std::uint32_t read_u32_le(const std::string& buf, std::size_t at) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + 1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + 2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + 3])) << 24);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    nlohmann::json manifest;
    manifest["kind"] = to_string(params.kind);
    manifest["latent"] = params.latent.to_string();
    manifest["config"] = {{"input_h", params.config.input_h},
                          {"input_w", params.config.input_w},
                          {"stages", params.config.stages},
                          {"base_width", params.config.base_width},
                          {"leaky_slope", params.config.leaky_slope}};
    manifest["params"] = nlohmann::json::array();
    for (const auto& e : params.entries) {
        manifest["params"].push_back({{"name", e.name}, {"shape", e.tensor->shape()}});
    }
    const std::string text = manifest.dump();

    std::string blob;
    blob.append(kCheckpointMagic, kMagicLen);
    append_u32_le(blob, static_cast<std::uint32_t>(text.size()));
    blob.append(text);
    for (const auto& e : params.entries) {
        for (float v : e.tensor->data) {
            append_f32_le(blob, v);
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open checkpoint for writing: " + path);
    }
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw DataError("short write on checkpoint: " + path);
    }
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint: " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string blob = ss.str();

    if (blob.size() < kMagicLen + 4 || blob.compare(0, kMagicLen, kCheckpointMagic) != 0) {
        throw DataError("checkpoint " + path + ": bad magic at byte 0");
    }
    const std::uint32_t text_len = read_u32_le(blob, kMagicLen);
    const std::size_t payload_at = kMagicLen + 4 + text_len;
    if (blob.size() < payload_at) {
        throw DataError("checkpoint " + path + ": truncated manifest at byte " + std::to_string(blob.size()));
    }

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(blob.substr(kMagicLen + 4, text_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("checkpoint " + path + ": manifest parse error: " + e.what());
    }

    ModelConfig cfg;
    const auto& jc = manifest.at("config");
    cfg.input_h = jc.at("input_h").get<int>();
    cfg.input_w = jc.at("input_w").get<int>();
    cfg.stages = jc.at("stages").get<int>();
    cfg.base_width = jc.at("base_width").get<int>();
    cfg.leaky_slope = jc.at("leaky_slope").get<float>();

    auto params = build_model(parse_model_kind(manifest.at("kind").get<std::string>()),
                              LatentSpec::parse(manifest.at("latent").get<std::string>()), cfg, 0);

    const auto& plist = manifest.at("params");
    if (plist.size() != params.entries.size()) {
        throw DataError("checkpoint " + path + ": expected " + std::to_string(params.entries.size()) +
                        " parameter entries, found " + std::to_string(plist.size()));
    }
    std::size_t offset = payload_at;
    for (std::size_t i = 0; i < plist.size(); ++i) {
        const std::string name = plist[i].at("name").get<std::string>();
        const auto shape = plist[i].at("shape").get<std::vector<int>>();
        auto& entry = params.entries[i];
        if (entry.name != name || entry.tensor->shape() != shape) {
            throw DataError("checkpoint " + path + ": entry '" + name + "' with shape " + shape_str(shape) +
                            " does not match expected '" + entry.name + "' " + shape_str(entry.tensor->shape()));
        }
        const std::size_t bytes = entry.tensor->numel() * 4;
        if (blob.size() < offset + bytes) {
            throw DataError("checkpoint " + path + ": truncated payload at byte " + std::to_string(blob.size()));
        }
        for (std::size_t j = 0; j < entry.tensor->numel(); ++j) {
            const std::uint32_t bits = read_u32_le(blob, offset + j * 4);
            float f;
            std::memcpy(&f, &bits, sizeof(f));
            entry.tensor->data[j] = f;
        }
        offset += bytes;
    }
    if (offset != blob.size()) {
        throw DataError("checkpoint " + path + ": " + std::to_string(blob.size() - offset) +
                        " trailing bytes at byte " + std::to_string(offset));
    }
    return params;
}

}  // namespace aa
