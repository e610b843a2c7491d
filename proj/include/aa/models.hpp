#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aa/tensor.hpp"

namespace aa {

enum class ModelKind { dAE, sAE, dVAE, sVAE, sAE_GAN, AnoVAEGAN };

bool is_variational(ModelKind kind);
bool is_adversarial(ModelKind kind);
std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

// Bottleneck layout: a flat vector of size d, or an h x w feature map with c
// channels where h,w must equal the encoder's final feature-map size.
struct LatentSpec {
    enum class Kind { Dense, Spatial };
    Kind kind = Kind::Dense;
    int d = 0;
    int h = 0, w = 0, c = 0;

    static LatentSpec dense(int d);
    static LatentSpec spatial(int h, int w, int c);
    std::string to_string() const;                       // "dense:128" / "spatial:8x8x32"
    static LatentSpec parse(const std::string& text);
    bool operator==(const LatentSpec&) const = default;
};

struct ModelConfig {
    int input_h = 64;
    int input_w = 64;
    int stages = 3;
    int base_width = 16;
    float leaky_slope = 0.2f;
    bool operator==(const ModelConfig&) const = default;
};

struct NamedParam {
    std::string name;
    TensorPtr tensor;
};

// Named weight collection for encoder ("enc."), decoder ("dec.") and the
// optional discriminator ("dis."), plus the architecture that shaped them.
struct ModelParams {
    ModelKind kind = ModelKind::sAE;
    LatentSpec latent;
    ModelConfig config;
    std::vector<NamedParam> entries;

    TensorPtr find(const std::string& name) const;
    std::vector<TensorPtr> group(const std::string& prefix) const;
    std::vector<TensorPtr> generator_params() const;  // encoder + decoder
    std::size_t parameter_count() const;
};

struct EncoderOutput {
    bool variational = false;
    TensorPtr code;            // non-variational kinds
    TensorPtr mu, logvar;      // variational kinds; logvar already clamped
};

struct ReparamMode {
    enum class Kind { Sample, Mean };
    Kind kind = Kind::Mean;
    std::uint64_t seed = 0;
    static ReparamMode sample(std::uint64_t seed) { return {Kind::Sample, seed}; }
    static ReparamMode mean() { return {Kind::Mean, 0}; }
};

// Deterministic He-style initialization from the seed. The trunk is identical
// across kinds sharing a LatentSpec; variational kinds add a second head and
// adversarial kinds add the discriminator.
ModelParams build_model(ModelKind kind, const LatentSpec& latent, const ModelConfig& config, std::uint64_t seed);

EncoderOutput encode(Tape& tape, const ModelParams& params, const TensorPtr& x);
TensorPtr reparameterize(Tape& tape, const EncoderOutput& out, const ReparamMode& mode);
TensorPtr decode(Tape& tape, const ModelParams& params, const TensorPtr& z);
TensorPtr discriminate(Tape& tape, const ModelParams& params, const TensorPtr& x);

// encode -> (mean for variational kinds) -> decode; deterministic.
TensorPtr reconstruct(Tape& tape, const ModelParams& params, const TensorPtr& x);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace aa
