#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "aa/models.hpp"
#include "aa/tensor.hpp"

namespace aa {

struct LossWeights {
    float lambda1 = 1.0f;
    float lambda2 = 1.0f;
    float lambda3 = 1.0f;

    // Zeroes the weights of terms the kind does not have.
    static LossWeights for_kind(ModelKind kind, float l1 = 1.0f, float l2 = 1.0f, float l3 = 1.0f);
    void validate(ModelKind kind) const;
};

struct TrainConfig {
    int epochs = 150;
    int batch_size = 8;
    float lr_rec = 1e-3f;
    float lr_adv = 1e-4f;
    std::uint64_t seed = 0;
    LossWeights weights;
};

struct StepLosses {
    int step = 0;
    int epoch = 0;
    float l_rec = 0.0f;
    std::optional<float> l_prior;
    std::optional<float> l_adv;
    std::optional<float> l_dis;
};

struct LossReport {
    std::vector<StepLosses> steps;
    std::vector<float> epoch_mean_rec;

    float first_epoch_mean_rec() const;
    float last_epoch_mean_rec() const;
    // step,epoch,l_rec,l_prior,l_adv,l_dis with empty fields for inactive terms
    void write_csv(std::ostream& out) const;
};

// Mean over the batch of the per-image summed l1 distance.
TensorPtr rec_loss(Tape& tape, const TensorPtr& x, const TensorPtr& xhat);

// Mean over the batch of 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar). Touches
// only the encoder heads, so decoder weights see no gradient from it.
TensorPtr kl_loss(Tape& tape, const TensorPtr& mu, const TensorPtr& logvar);

// Mean of -log(d), probabilities clamped to [1e-7, 1-1e-7].
TensorPtr adv_loss(Tape& tape, const TensorPtr& d_on_recon);

// Mean of -log(d_real) - log(1 - d_fake), clamped as above.
TensorPtr disc_loss(Tape& tape, const TensorPtr& d_real, const TensorPtr& d_fake);

class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<TensorPtr> params, float beta1 = 0.9f, float beta2 = 0.999f,
                           float eps = 1e-8f);

    void step(float lr);
    void zero_grad();
    const std::vector<TensorPtr>& params() const { return params_; }

private:
    struct Moments {
        std::vector<float> m, v;
    };
    std::vector<TensorPtr> params_;
    std::vector<Moments> state_;
    float beta1_, beta2_, eps_;
    long step_count_ = 0;
};

struct SliceDataset {
    int height = 0;
    int width = 0;
    std::vector<std::vector<float>> slices;  // row-major height*width, values in [0,1]
};

struct TrainResult {
    ModelParams params;
    LossReport report;
};

// Alternating schedule: per minibatch one generator step (rec+prior at
// lr_rec, adversarial contribution at lr_adv via a second optimizer group),
// then for adversarial kinds one discriminator step at lr_adv.
TrainResult train(ModelKind kind, const LatentSpec& latent, const ModelConfig& mcfg, const SliceDataset& data,
                  const TrainConfig& cfg);

}  // namespace aa
