#include "aa/training.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "aa/error.hpp"
#include "aa/ops.hpp"
#include "aa/rng.hpp"

namespace aa {

LossWeights LossWeights::for_kind(ModelKind kind, float l1, float l2, float l3) {
    LossWeights w;
    w.lambda1 = l1;
    w.lambda2 = is_variational(kind) ? l2 : 0.0f;
    w.lambda3 = is_adversarial(kind) ? l3 : 0.0f;
    return w;
}

void LossWeights::validate(ModelKind kind) const {
    if (lambda1 < 0.0f || lambda2 < 0.0f || lambda3 < 0.0f) {
        throw ConfigError("loss weights must be >= 0");
    }
    if (!is_variational(kind) && lambda2 != 0.0f) {
        throw ContractError("lambda2 must be 0 for non-variational kind " + to_string(kind));
    }
    if (!is_adversarial(kind) && lambda3 != 0.0f) {
        throw ContractError("lambda3 must be 0 for non-adversarial kind " + to_string(kind));
    }
}

float LossReport::first_epoch_mean_rec() const {
    if (epoch_mean_rec.empty()) {
        throw ContractError("empty loss report");
    }
    return epoch_mean_rec.front();
}

float LossReport::last_epoch_mean_rec() const {
    if (epoch_mean_rec.empty()) {
        throw ContractError("empty loss report");
    }
    return epoch_mean_rec.back();
}

void LossReport::write_csv(std::ostream& out) const {
    out << "step,epoch,l_rec,l_prior,l_adv,l_dis\n";
    char buf[64];
    auto field = [&](const std::optional<float>& v) {
        if (!v) {
            return std::string();
        }
        std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(*v));
        return std::string(buf);
    };
    for (const auto& s : steps) {
        std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(s.l_rec));
        out << s.step << ',' << s.epoch << ',' << buf << ',' << field(s.l_prior) << ',' << field(s.l_adv) << ','
            << field(s.l_dis) << '\n';
    }
}

TensorPtr rec_loss(Tape& tape, const TensorPtr& x, const TensorPtr& xhat) {
    if (x->shape() != xhat->shape()) {
        throw DimensionError("rec_loss: shape mismatch " + shape_str(x->shape()) + " vs " +
                             shape_str(xhat->shape()));
    }
    const int n = x->dim(0);
    return scale(tape, sum_all(tape, abs_elem(tape, sub(tape, x, xhat))), 1.0f / static_cast<float>(n));
}

TensorPtr kl_loss(Tape& tape, const TensorPtr& mu, const TensorPtr& logvar) {
    if (mu->shape() != logvar->shape()) {
        throw DimensionError("kl_loss: shape mismatch " + shape_str(mu->shape()) + " vs " +
                             shape_str(logvar->shape()));
    }
    const int n = mu->dim(0);
    const double inv_n = 1.0 / static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu->numel(); ++i) {
        const double m = mu->data[i];
        const double lv = logvar->data[i];
        acc += m * m + std::exp(lv) - 1.0 - lv;
    }
    const double value = 0.5 * acc * inv_n;
    auto out = Tensor::scalar(static_cast<float>(value));
    out->precise = value;
    out->has_precise = true;
    tape.record(out, {mu, logvar}, [mu, logvar, out, inv_n]() {
        const float g = out->grad[0] * static_cast<float>(inv_n);
        for (std::size_t i = 0; i < mu->numel(); ++i) {
            if (mu->requires_grad()) {
                mu->grad[i] += g * mu->data[i];
            }
            if (logvar->requires_grad()) {
                logvar->grad[i] += g * 0.5f * (std::exp(logvar->data[i]) - 1.0f);
            }
        }
    });
    return out;
}

namespace {

constexpr float kProbClamp = 1e-7f;

}  // namespace

TensorPtr adv_loss(Tape& tape, const TensorPtr& d_on_recon) {
    auto p = clamp(tape, d_on_recon, kProbClamp, 1.0f - kProbClamp);
    return scale(tape, mean_all(tape, log_elem(tape, p)), -1.0f);
}

TensorPtr disc_loss(Tape& tape, const TensorPtr& d_real, const TensorPtr& d_fake) {
    if (d_real->shape() != d_fake->shape()) {
        throw DimensionError("disc_loss: shape mismatch " + shape_str(d_real->shape()) + " vs " +
                             shape_str(d_fake->shape()));
    }
    auto pr = clamp(tape, d_real, kProbClamp, 1.0f - kProbClamp);
    auto ones = Tensor::full(d_fake->shape(), 1.0f);
    auto pf = clamp(tape, sub(tape, ones, d_fake), kProbClamp, 1.0f - kProbClamp);
    auto logs = add(tape, log_elem(tape, pr), log_elem(tape, pf));
    return scale(tape, mean_all(tape, logs), -1.0f);
}

AdamOptimizer::AdamOptimizer(std::vector<TensorPtr> params, float beta1, float beta2, float eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    state_.reserve(params_.size());
    for (const auto& p : params_) {
        p->set_requires_grad(true);
        state_.push_back({std::vector<float>(p->numel(), 0.0f), std::vector<float>(p->numel(), 0.0f)});
    }
}

void AdamOptimizer::step(float lr) {
    ++step_count_;
    const float c1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(beta1_), step_count_));
    const float c2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(beta2_), step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        auto& mom = state_[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const float g = p.grad[j];
            mom.m[j] = beta1_ * mom.m[j] + (1.0f - beta1_) * g;
            mom.v[j] = beta2_ * mom.v[j] + (1.0f - beta2_) * g * g;
            const float mhat = mom.m[j] / c1;
            const float vhat = mom.v[j] / c2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) {
        p->zero_grad();
    }
}

namespace {

std::vector<std::vector<float>> snapshot_grads(const std::vector<TensorPtr>& params) {
    std::vector<std::vector<float>> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.push_back(p->grad);
    }
    return out;
}

void restore_grads(const std::vector<TensorPtr>& params, const std::vector<std::vector<float>>& grads) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->grad = grads[i];
    }
}

void require_finite(float value, const char* term, int step) {
    if (!std::isfinite(value)) {
        throw NumericError(std::string(term) + " became non-finite at step " + std::to_string(step));
    }
}

// Independent seed streams derived from the config seed.
constexpr std::uint64_t kShuffleStream = 0x01;
constexpr std::uint64_t kNoiseStream = 0x02;

}  // namespace

TrainResult train(ModelKind kind, const LatentSpec& latent, const ModelConfig& mcfg, const SliceDataset& data,
                  const TrainConfig& cfg) {
    if (data.slices.empty()) {
        throw ConfigError("training set is empty");
    }
    if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr_rec > 0.0f) || !(cfg.lr_adv > 0.0f)) {
        throw ConfigError("train config needs epochs >= 1, batch_size >= 1 and positive learning rates");
    }
    cfg.weights.validate(kind);
    const std::size_t slice_len = static_cast<std::size_t>(data.height) * data.width;
    for (const auto& s : data.slices) {
        if (s.size() != slice_len) {
            throw DimensionError("slice buffer does not match " + std::to_string(data.height) + "x" +
                                 std::to_string(data.width));
        }
    }

    auto params = build_model(kind, latent, mcfg, cfg.seed);
    const bool variational = is_variational(kind);
    const bool adversarial = is_adversarial(kind);
    const auto gen_params = params.generator_params();

    AdamOptimizer adam_rec(gen_params);
    AdamOptimizer adam_adv(gen_params);
    AdamOptimizer adam_dis(params.group("dis."));

    Rng shuffle_rng(mix_seed(cfg.seed, kShuffleStream));
    const int n_slices = static_cast<int>(data.slices.size());
    std::vector<int> order(static_cast<std::size_t>(n_slices));
    std::iota(order.begin(), order.end(), 0);

    LossReport report;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = n_slices - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, i));
            std::swap(order[static_cast<std::size_t>(i)], order[j]);
        }
        double epoch_rec = 0.0;
        int epoch_count = 0;
        for (int at = 0; at < n_slices; at += cfg.batch_size) {
            const int n = std::min(cfg.batch_size, n_slices - at);
            std::vector<float> batch(static_cast<std::size_t>(n) * slice_len);
            for (int b = 0; b < n; ++b) {
                const auto& s = data.slices[static_cast<std::size_t>(order[static_cast<std::size_t>(at + b)])];
                std::copy(s.begin(), s.end(), batch.begin() + static_cast<std::size_t>(b) * slice_len);
            }
            auto x = Tensor::make({n, 1, data.height, data.width}, std::move(batch));

            Tape tape;
            auto enc = encode(tape, params, x);
            auto z = variational
                         ? reparameterize(tape, enc,
                                          ReparamMode::sample(mix_seed(mix_seed(cfg.seed, kNoiseStream),
                                                                       static_cast<std::uint64_t>(step))))
                         : enc.code;
            auto xhat = decode(tape, params, z);

            StepLosses row;
            row.step = step;
            row.epoch = epoch;

            auto l_rec = rec_loss(tape, x, xhat);
            row.l_rec = l_rec->item();
            require_finite(row.l_rec, "l_rec", step);

            TensorPtr gen_objective;
            if (cfg.weights.lambda1 > 0.0f) {
                gen_objective = scale(tape, l_rec, cfg.weights.lambda1);
            }
            if (variational) {
                auto l_prior = kl_loss(tape, enc.mu, enc.logvar);
                row.l_prior = l_prior->item();
                require_finite(*row.l_prior, "l_prior", step);
                if (cfg.weights.lambda2 > 0.0f) {
                    auto scaled = scale(tape, l_prior, cfg.weights.lambda2);
                    gen_objective = gen_objective ? add(tape, gen_objective, scaled) : scaled;
                }
            }

            std::vector<std::vector<float>> rec_grads;
            if (gen_objective) {
                for (auto& p : gen_params) {
                    p->zero_grad();
                }
                tape.backward(gen_objective);
                rec_grads = snapshot_grads(gen_params);
            }

            std::vector<std::vector<float>> adv_grads;
            if (adversarial && cfg.weights.lambda3 > 0.0f) {
                auto d_fake = discriminate(tape, params, xhat);
                auto l_adv = adv_loss(tape, d_fake);
                row.l_adv = l_adv->item() * cfg.weights.lambda3;
                require_finite(*row.l_adv, "l_adv", step);
                for (auto& p : gen_params) {
                    p->zero_grad();
                }
                tape.backward(scale(tape, l_adv, cfg.weights.lambda3));
                adv_grads = snapshot_grads(gen_params);
            }

            if (adversarial) {
                Tape dis_tape;
                auto d_real = discriminate(dis_tape, params, x);
                auto d_fake = discriminate(dis_tape, params, xhat->detach());
                auto l_dis = disc_loss(dis_tape, d_real, d_fake);
                row.l_dis = l_dis->item();
                require_finite(*row.l_dis, "l_dis", step);
                adam_dis.zero_grad();
                dis_tape.backward(l_dis);
            }

            // All gradients are taken at the pre-step weights; updates are
            // applied generator first, then discriminator.
            if (!rec_grads.empty()) {
                restore_grads(gen_params, rec_grads);
                adam_rec.step(cfg.lr_rec);
            }
            if (!adv_grads.empty()) {
                restore_grads(gen_params, adv_grads);
                adam_adv.step(cfg.lr_adv);
            }
            if (adversarial) {
                adam_dis.step(cfg.lr_adv);
            }

            epoch_rec += row.l_rec;
            ++epoch_count;
            report.steps.push_back(row);
            ++step;
        }
        report.epoch_mean_rec.push_back(static_cast<float>(epoch_rec / epoch_count));
    }
    return TrainResult{std::move(params), std::move(report)};
}

}  // namespace aa
