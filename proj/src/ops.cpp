#include "aa/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>

#include "aa/error.hpp"

extern "C" void openblas_set_num_threads(int);

namespace aa {

namespace {

// BLAS stays single-threaded; parallelism lives at the sample loop so results
// do not depend on the BLAS thread pool.
void init_blas() {
    static std::once_flag once;
    std::call_once(once, []() { openblas_set_num_threads(1); });
}

bool tracking(const Tape& tape, std::initializer_list<const TensorPtr*> inputs) {
    if (!tape.grad_enabled()) {
        return false;
    }
    for (const auto* in : inputs) {
        if ((*in)->requires_grad()) {
            return true;
        }
    }
    return false;
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape() != b->shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a->shape()) + " vs " +
                             shape_str(b->shape()));
    }
}

// Scatters x[n] into cols[q*(Ho*Wo) + o] with q=(c*k+ki)*k+kj, o=ho*Wo+wo.
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, float* cols) {
    const int OW = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const int q = (c * k + ki) * k + kj;
                float* dst_base = cols + static_cast<std::size_t>(q) * OW;
                int wo_lo = 0;
                while (wo_lo < Wo && wo_lo * stride - pad + kj < 0) {
                    ++wo_lo;
                }
                int wo_hi = Wo;
                while (wo_hi > wo_lo && (wo_hi - 1) * stride - pad + kj >= W) {
                    --wo_hi;
                }
                for (int ho = 0; ho < Ho; ++ho) {
                    float* dst = dst_base + static_cast<std::size_t>(ho) * Wo;
                    const int hi = ho * stride - pad + ki;
                    if (hi < 0 || hi >= H) {
                        std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(Wo));
                        continue;
                    }
                    const float* src = x + (static_cast<std::size_t>(c) * H + hi) * W;
                    if (wo_lo > 0) {
                        std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(wo_lo));
                    }
                    if (wo_hi < Wo) {
                        std::memset(dst + wo_hi, 0, sizeof(float) * static_cast<std::size_t>(Wo - wo_hi));
                    }
                    if (stride == 1) {
                        std::memcpy(dst + wo_lo, src + (wo_lo - pad + kj),
                                    sizeof(float) * static_cast<std::size_t>(wo_hi - wo_lo));
                    } else {
                        for (int wo = wo_lo; wo < wo_hi; ++wo) {
                            dst[wo] = src[wo * stride - pad + kj];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel, int stride, int padding) {
    if (input->rank() != 4) {
        throw DimensionError("conv2d: input must be [N,C,H,W], got " + shape_str(input->shape()));
    }
    if (kernel->rank() != 4) {
        throw DimensionError("conv2d: kernel must be [F,C,k,k], got " + shape_str(kernel->shape()));
    }
    const int N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
    const int F = kernel->dim(0), KC = kernel->dim(1), k = kernel->dim(2), kw = kernel->dim(3);
    if (k != kw) {
        throw DimensionError("conv2d: kernel must be square, got " + shape_str(kernel->shape()));
    }
    if (k % 2 == 0) {
        throw DimensionError("conv2d: kernel size must be odd, got k=" + std::to_string(k));
    }
    if (KC != C) {
        throw DimensionError("conv2d: input channel axis (" + std::to_string(C) +
                             ") does not match kernel channel axis (" + std::to_string(KC) + ")");
    }
    if (stride < 1 || padding < 0) {
        throw ParamError("conv2d: stride must be >= 1 and padding >= 0");
    }
    const int spanH = H + 2 * padding - k;
    const int spanW = W + 2 * padding - k;
    if (spanH < 0 || spanW < 0) {
        throw DimensionError("conv2d: input " + shape_str(input->shape()) + " with k=" + std::to_string(k) +
                             " stride=" + std::to_string(stride) + " pad=" + std::to_string(padding) +
                             " has no positive output size");
    }
    const int Ho = spanH / stride + 1;
    const int Wo = spanW / stride + 1;
    const int Q = C * k * k;
    const int OW = Ho * Wo;

    init_blas();
    auto out = Tensor::zeros({N, F, Ho, Wo});
    const float* kdata = kernel->data.data();

#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        std::vector<float> cols(static_cast<std::size_t>(Q) * OW);
        im2col(input->data.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride, padding, Ho, Wo,
               cols.data());
        float* on = out->data.data() + static_cast<std::size_t>(n) * F * OW;
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, F, OW, Q, 1.0f, kdata, Q, cols.data(), OW, 0.0f, on,
                    OW);
    }

    if (tracking(tape, {&input, &kernel})) {
        tape.record(out, {input, kernel}, [input, kernel, out, N, C, H, W, F, k, stride, padding, Ho, Wo, Q, OW]() {
            const float* go = out->grad.data();
            if (kernel->requires_grad()) {
                // dK = sum_n dOut_n . cols_n^T, accumulated in sample order.
                std::vector<float> dk(static_cast<std::size_t>(F) * Q, 0.0f);
                std::vector<float> cols(static_cast<std::size_t>(Q) * OW);
                for (int n = 0; n < N; ++n) {
                    im2col(input->data.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride,
                           padding, Ho, Wo, cols.data());
                    const float* gn = go + static_cast<std::size_t>(n) * F * OW;
                    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, F, Q, OW, 1.0f, gn, OW, cols.data(), OW,
                                1.0f, dk.data(), Q);
                }
                for (std::size_t i = 0; i < dk.size(); ++i) {
                    kernel->grad[i] += dk[i];
                }
            }
            if (input->requires_grad()) {
                const float* kdata = kernel->data.data();
#pragma omp parallel for schedule(static)
                for (int n = 0; n < N; ++n) {
                    // dcols = K^T . dOut_n, then col2im scatters back.
                    std::vector<float> dcols(static_cast<std::size_t>(Q) * OW);
                    const float* gn = go + static_cast<std::size_t>(n) * F * OW;
                    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, Q, OW, F, 1.0f, kdata, Q, gn, OW, 0.0f,
                                dcols.data(), OW);
                    float* gi = input->grad.data() + static_cast<std::size_t>(n) * C * H * W;
                    for (int c = 0; c < C; ++c) {
                        for (int ki = 0; ki < k; ++ki) {
                            for (int kj = 0; kj < k; ++kj) {
                                const int q = (c * k + ki) * k + kj;
                                const float* row = dcols.data() + static_cast<std::size_t>(q) * OW;
                                for (int ho = 0; ho < Ho; ++ho) {
                                    const int hi = ho * stride - padding + ki;
                                    if (hi < 0 || hi >= H) {
                                        continue;
                                    }
                                    float* gxrow = gi + (static_cast<std::size_t>(c) * H + hi) * W;
                                    const float* src = row + static_cast<std::size_t>(ho) * Wo;
                                    for (int wo = 0; wo < Wo; ++wo) {
                                        const int wi = wo * stride - padding + kj;
                                        if (wi >= 0 && wi < W) {
                                            gxrow[wi] += src[wo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr bias_channels(Tape& tape, const TensorPtr& x, const TensorPtr& bias) {
    if (x->rank() != 4 || bias->rank() != 1 || bias->dim(0) != x->dim(1)) {
        throw DimensionError("bias_channels: expected [N,C,H,W] + [C], got " + shape_str(x->shape()) + " + " +
                             shape_str(bias->shape()));
    }
    const int N = x->dim(0), C = x->dim(1);
    const std::size_t HW = static_cast<std::size_t>(x->dim(2)) * x->dim(3);
    auto out = Tensor::zeros(x->shape());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
            const float b = bias->data[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < HW; ++i) {
                out->data[base + i] = x->data[base + i] + b;
            }
        }
    }
    if (tracking(tape, {&x, &bias})) {
        tape.record(out, {x, bias}, [x, bias, out, N, C, HW]() {
            if (x->requires_grad()) {
                for (std::size_t i = 0; i < x->grad.size(); ++i) {
                    x->grad[i] += out->grad[i];
                }
            }
            if (bias->requires_grad()) {
                for (int c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                        for (std::size_t i = 0; i < HW; ++i) {
                            s += out->grad[base + i];
                        }
                    }
                    bias->grad[static_cast<std::size_t>(c)] += static_cast<float>(s);
                }
            }
        });
    }
    return out;
}

TensorPtr upsample_nearest(Tape& tape, const TensorPtr& x, int factor) {
    if (factor <= 0) {
        throw ParamError("upsample_nearest: factor must be >= 1, got " + std::to_string(factor));
    }
    if (x->rank() != 4) {
        throw DimensionError("upsample_nearest: input must be [N,C,H,W], got " + shape_str(x->shape()));
    }
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    const int Ho = H * factor, Wo = W * factor;
    auto out = Tensor::zeros({N, C, Ho, Wo});
    for (int nc = 0; nc < N * C; ++nc) {
        const float* src = x->data.data() + static_cast<std::size_t>(nc) * H * W;
        float* dst = out->data.data() + static_cast<std::size_t>(nc) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
            const float* srow = src + static_cast<std::size_t>(ho / factor) * W;
            float* drow = dst + static_cast<std::size_t>(ho) * Wo;
            for (int wo = 0; wo < Wo; ++wo) {
                drow[wo] = srow[wo / factor];
            }
        }
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out, N, C, H, W, factor]() {
            const int Ho = H * factor, Wo = W * factor;
            for (int nc = 0; nc < N * C; ++nc) {
                float* gx = x->grad.data() + static_cast<std::size_t>(nc) * H * W;
                const float* go = out->grad.data() + static_cast<std::size_t>(nc) * Ho * Wo;
                for (int ho = 0; ho < Ho; ++ho) {
                    float* grow = gx + static_cast<std::size_t>(ho / factor) * W;
                    const float* orow = go + static_cast<std::size_t>(ho) * Wo;
                    for (int wo = 0; wo < Wo; ++wo) {
                        grow[wo / factor] += orow[wo];
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr leaky_relu(Tape& tape, const TensorPtr& x, float slope) {
    if (!(slope >= 0.0f && slope < 1.0f)) {
        throw ParamError("leaky_relu: slope must be in [0,1), got " + std::to_string(slope));
    }
    auto out = Tensor::zeros(x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        const float v = x->data[i];
        out->data[i] = v >= 0.0f ? v : slope * v;
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out, slope]() {
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += out->grad[i] * (x->data[i] >= 0.0f ? 1.0f : slope);
            }
        });
    }
    return out;
}

TensorPtr sigmoid(Tape& tape, const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        const float v = x->data[i];
        if (v >= 0.0f) {
            out->data[i] = 1.0f / (1.0f + std::exp(-v));
        } else {
            const float e = std::exp(v);
            out->data[i] = e / (1.0f + e);
        }
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out]() {
            for (std::size_t i = 0; i < x->numel(); ++i) {
                const float s = out->data[i];
                x->grad[i] += out->grad[i] * s * (1.0f - s);
            }
        });
    }
    return out;
}

TensorPtr dense(Tape& tape, const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias) {
    if (x->rank() != 2 || weight->rank() != 2 || bias->rank() != 1) {
        throw DimensionError("dense: expected [N,D] x [D,E] + [E], got " + shape_str(x->shape()) + " x " +
                             shape_str(weight->shape()) + " + " + shape_str(bias->shape()));
    }
    const int N = x->dim(0), D = x->dim(1), DW = weight->dim(0), E = weight->dim(1);
    if (D != DW) {
        throw DimensionError("dense: inner axis mismatch, input D=" + std::to_string(D) + " vs weight D=" +
                             std::to_string(DW));
    }
    if (bias->dim(0) != E) {
        throw DimensionError("dense: bias axis " + std::to_string(bias->dim(0)) + " != E=" + std::to_string(E));
    }
    auto out = Tensor::zeros({N, E});
    std::vector<double> acc(static_cast<std::size_t>(E));
    for (int n = 0; n < N; ++n) {
        for (int e = 0; e < E; ++e) {
            acc[static_cast<std::size_t>(e)] = bias->data[static_cast<std::size_t>(e)];
        }
        const float* xn = x->data.data() + static_cast<std::size_t>(n) * D;
        for (int d = 0; d < D; ++d) {
            const double xv = xn[d];
            const float* wrow = weight->data.data() + static_cast<std::size_t>(d) * E;
            for (int e = 0; e < E; ++e) {
                acc[static_cast<std::size_t>(e)] += xv * wrow[e];
            }
        }
        float* on = out->data.data() + static_cast<std::size_t>(n) * E;
        for (int e = 0; e < E; ++e) {
            on[e] = static_cast<float>(acc[static_cast<std::size_t>(e)]);
        }
    }
    if (tracking(tape, {&x, &weight, &bias})) {
        tape.record(out, {x, weight, bias}, [x, weight, bias, out, N, D, E]() {
            const float* go = out->grad.data();
            if (x->requires_grad()) {
                for (int n = 0; n < N; ++n) {
                    const float* gn = go + static_cast<std::size_t>(n) * E;
                    float* gx = x->grad.data() + static_cast<std::size_t>(n) * D;
                    for (int d = 0; d < D; ++d) {
                        const float* wrow = weight->data.data() + static_cast<std::size_t>(d) * E;
                        double s = 0.0;
                        for (int e = 0; e < E; ++e) {
                            s += static_cast<double>(gn[e]) * wrow[e];
                        }
                        gx[d] += static_cast<float>(s);
                    }
                }
            }
            if (weight->requires_grad()) {
                std::vector<double> dw(static_cast<std::size_t>(E));
                for (int d = 0; d < D; ++d) {
                    std::fill(dw.begin(), dw.end(), 0.0);
                    for (int n = 0; n < N; ++n) {
                        const double xv = x->data[static_cast<std::size_t>(n) * D + d];
                        const float* gn = go + static_cast<std::size_t>(n) * E;
                        for (int e = 0; e < E; ++e) {
                            dw[static_cast<std::size_t>(e)] += xv * gn[e];
                        }
                    }
                    float* gw = weight->grad.data() + static_cast<std::size_t>(d) * E;
                    for (int e = 0; e < E; ++e) {
                        gw[e] += static_cast<float>(dw[static_cast<std::size_t>(e)]);
                    }
                }
            }
            if (bias->requires_grad()) {
                for (int e = 0; e < E; ++e) {
                    double s = 0.0;
                    for (int n = 0; n < N; ++n) {
                        s += go[static_cast<std::size_t>(n) * E + e];
                    }
                    bias->grad[static_cast<std::size_t>(e)] += static_cast<float>(s);
                }
            }
        });
    }
    return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    auto out = Tensor::zeros(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) {
        out->data[i] = a->data[i] + b->data[i];
    }
    if (a->has_precise && b->has_precise && out->numel() == 1) {
        out->precise = a->precise + b->precise;
        out->has_precise = true;
    }
    if (tracking(tape, {&a, &b})) {
        tape.record(out, {a, b}, [a, b, out]() {
            for (std::size_t i = 0; i < out->numel(); ++i) {
                if (a->requires_grad()) {
                    a->grad[i] += out->grad[i];
                }
                if (b->requires_grad()) {
                    b->grad[i] += out->grad[i];
                }
            }
        });
    }
    return out;
}

TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    auto out = Tensor::zeros(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) {
        out->data[i] = a->data[i] - b->data[i];
    }
    if (a->has_precise && b->has_precise && out->numel() == 1) {
        out->precise = a->precise - b->precise;
        out->has_precise = true;
    }
    if (tracking(tape, {&a, &b})) {
        tape.record(out, {a, b}, [a, b, out]() {
            for (std::size_t i = 0; i < out->numel(); ++i) {
                if (a->requires_grad()) {
                    a->grad[i] += out->grad[i];
                }
                if (b->requires_grad()) {
                    b->grad[i] -= out->grad[i];
                }
            }
        });
    }
    return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    auto out = Tensor::zeros(a->shape());
    for (std::size_t i = 0; i < a->numel(); ++i) {
        out->data[i] = a->data[i] * b->data[i];
    }
    if (tracking(tape, {&a, &b})) {
        tape.record(out, {a, b}, [a, b, out]() {
            for (std::size_t i = 0; i < out->numel(); ++i) {
                if (a->requires_grad()) {
                    a->grad[i] += out->grad[i] * b->data[i];
                }
                if (b->requires_grad()) {
                    b->grad[i] += out->grad[i] * a->data[i];
                }
            }
        });
    }
    return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& x, float c) {
    auto out = Tensor::zeros(x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        out->data[i] = x->data[i] * c;
    }
    if (x->has_precise && out->numel() == 1) {
        out->precise = x->precise * static_cast<double>(c);
        out->has_precise = true;
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out, c]() {
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += out->grad[i] * c;
            }
        });
    }
    return out;
}

TensorPtr abs_elem(Tape& tape, const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        out->data[i] = std::fabs(x->data[i]);
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out]() {
            // subgradient 0 at the kink
            for (std::size_t i = 0; i < x->numel(); ++i) {
                const float v = x->data[i];
                x->grad[i] += out->grad[i] * (v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f));
            }
        });
    }
    return out;
}

TensorPtr exp_elem(Tape& tape, const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        out->data[i] = std::exp(x->data[i]);
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out]() {
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += out->grad[i] * out->data[i];
            }
        });
    }
    return out;
}

TensorPtr log_elem(Tape& tape, const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        out->data[i] = std::log(x->data[i]);
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out]() {
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += out->grad[i] / x->data[i];
            }
        });
    }
    return out;
}

TensorPtr clamp(Tape& tape, const TensorPtr& x, float lo, float hi) {
    if (!(lo < hi)) {
        throw ParamError("clamp: requires lo < hi");
    }
    auto out = Tensor::zeros(x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        out->data[i] = std::min(hi, std::max(lo, x->data[i]));
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out, lo, hi]() {
            for (std::size_t i = 0; i < x->numel(); ++i) {
                const float v = x->data[i];
                if (v >= lo && v <= hi) {
                    x->grad[i] += out->grad[i];
                }
            }
        });
    }
    return out;
}

TensorPtr sum_all(Tape& tape, const TensorPtr& x) {
    double s = 0.0;
    for (float v : x->data) {
        s += v;
    }
    auto out = Tensor::scalar(static_cast<float>(s));
    out->precise = s;
    out->has_precise = true;
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out]() {
            const float g = out->grad[0];
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += g;
            }
        });
    }
    return out;
}

TensorPtr mean_all(Tape& tape, const TensorPtr& x) {
    double s = 0.0;
    for (float v : x->data) {
        s += v;
    }
    const double m = s / static_cast<double>(x->numel());
    auto out = Tensor::scalar(static_cast<float>(m));
    out->precise = m;
    out->has_precise = true;
    if (tracking(tape, {&x})) {
        const float inv = 1.0f / static_cast<float>(x->numel());
        tape.record(out, {x}, [x, out, inv]() {
            const float g = out->grad[0] * inv;
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += g;
            }
        });
    }
    return out;
}

TensorPtr global_avg_pool(Tape& tape, const TensorPtr& x) {
    if (x->rank() != 4) {
        throw DimensionError("global_avg_pool: input must be [N,C,H,W], got " + shape_str(x->shape()));
    }
    const int N = x->dim(0), C = x->dim(1);
    const std::size_t HW = static_cast<std::size_t>(x->dim(2)) * x->dim(3);
    auto out = Tensor::zeros({N, C});
    for (int nc = 0; nc < N * C; ++nc) {
        const float* src = x->data.data() + static_cast<std::size_t>(nc) * HW;
        double s = 0.0;
        for (std::size_t i = 0; i < HW; ++i) {
            s += src[i];
        }
        out->data[static_cast<std::size_t>(nc)] = static_cast<float>(s / static_cast<double>(HW));
    }
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out, N, C, HW]() {
            const float inv = 1.0f / static_cast<float>(HW);
            for (int nc = 0; nc < N * C; ++nc) {
                const float g = out->grad[static_cast<std::size_t>(nc)] * inv;
                float* gx = x->grad.data() + static_cast<std::size_t>(nc) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    gx[i] += g;
                }
            }
        });
    }
    return out;
}

TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<int> shape) {
    if (shape_numel(shape) != x->numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x->shape()) + " as " + shape_str(shape));
    }
    auto out = Tensor::make(std::move(shape), x->data);
    if (tracking(tape, {&x})) {
        tape.record(out, {x}, [x, out]() {
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr flatten2d(Tape& tape, const TensorPtr& x) {
    if (x->rank() < 2) {
        throw DimensionError("flatten2d: input must have a leading batch axis, got " + shape_str(x->shape()));
    }
    const int n = x->dim(0);
    const int rest = static_cast<int>(x->numel()) / n;
    return reshape(tape, x, {n, rest});
}

float finite_diff_check(const ScalarFn& f, const TensorPtr& x, float eps) {
    if (!(eps > 0.0f)) {
        throw ParamError("finite_diff_check: eps must be > 0");
    }
    x->set_requires_grad(true);
    x->zero_grad();
    Tape tape;
    auto loss = f(tape, x);
    if (loss->numel() != 1) {
        throw ContractError("finite_diff_check: f must produce a scalar");
    }
    tape.backward(loss);
    const std::vector<float> analytic = x->grad;

    double max_rel = 0.0;
    for (std::size_t i = 0; i < x->numel(); ++i) {
        const float keep = x->data[i];
        x->data[i] = keep + eps;
        const double xp = x->data[i];
        Tape fwd_p(false);
        const double fp = f(fwd_p, x)->scalar_value();
        x->data[i] = keep - eps;
        const double xm = x->data[i];
        Tape fwd_m(false);
        const double fm = f(fwd_m, x)->scalar_value();
        x->data[i] = keep;

        const double numeric = (fp - fm) / (xp - xm);
        const double a = analytic[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
    return static_cast<float>(max_rel);
}

}  // namespace aa
