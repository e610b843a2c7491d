#include "aa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "aa/error.hpp"

namespace aa {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values, bool requires_grad)
    : data(std::move(values)), shape_(std::move(shape)), requires_grad_(requires_grad) {
    for (int d : shape_) {
        if (d <= 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
        }
    }
    if (shape_numel(shape_) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape_) + " does not match buffer of " +
                             std::to_string(data.size()) + " values");
    }
    if (requires_grad_) {
        grad.assign(data.size(), 0.0f);
    }
}

TensorPtr Tensor::make(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), requires_grad);
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::vector<float> v(shape_numel(shape), 0.0f);
    return make(std::move(shape), std::move(v), requires_grad);
}

TensorPtr Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    std::vector<float> v(shape_numel(shape), value);
    return make(std::move(shape), std::move(v), requires_grad);
}

TensorPtr Tensor::scalar(float value, bool requires_grad) {
    return make({1}, {value}, requires_grad);
}

float Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape_));
    }
    return data[0];
}

void Tensor::set_requires_grad(bool value) {
    requires_grad_ = value;
    if (requires_grad_ && grad.size() != data.size()) {
        grad.assign(data.size(), 0.0f);
    }
    if (!requires_grad_) {
        grad.clear();
    }
}

void Tensor::zero_grad() {
    if (requires_grad_) {
        std::fill(grad.begin(), grad.end(), 0.0f);
    }
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

void Tape::record(const TensorPtr& output, std::vector<TensorPtr> inputs, std::function<void()> backward) {
    if (!grad_enabled_) {
        return;
    }
    bool any = false;
    for (const auto& in : inputs) {
        any = any || in->requires_grad();
    }
    if (!any) {
        return;
    }
    output->set_requires_grad(true);
    nodes_.push_back(Node{output, std::move(inputs), std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
    if (!grad_enabled_) {
        throw ContractError("backward() called on a gradient-disabled tape");
    }
    if (loss->numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss->shape()));
    }
    if (!loss->requires_grad()) {
        return;  // nothing reachable carries gradients
    }
    // Reset intermediates (node outputs); leaves keep accumulating across calls.
    for (auto& node : nodes_) {
        node.output->zero_grad();
    }
    loss->grad[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
}

}  // namespace aa
