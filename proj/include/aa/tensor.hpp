#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace aa {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense row-major f32 tensor. Leaves with requires_grad=true act as trainable
// parameters; op outputs are fresh tensors owned by the tape that made them.
class Tensor {
public:
    Tensor(std::vector<int> shape, std::vector<float> values, bool requires_grad);

    static TensorPtr make(std::vector<int> shape, std::vector<float> values, bool requires_grad = false);
    static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<int> shape, float value, bool requires_grad = false);
    static TensorPtr scalar(float value, bool requires_grad = false);

    const std::vector<int>& shape() const { return shape_; }
    std::size_t numel() const { return data.size(); }
    int dim(std::size_t axis) const { return shape_[axis]; }
    std::size_t rank() const { return shape_.size(); }
    float item() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool value);
    void zero_grad();
    bool all_finite() const;

    // Detached copy of the current values (no grad, no history).
    TensorPtr detach() const { return make(shape_, data, false); }

    // Scalar value as accumulated in f64, when this tensor is the output of a
    // reduction chain; keeps the finite-difference oracle meaningful.
    double scalar_value() const { return has_precise ? precise : static_cast<double>(item()); }

    std::vector<float> data;
    std::vector<float> grad;  // same length as data iff requires_grad

    double precise = 0.0;
    bool has_precise = false;

private:
    std::vector<int> shape_;
    bool requires_grad_ = false;
};

// Records every op in execution order with its inputs, output and backward
// rule, so the list is topologically sorted by construction. backward() walks
// it exactly once in reverse; fan-out gradients accumulate additively.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    // Called by ops. Marks the output as requiring grad and appends the node;
    // no-op when recording is off or no input carries gradients.
    void record(const TensorPtr& output, std::vector<TensorPtr> inputs, std::function<void()> backward);

    // Populates grads of every requires_grad tensor reachable from loss.
    // Intermediate grads are reset per call; leaf grads accumulate.
    void backward(const TensorPtr& loss);

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        TensorPtr output;
        std::vector<TensorPtr> inputs;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

}  // namespace aa
