#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "aanc/tensor.hpp"

namespace aanc {

/// Wengert list for reverse-mode differentiation. Ops executed while a
/// Tape::Scope is open append nodes in execution order (which is a
/// topological order), so backward() is a single reverse sweep. A tape is
/// rebuilt per forward pass and is confined to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Activates the tape on this thread for its lifetime.
    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    /// Seeds d(loss)/d(loss)=1 and sweeps the list in reverse, accumulating
    /// gradients into every tracked tensor. Every requires_grad leaf that
    /// appears as a node input ends up with a gradient (zero if the loss
    /// does not depend on it).
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }

    static Tape* active();

    using BackwardFn = std::function<void(std::span<const double> grad_out)>;

    /// Called by op implementations; records only when a tape is active and
    /// some input is tracked. Marks `output` tracked on success.
    static void record(const char* name, std::span<const Tensor> inputs,
                       Tensor& output, BackwardFn fn);

private:
    struct Node {
        const char* name;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

/// Materializes (zero-filled) and returns the gradient buffer of `t`, or
/// nullptr when `t` is not tracked. Scatter-style backwards write through
/// this; everything else uses accumulate_grad.
double* grad_buffer(const Tensor& t);

/// grad(t) += g elementwise; no-op when `t` is untracked.
void accumulate_grad(const Tensor& t, std::span<const double> g);

}  // namespace aanc
