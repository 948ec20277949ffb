#include "aanc/tape.hpp"

#include <stdexcept>

namespace aanc {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* name, std::span<const Tensor> inputs,
                  Tensor& output, BackwardFn fn) {
    Tape* t = g_active_tape;
    if (!t) return;
    bool any_tracked = false;
    for (const Tensor& in : inputs) {
        if (in.tracked()) {
            any_tracked = true;
            break;
        }
    }
    if (!any_tracked) return;
    output.impl()->tracked = true;
    output.impl()->tape = t;
    Node node;
    node.name = name;
    node.inputs.assign(inputs.begin(), inputs.end());
    node.output = output;
    node.backward = std::move(fn);
    t->nodes_.push_back(std::move(node));
}

double* grad_buffer(const Tensor& t) {
    if (!t.tracked()) return nullptr;
    auto* impl = const_cast<detail::TensorImpl*>(t.impl());
    if (!impl->grad) {
        impl->grad = std::make_unique<std::vector<double>>(impl->data.size(), 0.0);
    }
    return impl->grad->data();
}

void accumulate_grad(const Tensor& t, std::span<const double> g) {
    double* buf = grad_buffer(t);
    if (!buf) return;
    if (g.size() != t.impl()->data.size()) {
        throw ShapeError("gradient size mismatch for tensor " + shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar tensor");
    }
    if (loss.impl()->tape != this) {
        throw std::invalid_argument("backward: tensor was not produced on this tape");
    }
    grad_buffer(loss)[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output.has_grad()) {
            it->backward(std::span<const double>(*it->output.impl()->grad));
        }
    }
    // Leaves the loss never touched still get a (zero) gradient.
    for (const Node& node : nodes_) {
        for (const Tensor& in : node.inputs) {
            if (in.requires_grad() && !in.has_grad()) grad_buffer(in);
        }
    }
}

}  // namespace aanc
