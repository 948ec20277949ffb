#include <cmath>

#include "aanc/ops.hpp"
#include "aanc/tape.hpp"
#include "broadcast.hpp"

namespace aanc {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Accumulates grad-of-output (shaped `out`) into the broadcast operand `t`.
void reduce_grad_into(const Tensor& t, std::span<const double> g, const Shape& out,
                      double sign = 1.0) {
    double* buf = grad_buffer(t);
    if (!buf) return;
    if (t.shape() == out) {
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += sign * g[i];
        return;
    }
    detail::for_each_broadcast(out, t.shape(), t.shape(),
                               [&](std::int64_t io, std::int64_t ia, std::int64_t) {
                                   buf[ia] += sign * g[static_cast<std::size_t>(io)];
                               });
}

template <class Fwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd f,
                 double sign_a, double sign_b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    double* o = out.data();
    const double* pa = a.data();
    const double* pb = b.data();
    if (a.shape() == b.shape()) {
        for (std::int64_t i = 0; i < out.numel(); ++i) o[i] = f(pa[i], pb[i]);
    } else {
        detail::for_each_broadcast(os, a.shape(), b.shape(),
                                   [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                                       o[io] = f(pa[ia], pb[ib]);
                                   });
    }
    const Tensor ins[] = {a, b};
    Tape::record(name, ins, out, [a, b, os, sign_a, sign_b](std::span<const double> g) {
        reduce_grad_into(a, g, os, sign_a);
        reduce_grad_into(b, g, os, sign_b);
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    double* o = out.data();
    const double* pa = a.data();
    const double* pb = b.data();
    if (a.shape() == b.shape()) {
        for (std::int64_t i = 0; i < out.numel(); ++i) o[i] = pa[i] * pb[i];
    } else {
        detail::for_each_broadcast(os, a.shape(), b.shape(),
                                   [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                                       o[io] = pa[ia] * pb[ib];
                                   });
    }
    const Tensor ins[] = {a, b};
    Tape::record("mul", ins, out, [a, b, os](std::span<const double> g) {
        double* ga = grad_buffer(a);
        double* gb = grad_buffer(b);
        const double* pa2 = a.data();
        const double* pb2 = b.data();
        detail::for_each_broadcast(os, a.shape(), b.shape(),
                                   [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                                       const double gv = g[static_cast<std::size_t>(io)];
                                       if (ga) ga[ia] += gv * pb2[ib];
                                       if (gb) gb[ib] += gv * pa2[ia];
                                   });
    });
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out(a.shape());
    double* o = out.data();
    const double* p = a.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = p[i] + s;
    const Tensor ins[] = {a};
    Tape::record("add_scalar", ins, out,
                 [a](std::span<const double> g) { accumulate_grad(a, g); });
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out(a.shape());
    double* o = out.data();
    const double* p = a.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = p[i] * s;
    const Tensor ins[] = {a};
    Tape::record("mul_scalar", ins, out, [a, s](std::span<const double> g) {
        double* ga = grad_buffer(a);
        if (!ga) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    double* o = out.data();
    const double* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = p[i] > 0.0 ? p[i] : 0.0;
    const Tensor ins[] = {x};
    Tape::record("relu", ins, out, [x](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        const double* p2 = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (p2[i] > 0.0) gx[i] += g[i];
        }
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    double* o = out.data();
    const double* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        o[i] = 0.5 * p[i] * (1.0 + std::erf(p[i] * kInvSqrt2));
    }
    const Tensor ins[] = {x};
    Tape::record("gelu", ins, out, [x](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        const double* p2 = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p2[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    double* o = out.data();
    const double* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = 1.0 / (1.0 + std::exp(-p[i]));
    const Tensor ins[] = {x};
    Tape::record("sigmoid", ins, out, [x, out](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        const double* y = out.data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return out;
}

// --- reductions --------------------------------------------------------------

namespace {

void check_axis(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    }
}

Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
    Shape out = s;
    if (keepdim) {
        out[static_cast<std::size_t>(axis)] = 1;
    } else {
        out.erase(out.begin() + axis);
        if (out.empty()) out.push_back(1);
    }
    return out;
}

struct AxisSplit {
    std::int64_t outer, m, inner;
};

AxisSplit axis_split(const Shape& s, int axis) {
    AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
    for (int d = 0; d < axis; ++d) r.outer *= s[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < static_cast<int>(s.size()); ++d) {
        r.inner *= s[static_cast<std::size_t>(d)];
    }
    return r;
}

}  // namespace

Tensor reduce_sum(const Tensor& x, int axis, bool keepdim) {
    check_axis(x, axis);
    const auto sp = axis_split(x.shape(), axis);
    Tensor out(reduced_shape(x.shape(), axis, keepdim));
    double* o = out.data();
    const double* p = x.data();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < sp.m; ++j) s += p[(a * sp.m + j) * sp.inner + i];
            o[a * sp.inner + i] = s;
        }
    }
    const Tensor ins[] = {x};
    Tape::record("reduce_sum", ins, out, [x, sp](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        for (std::int64_t a = 0; a < sp.outer; ++a) {
            for (std::int64_t j = 0; j < sp.m; ++j) {
                for (std::int64_t i = 0; i < sp.inner; ++i) {
                    gx[(a * sp.m + j) * sp.inner + i] += g[static_cast<std::size_t>(a * sp.inner + i)];
                }
            }
        }
    });
    return out;
}

Tensor reduce_mean(const Tensor& x, int axis, bool keepdim) {
    check_axis(x, axis);
    const auto sp = axis_split(x.shape(), axis);
    Tensor out(reduced_shape(x.shape(), axis, keepdim));
    double* o = out.data();
    const double* p = x.data();
    const double inv = 1.0 / static_cast<double>(sp.m);
    for (std::int64_t a = 0; a < sp.outer; ++a) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < sp.m; ++j) s += p[(a * sp.m + j) * sp.inner + i];
            o[a * sp.inner + i] = s * inv;
        }
    }
    const Tensor ins[] = {x};
    Tape::record("reduce_mean", ins, out, [x, sp, inv](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        for (std::int64_t a = 0; a < sp.outer; ++a) {
            for (std::int64_t j = 0; j < sp.m; ++j) {
                for (std::int64_t i = 0; i < sp.inner; ++i) {
                    gx[(a * sp.m + j) * sp.inner + i] +=
                        inv * g[static_cast<std::size_t>(a * sp.inner + i)];
                }
            }
        }
    });
    return out;
}

Tensor reduce_max(const Tensor& x, int axis, bool keepdim) {
    check_axis(x, axis);
    const auto sp = axis_split(x.shape(), axis);
    Tensor out(reduced_shape(x.shape(), axis, keepdim));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(sp.outer * sp.inner));
    double* o = out.data();
    const double* p = x.data();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            std::int64_t best = 0;
            double bv = p[a * sp.m * sp.inner + i];
            for (std::int64_t j = 1; j < sp.m; ++j) {
                const double v = p[(a * sp.m + j) * sp.inner + i];
                if (v > bv) {
                    bv = v;
                    best = j;
                }
            }
            o[a * sp.inner + i] = bv;
            (*argmax)[static_cast<std::size_t>(a * sp.inner + i)] = best;
        }
    }
    const Tensor ins[] = {x};
    Tape::record("reduce_max", ins, out, [x, sp, argmax](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        for (std::int64_t a = 0; a < sp.outer; ++a) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t j = (*argmax)[static_cast<std::size_t>(a * sp.inner + i)];
                gx[(a * sp.m + j) * sp.inner + i] += g[static_cast<std::size_t>(a * sp.inner + i)];
            }
        }
    });
    return out;
}

Tensor sum_all(const Tensor& x) {
    Tensor out({1});
    double s = 0.0;
    const double* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) s += p[i];
    out.data()[0] = s;
    const Tensor ins[] = {x};
    Tape::record("sum_all", ins, out, [x](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        const double gv = g[0];
        for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += gv;
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out({1});
    double s = 0.0;
    const double* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) s += p[i];
    const double inv = 1.0 / static_cast<double>(x.numel());
    out.data()[0] = s * inv;
    const Tensor ins[] = {x};
    Tape::record("mean_all", ins, out, [x, inv](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        const double gv = g[0] * inv;
        for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += gv;
    });
    return out;
}

}  // namespace aanc
