#include <numeric>

#include "aanc/ops.hpp"
#include "aanc/tape.hpp"

namespace aanc {

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const int r = xs[0].rank();
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape os = xs[0].shape();
    std::int64_t total_axis = 0;
    for (const Tensor& t : xs) {
        if (t.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < r; ++d) {
            if (d != axis && t.dim(d) != os[static_cast<std::size_t>(d)]) {
                throw ShapeError("concat: shape mismatch at dim " + std::to_string(d) + ": " +
                                 shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
            }
        }
        total_axis += t.dim(axis);
    }
    os[static_cast<std::size_t>(axis)] = static_cast<int>(total_axis);
    Tensor out(os);

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= os[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < r; ++d) inner *= os[static_cast<std::size_t>(d)];

    double* o = out.data();
    std::int64_t off = 0;  // running offset along the concat axis
    std::vector<std::int64_t> offsets;
    for (const Tensor& t : xs) {
        offsets.push_back(off);
        const double* p = t.data();
        const std::int64_t ax = t.dim(axis);
        for (std::int64_t a = 0; a < outer; ++a) {
            std::copy(p + a * ax * inner, p + (a + 1) * ax * inner,
                      o + (a * total_axis + off) * inner);
        }
        off += ax;
    }

    Tape::record("concat", xs, out,
                 [xs, offsets, outer, inner, total_axis, axis](std::span<const double> g) {
                     for (std::size_t xi = 0; xi < xs.size(); ++xi) {
                         double* gx = grad_buffer(xs[xi]);
                         if (!gx) continue;
                         const std::int64_t ax = xs[xi].dim(axis);
                         const std::int64_t off2 = offsets[xi];
                         for (std::int64_t a = 0; a < outer; ++a) {
                             const double* gs = g.data() + (a * total_axis + off2) * inner;
                             double* gd = gx + a * ax * inner;
                             for (std::int64_t i = 0; i < ax * inner; ++i) gd[i] += gs[i];
                         }
                     }
                 });
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out = Tensor::from_data(std::move(shape), std::vector<double>(x.data(), x.data() + x.numel()));
    const Tensor ins[] = {x};
    Tape::record("reshape", ins, out,
                 [x](std::span<const double> g) { accumulate_grad(x, g); });
    return out;
}

namespace {

void permute_copy(const double* src, const Shape& in_shape, const std::vector<int>& perm,
                  double* dst) {
    const int r = static_cast<int>(in_shape.size());
    Shape out_shape(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) {
        out_shape[static_cast<std::size_t>(d)] = in_shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
    }
    std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
    for (int d = r - 2; d >= 0; --d) {
        in_strides[static_cast<std::size_t>(d)] =
            in_strides[static_cast<std::size_t>(d + 1)] * in_shape[static_cast<std::size_t>(d + 1)];
    }
    // stride of output dim d within the input buffer
    std::vector<std::int64_t> strides(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) {
        strides[static_cast<std::size_t>(d)] =
            in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
    }
    const std::int64_t n = shape_numel(out_shape);
    std::vector<int> coord(static_cast<std::size_t>(r), 0);
    std::int64_t is = 0;
    for (std::int64_t io = 0; io < n; ++io) {
        dst[io] = src[is];
        for (int d = r - 1; d >= 0; --d) {
            const auto du = static_cast<std::size_t>(d);
            if (++coord[du] < out_shape[du]) {
                is += strides[du];
                break;
            }
            coord[du] = 0;
            is -= strides[du] * (out_shape[du] - 1);
        }
    }
}

}  // namespace

Tensor transpose(const Tensor& x, std::vector<int> perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw ShapeError("transpose: perm rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
            throw ShapeError("transpose: perm is not a permutation");
        }
        seen[static_cast<std::size_t>(p)] = true;
    }
    Shape os(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) {
        os[static_cast<std::size_t>(d)] = x.dim(perm[static_cast<std::size_t>(d)]);
    }
    Tensor out(os);
    permute_copy(x.data(), x.shape(), perm, out.data());

    std::vector<int> inv(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])] = d;

    const Tensor ins[] = {x};
    Tape::record("transpose", ins, out, [x, os, inv](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        std::vector<double> tmp(g.size());
        permute_copy(g.data(), os, inv, tmp.data());
        for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
    });
    return out;
}

}  // namespace aanc
