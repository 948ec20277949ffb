#include "aanc/ops.hpp"
#include "aanc/tape.hpp"
#include "gemm.hpp"

namespace aanc {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const int m = a.dim(a.rank() - 2);
    const int k = a.dim(a.rank() - 1);
    const int kb = b.dim(b.rank() - 2);
    const int n = b.dim(b.rank() - 1);
    if (k != kb) {
        throw ShapeError("matmul inner dims disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const bool shared_b = b.rank() == 2;
    if (!shared_b) {
        if (a.rank() != b.rank()) {
            throw ShapeError("matmul batch ranks disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        }
        for (int d = 0; d < a.rank() - 2; ++d) {
            if (a.dim(d) != b.dim(d)) {
                throw ShapeError("matmul batch dims disagree: " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()));
            }
        }
    }
    Shape os(a.shape());
    os[static_cast<std::size_t>(a.rank() - 1)] = n;
    Tensor out(os);

    const std::int64_t batch = a.numel() / (static_cast<std::int64_t>(m) * k);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::int64_t s = 0; s < batch; ++s) {
        detail::gemm(m, n, k, pa + s * m * k, shared_b ? pb : pb + s * k * n, po + s * m * n);
    }

    const Tensor ins[] = {a, b};
    Tape::record("matmul", ins, out, [a, b, m, n, k, batch, shared_b](std::span<const double> g) {
        double* ga = grad_buffer(a);
        double* gb = grad_buffer(b);
        const double* pa2 = a.data();
        const double* pb2 = b.data();
        const double* pg = g.data();
        for (std::int64_t s = 0; s < batch; ++s) {
            const double* gs = pg + s * m * n;
            if (ga) {
                // dA = g * B^T
                detail::gemm_bt(m, k, n, gs, shared_b ? pb2 : pb2 + s * k * n,
                                ga + s * m * k, /*acc=*/true);
            }
            if (gb) {
                // dB = A^T * g, accumulated across the batch when B is shared
                detail::gemm_at(k, n, m, pa2 + s * m * k, gs,
                                shared_b ? gb : gb + s * k * n, /*acc=*/true);
            }
        }
    });
    return out;
}

}  // namespace aanc
