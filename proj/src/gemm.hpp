#pragma once

// Internal: thin wrapper over Eigen's single-threaded GEMM for the hot
// matmul/conv paths. Row-major throughout, matching Tensor storage.

#include <Eigen/Core>

namespace aanc::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C (MxN) = A (MxK) * B (KxN), accumulating when acc is true.
inline void gemm(int m, int n, int k, const double* a, const double* b, double* c,
                 bool acc = false) {
    ConstMap ma(a, m, k);
    ConstMap mb(b, k, n);
    MutMap mc(c, m, n);
    if (acc)
        mc.noalias() += ma * mb;
    else
        mc.noalias() = ma * mb;
}

// C (MxN) = A^T (with A stored KxM) * B (KxN).
inline void gemm_at(int m, int n, int k, const double* a, const double* b, double* c,
                    bool acc = false) {
    ConstMap ma(a, k, m);
    ConstMap mb(b, k, n);
    MutMap mc(c, m, n);
    if (acc)
        mc.noalias() += ma.transpose() * mb;
    else
        mc.noalias() = ma.transpose() * mb;
}

// C (MxN) = A (MxK) * B^T (with B stored NxK).
inline void gemm_bt(int m, int n, int k, const double* a, const double* b, double* c,
                    bool acc = false) {
    ConstMap ma(a, m, k);
    ConstMap mb(b, n, k);
    MutMap mc(c, m, n);
    if (acc)
        mc.noalias() += ma * mb.transpose();
    else
        mc.noalias() = ma * mb.transpose();
}

}  // namespace aanc::detail
