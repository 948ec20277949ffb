#pragma once

// Internal: NumPy-style broadcast iteration for binary elementwise ops and
// their gradient reductions.

#include <cstdint>
#include <vector>

#include "aanc/tensor.hpp"

namespace aanc::detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = ra > rb ? ra : rb;
    Shape out(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int da = i < ra ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
        const int db = i < rb ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[static_cast<std::size_t>(r - 1 - i)] = da > db ? da : db;
    }
    return out;
}

// Row-major strides of `s` extended to `out`, with 0 where `s` broadcasts.
inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    const int r = static_cast<int>(out.size());
    const int rs = static_cast<int>(s.size());
    std::vector<std::int64_t> strides(static_cast<std::size_t>(r), 0);
    std::int64_t acc = 1;
    for (int i = rs - 1; i >= 0; --i) {
        const int d = r - rs + i;
        strides[static_cast<std::size_t>(d)] = (s[static_cast<std::size_t>(i)] == 1) ? 0 : acc;
        acc *= s[static_cast<std::size_t>(i)];
    }
    return strides;
}

// Calls f(io, ia, ib) for every element of `out` in row-major order.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
    const std::int64_t n = shape_numel(out);
    const int r = static_cast<int>(out.size());
    if (r == 0) {
        if (n == 1) f(0, 0, 0);
        return;
    }
    const auto sa = broadcast_strides(a, out);
    const auto sb = broadcast_strides(b, out);
    std::vector<int> coord(static_cast<std::size_t>(r), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t io = 0; io < n; ++io) {
        f(io, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            if (++coord[du] < out[du]) {
                ia += sa[du];
                ib += sb[du];
                break;
            }
            coord[du] = 0;
            ia -= sa[du] * (out[du] - 1);
            ib -= sb[du] * (out[du] - 1);
        }
    }
}

}  // namespace aanc::detail
