#include <algorithm>
#include <cmath>
#include <memory>

#include "aanc/ops.hpp"
#include "aanc/tape.hpp"

namespace aanc {

namespace {

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

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    }
    const auto sp = axis_split(x.shape(), axis);
    Tensor out(x.shape());
    const double* p = x.data();
    double* o = out.data();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = a * sp.m * sp.inner + i;
            double mx = p[base];
            for (std::int64_t j = 1; j < sp.m; ++j) mx = std::max(mx, p[base + j * sp.inner]);
            double sum = 0.0;
            for (std::int64_t j = 0; j < sp.m; ++j) {
                const double e = std::exp(p[base + j * sp.inner] - mx);
                o[base + j * sp.inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::int64_t j = 0; j < sp.m; ++j) o[base + j * sp.inner] *= inv;
        }
    }
    const Tensor ins[] = {x};
    Tape::record("softmax", ins, out, [x, out, sp](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        const double* y = out.data();
        for (std::int64_t a = 0; a < sp.outer; ++a) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t base = a * sp.m * sp.inner + i;
                double dot = 0.0;
                for (std::int64_t j = 0; j < sp.m; ++j) {
                    dot += g[static_cast<std::size_t>(base + j * sp.inner)] * y[base + j * sp.inner];
                }
                for (std::int64_t j = 0; j < sp.m; ++j) {
                    const std::int64_t e = base + j * sp.inner;
                    gx[e] += y[e] * (g[static_cast<std::size_t>(e)] - dot);
                }
            }
        }
    });
    return out;
}

// --- normalization -----------------------------------------------------------

namespace {

// Row-major "bucket" strides: reduced axes contribute 0, kept axes index the
// per-bucket statistics arrays.
std::vector<std::int64_t> bucket_strides(const Shape& s, const std::vector<bool>& reduced,
                                         std::int64_t* bucket_count, std::int64_t* bucket_size) {
    const int r = static_cast<int>(s.size());
    std::vector<std::int64_t> strides(static_cast<std::size_t>(r), 0);
    std::int64_t kept = 1, red = 1;
    for (int d = r - 1; d >= 0; --d) {
        const auto du = static_cast<std::size_t>(d);
        if (reduced[du]) {
            red *= s[du];
        } else {
            strides[du] = kept;
            kept *= s[du];
        }
    }
    *bucket_count = kept;
    *bucket_size = red;
    return strides;
}

template <class F>
void for_each_bucketed(const Shape& s, const std::vector<std::int64_t>& bstrides, F&& f) {
    const std::int64_t n = shape_numel(s);
    const int r = static_cast<int>(s.size());
    std::vector<int> coord(static_cast<std::size_t>(r), 0);
    std::int64_t bucket = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        f(i, bucket);
        for (int d = r - 1; d >= 0; --d) {
            const auto du = static_cast<std::size_t>(d);
            if (++coord[du] < s[du]) {
                bucket += bstrides[du];
                break;
            }
            coord[du] = 0;
            bucket -= bstrides[du] * (s[du] - 1);
        }
    }
}

}  // namespace

Tensor normalize_over(const Tensor& x, std::vector<int> axes, double eps) {
    if (axes.empty()) throw ShapeError("normalize_over: no axes given");
    std::vector<bool> reduced(static_cast<std::size_t>(x.rank()), false);
    for (int a : axes) {
        if (a < 0 || a >= x.rank()) {
            throw ShapeError("normalize_over: axis " + std::to_string(a) + " out of range for " +
                             shape_str(x.shape()));
        }
        if (reduced[static_cast<std::size_t>(a)]) {
            throw ShapeError("normalize_over: duplicate axis " + std::to_string(a));
        }
        reduced[static_cast<std::size_t>(a)] = true;
    }
    std::int64_t buckets = 0, m = 0;
    const auto bstr = bucket_strides(x.shape(), reduced, &buckets, &m);

    std::vector<double> mean(static_cast<std::size_t>(buckets), 0.0);
    const double* p = x.data();
    for_each_bucketed(x.shape(), bstr, [&](std::int64_t i, std::int64_t b) {
        mean[static_cast<std::size_t>(b)] += p[i];
    });
    const double invm = 1.0 / static_cast<double>(m);
    for (double& v : mean) v *= invm;

    std::vector<double> var(static_cast<std::size_t>(buckets), 0.0);
    for_each_bucketed(x.shape(), bstr, [&](std::int64_t i, std::int64_t b) {
        const double d = p[i] - mean[static_cast<std::size_t>(b)];
        var[static_cast<std::size_t>(b)] += d * d;
    });
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(buckets));
    for (std::int64_t b = 0; b < buckets; ++b) {
        (*inv_std)[static_cast<std::size_t>(b)] =
            1.0 / std::sqrt(var[static_cast<std::size_t>(b)] * invm + eps);
    }

    Tensor out(x.shape());
    double* o = out.data();
    for_each_bucketed(x.shape(), bstr, [&](std::int64_t i, std::int64_t b) {
        o[i] = (p[i] - mean[static_cast<std::size_t>(b)]) *
               (*inv_std)[static_cast<std::size_t>(b)];
    });

    const Tensor ins[] = {x};
    Tape::record("normalize_over", ins, out,
                 [x, out, bstr, buckets, invm, inv_std](std::span<const double> g) {
                     double* gx = grad_buffer(x);
                     if (!gx) return;
                     const double* xh = out.data();
                     std::vector<double> s1(static_cast<std::size_t>(buckets), 0.0);
                     std::vector<double> s2(static_cast<std::size_t>(buckets), 0.0);
                     for_each_bucketed(x.shape(), bstr, [&](std::int64_t i, std::int64_t b) {
                         s1[static_cast<std::size_t>(b)] += g[static_cast<std::size_t>(i)];
                         s2[static_cast<std::size_t>(b)] += g[static_cast<std::size_t>(i)] * xh[i];
                     });
                     for_each_bucketed(x.shape(), bstr, [&](std::int64_t i, std::int64_t b) {
                         const auto bu = static_cast<std::size_t>(b);
                         gx[i] += (*inv_std)[bu] *
                                  (g[static_cast<std::size_t>(i)] -
                                   (s1[bu] + xh[i] * s2[bu]) * invm);
                     });
                 });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int d = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
    }
    Tensor xh = normalize_over(x, {x.rank() - 1}, eps);
    return add(mul(xh, gamma), beta);
}

// --- pooling -----------------------------------------------------------------

Tensor pool2d(const Tensor& x, PoolKind kind, int k, int stride) {
    if (x.rank() != 4) throw ShapeError("pool2d: input must be [B,C,H,W]");
    if (k < 1 || stride < 1) throw ConfigError("pool2d: k and stride must be >= 1");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < k || w < k || (h - k) % stride != 0 || (w - k) % stride != 0) {
        throw ConfigError("pool2d: window k=" + std::to_string(k) + " stride=" +
                          std::to_string(stride) + " does not tile input " + shape_str(x.shape()));
    }
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
    Tensor out({batch, c, oh, ow});
    const double* p = x.data();
    double* o = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(batch) * c;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t oplane = static_cast<std::int64_t>(oh) * ow;

    if (kind == PoolKind::max) {
        auto argmax = std::make_shared<std::vector<std::int64_t>>(
            static_cast<std::size_t>(planes * oplane));
        for (std::int64_t pl = 0; pl < planes; ++pl) {
            const double* xc = p + pl * plane;
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                    std::int64_t best = static_cast<std::int64_t>(i) * stride * w + j * stride;
                    double bv = xc[best];
                    for (int di = 0; di < k; ++di) {
                        for (int dj = 0; dj < k; ++dj) {
                            const std::int64_t idx =
                                (static_cast<std::int64_t>(i) * stride + di) * w + j * stride + dj;
                            if (xc[idx] > bv) {
                                bv = xc[idx];
                                best = idx;
                            }
                        }
                    }
                    o[pl * oplane + i * ow + j] = bv;
                    (*argmax)[static_cast<std::size_t>(pl * oplane + i * ow + j)] = best;
                }
            }
        }
        const Tensor ins[] = {x};
        Tape::record("maxpool2d", ins, out,
                     [x, argmax, planes, plane, oplane](std::span<const double> g) {
                         double* gx = grad_buffer(x);
                         if (!gx) return;
                         for (std::int64_t pl = 0; pl < planes; ++pl) {
                             for (std::int64_t e = 0; e < oplane; ++e) {
                                 gx[pl * plane + (*argmax)[static_cast<std::size_t>(pl * oplane + e)]] +=
                                     g[static_cast<std::size_t>(pl * oplane + e)];
                             }
                         }
                     });
        return out;
    }

    const double inv = 1.0 / (static_cast<double>(k) * k);
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const double* xc = p + pl * plane;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double s = 0.0;
                for (int di = 0; di < k; ++di) {
                    for (int dj = 0; dj < k; ++dj) {
                        s += xc[(static_cast<std::int64_t>(i) * stride + di) * w + j * stride + dj];
                    }
                }
                o[pl * oplane + i * ow + j] = s * inv;
            }
        }
    }
    const Tensor ins[] = {x};
    Tape::record("avgpool2d", ins, out,
                 [x, k, stride, w, oh, ow, inv, planes, plane, oplane](std::span<const double> g) {
                     double* gx = grad_buffer(x);
                     if (!gx) return;
                     for (std::int64_t pl = 0; pl < planes; ++pl) {
                         for (int i = 0; i < oh; ++i) {
                             for (int j = 0; j < ow; ++j) {
                                 const double gv =
                                     g[static_cast<std::size_t>(pl * oplane + i * ow + j)] * inv;
                                 for (int di = 0; di < k; ++di) {
                                     for (int dj = 0; dj < k; ++dj) {
                                         gx[pl * plane +
                                            (static_cast<std::int64_t>(i) * stride + di) * w +
                                            j * stride + dj] += gv;
                                     }
                                 }
                             }
                         }
                     }
                 });
    return out;
}

Tensor global_pool(const Tensor& x, PoolKind kind) {
    if (x.rank() != 4) throw ShapeError("global_pool: input must be [B,C,H,W]");
    const int batch = x.dim(0), c = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    Tensor out({batch, c, 1, 1});
    const double* p = x.data();
    double* o = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(batch) * c;

    if (kind == PoolKind::max) {
        auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(planes));
        for (std::int64_t pl = 0; pl < planes; ++pl) {
            const double* xc = p + pl * plane;
            std::int64_t best = 0;
            for (std::int64_t i = 1; i < plane; ++i) {
                if (xc[i] > xc[best]) best = i;
            }
            o[pl] = xc[best];
            (*argmax)[static_cast<std::size_t>(pl)] = best;
        }
        const Tensor ins[] = {x};
        Tape::record("global_maxpool", ins, out,
                     [x, argmax, planes, plane](std::span<const double> g) {
                         double* gx = grad_buffer(x);
                         if (!gx) return;
                         for (std::int64_t pl = 0; pl < planes; ++pl) {
                             gx[pl * plane + (*argmax)[static_cast<std::size_t>(pl)]] +=
                                 g[static_cast<std::size_t>(pl)];
                         }
                     });
        return out;
    }

    const double inv = 1.0 / static_cast<double>(plane);
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const double* xc = p + pl * plane;
        double s = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) s += xc[i];
        o[pl] = s * inv;
    }
    const Tensor ins[] = {x};
    Tape::record("global_avgpool", ins, out, [x, planes, plane, inv](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        for (std::int64_t pl = 0; pl < planes; ++pl) {
            const double gv = g[static_cast<std::size_t>(pl)] * inv;
            for (std::int64_t i = 0; i < plane; ++i) gx[pl * plane + i] += gv;
        }
    });
    return out;
}

// --- resampling --------------------------------------------------------------

namespace {

struct LerpTap {
    int i0, i1;
    double f;  // weight of i1
};

// align-corners=false source taps for 2x upsampling with edge clamping.
std::vector<LerpTap> bilinear_taps(int in, int out) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(out));
    for (int oi = 0; oi < out; ++oi) {
        double s = (oi + 0.5) / 2.0 - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(s);
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(oi)] = {i0, i1, s - i0};
    }
    return taps;
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("upsample_bilinear2x: input must be [B,C,H,W]");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = 2 * h, ow = 2 * w;
    Tensor out({batch, c, oh, ow});
    const auto ty = bilinear_taps(h, oh);
    const auto tx = bilinear_taps(w, ow);
    const double* p = x.data();
    double* o = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(batch) * c;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t oplane = static_cast<std::int64_t>(oh) * ow;
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const double* xc = p + pl * plane;
        double* oc = o + pl * oplane;
        for (int oy = 0; oy < oh; ++oy) {
            const LerpTap& y = ty[static_cast<std::size_t>(oy)];
            const double* r0 = xc + static_cast<std::int64_t>(y.i0) * w;
            const double* r1 = xc + static_cast<std::int64_t>(y.i1) * w;
            for (int ox = 0; ox < ow; ++ox) {
                const LerpTap& t = tx[static_cast<std::size_t>(ox)];
                const double top = r0[t.i0] * (1.0 - t.f) + r0[t.i1] * t.f;
                const double bot = r1[t.i0] * (1.0 - t.f) + r1[t.i1] * t.f;
                oc[static_cast<std::int64_t>(oy) * ow + ox] = top * (1.0 - y.f) + bot * y.f;
            }
        }
    }
    const Tensor ins[] = {x};
    Tape::record("upsample_bilinear2x", ins, out,
                 [x, ty, tx, planes, plane, oplane, w, oh, ow](std::span<const double> g) {
                     double* gx = grad_buffer(x);
                     if (!gx) return;
                     for (std::int64_t pl = 0; pl < planes; ++pl) {
                         double* gc = gx + pl * plane;
                         const double* go = g.data() + pl * oplane;
                         for (int oy = 0; oy < oh; ++oy) {
                             const LerpTap& y = ty[static_cast<std::size_t>(oy)];
                             for (int ox = 0; ox < ow; ++ox) {
                                 const LerpTap& t = tx[static_cast<std::size_t>(ox)];
                                 const double gv = go[static_cast<std::int64_t>(oy) * ow + ox];
                                 gc[static_cast<std::int64_t>(y.i0) * w + t.i0] +=
                                     gv * (1.0 - y.f) * (1.0 - t.f);
                                 gc[static_cast<std::int64_t>(y.i0) * w + t.i1] +=
                                     gv * (1.0 - y.f) * t.f;
                                 gc[static_cast<std::int64_t>(y.i1) * w + t.i0] +=
                                     gv * y.f * (1.0 - t.f);
                                 gc[static_cast<std::int64_t>(y.i1) * w + t.i1] += gv * y.f * t.f;
                             }
                         }
                     }
                 });
    return out;
}

// --- dropout -----------------------------------------------------------------

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
    if (p < 0.0 || p > 1.0) throw ConfigError("dropout: p must be in [0,1], got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    if (p == 1.0) {
        Tensor out(x.shape());
        const Tensor ins[] = {x};
        Tape::record("dropout", ins, out, [](std::span<const double>) {});
        return out;
    }
    const double scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<unsigned char>>(static_cast<std::size_t>(x.numel()));
    Tensor out(x.shape());
    const double* px = x.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const bool keep = uniform01(rng) >= p;
        (*mask)[static_cast<std::size_t>(i)] = keep;
        o[i] = keep ? px[i] * scale : 0.0;
    }
    const Tensor ins[] = {x};
    Tape::record("dropout", ins, out, [x, mask, scale](std::span<const double> g) {
        double* gx = grad_buffer(x);
        if (!gx) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if ((*mask)[i]) gx[i] += g[i] * scale;
        }
    });
    return out;
}

}  // namespace aanc
