#include <vector>

#include "aanc/ops.hpp"
#include "aanc/tape.hpp"
#include "gemm.hpp"

namespace aanc {

namespace {

struct ConvGeom {
    int batch, cin, h, w;
    int cout, k, stride, padding;
    int oh, ow;
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                       int padding, bool depthwise, const char* opname) {
    if (x.rank() != 4) throw ShapeError(std::string(opname) + ": input must be [B,C,H,W], got " + shape_str(x.shape()));
    if (w.rank() != 4) throw ShapeError(std::string(opname) + ": weight must be rank 4, got " + shape_str(w.shape()));
    ConvGeom g{};
    g.batch = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = w.dim(0);
    g.k = w.dim(2);
    g.stride = stride;
    g.padding = padding;
    if (w.dim(2) != w.dim(3)) throw ShapeError(std::string(opname) + ": kernel must be square");
    if (g.k % 2 == 0) throw ConfigError(std::string(opname) + ": kernel size must be odd, got " + std::to_string(g.k));
    if (padding < 0) throw ConfigError(std::string(opname) + ": negative padding");
    if (stride < 1) throw ConfigError(std::string(opname) + ": stride must be >= 1");
    if (depthwise) {
        if (w.dim(1) != 1) {
            throw ShapeError(std::string(opname) + ": depthwise weight must be [C,1,k,k], got " +
                             shape_str(w.shape()));
        }
        if (g.cout != g.cin) {
            throw ShapeError(std::string(opname) + ": depthwise channels disagree: input " +
                             std::to_string(g.cin) + " vs weight " + std::to_string(g.cout));
        }
    } else if (w.dim(1) != g.cin) {
        throw ShapeError(std::string(opname) + ": weight expects " + std::to_string(w.dim(1)) +
                         " input channels, input has " + std::to_string(g.cin));
    }
    if (b.rank() != 1 || b.dim(0) != g.cout) {
        throw ShapeError(std::string(opname) + ": bias must be [" + std::to_string(g.cout) +
                         "], got " + shape_str(b.shape()));
    }
    const int span_h = g.h + 2 * padding - g.k;
    const int span_w = g.w + 2 * padding - g.k;
    if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
        throw ConfigError(std::string(opname) + ": non-integral output extent for input " +
                          shape_str(x.shape()) + ", k=" + std::to_string(g.k) + ", stride=" +
                          std::to_string(stride) + ", padding=" + std::to_string(padding));
    }
    g.oh = span_h / stride + 1;
    g.ow = span_w / stride + 1;
    return g;
}

// Unfolds one batch item into [Cin*k*k, OH*OW] patch columns.
void im2col(const double* x, const ConvGeom& g, double* cols) {
    const std::int64_t plane = static_cast<std::int64_t>(g.h) * g.w;
    std::int64_t r = 0;
    for (int ci = 0; ci < g.cin; ++ci) {
        const double* xc = x + ci * plane;
        for (int kh = 0; kh < g.k; ++kh) {
            for (int kw = 0; kw < g.k; ++kw, ++r) {
                double* row = cols + r * g.oh * g.ow;
                for (int oh = 0; oh < g.oh; ++oh) {
                    const int ih = oh * g.stride - g.padding + kh;
                    double* dst = row + static_cast<std::int64_t>(oh) * g.ow;
                    if (ih < 0 || ih >= g.h) {
                        for (int ow = 0; ow < g.ow; ++ow) dst[ow] = 0.0;
                        continue;
                    }
                    const double* src = xc + static_cast<std::int64_t>(ih) * g.w;
                    for (int ow = 0; ow < g.ow; ++ow) {
                        const int iw = ow * g.stride - g.padding + kw;
                        dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-adds [Cin*k*k, OH*OW] columns back onto one batch item.
void col2im_acc(const double* cols, const ConvGeom& g, double* dx) {
    const std::int64_t plane = static_cast<std::int64_t>(g.h) * g.w;
    std::int64_t r = 0;
    for (int ci = 0; ci < g.cin; ++ci) {
        double* xc = dx + ci * plane;
        for (int kh = 0; kh < g.k; ++kh) {
            for (int kw = 0; kw < g.k; ++kw, ++r) {
                const double* row = cols + r * g.oh * g.ow;
                for (int oh = 0; oh < g.oh; ++oh) {
                    const int ih = oh * g.stride - g.padding + kh;
                    if (ih < 0 || ih >= g.h) continue;
                    double* dst = xc + static_cast<std::int64_t>(ih) * g.w;
                    const double* src = row + static_cast<std::int64_t>(oh) * g.ow;
                    for (int ow = 0; ow < g.ow; ++ow) {
                        const int iw = ow * g.stride - g.padding + kw;
                        if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    const ConvGeom g = conv_geometry(x, w, b, stride, padding, /*depthwise=*/false, "conv2d");
    Tensor out({g.batch, g.cout, g.oh, g.ow});

    const std::int64_t kk = static_cast<std::int64_t>(g.cin) * g.k * g.k;
    const std::int64_t osz = static_cast<std::int64_t>(g.oh) * g.ow;
    const std::int64_t in_item = static_cast<std::int64_t>(g.cin) * g.h * g.w;
    const std::int64_t out_item = static_cast<std::int64_t>(g.cout) * osz;
    std::vector<double> cols(static_cast<std::size_t>(kk * osz));
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int bi = 0; bi < g.batch; ++bi) {
        im2col(px + bi * in_item, g, cols.data());
        detail::gemm(g.cout, static_cast<int>(osz), static_cast<int>(kk), pw, cols.data(),
                     po + bi * out_item);
        for (int co = 0; co < g.cout; ++co) {
            double* ochan = po + bi * out_item + co * osz;
            const double bias = pb[co];
            for (std::int64_t i = 0; i < osz; ++i) ochan[i] += bias;
        }
    }

    const Tensor ins[] = {x, w, b};
    Tape::record("conv2d", ins, out, [x, w, b, g, kk, osz, in_item, out_item](
                                         std::span<const double> grad) {
        double* gx = grad_buffer(x);
        double* gw = grad_buffer(w);
        double* gb = grad_buffer(b);
        const double* px2 = x.data();
        const double* pw2 = w.data();
        if (gb) {
            for (int bi = 0; bi < g.batch; ++bi) {
                for (int co = 0; co < g.cout; ++co) {
                    const double* gchan = grad.data() + bi * out_item + co * osz;
                    double s = 0.0;
                    for (std::int64_t i = 0; i < osz; ++i) s += gchan[i];
                    gb[co] += s;
                }
            }
        }
        // im2col is recomputed per item rather than cached from the forward
        // pass; keeps activation memory flat during training.
        std::vector<double> cols(static_cast<std::size_t>(kk * osz));
        std::vector<double> dcols(gx ? static_cast<std::size_t>(kk * osz) : 0);
        for (int bi = 0; bi < g.batch; ++bi) {
            const double* gitem = grad.data() + bi * out_item;
            if (gw) {
                im2col(px2 + bi * in_item, g, cols.data());
                detail::gemm_bt(g.cout, static_cast<int>(kk), static_cast<int>(osz), gitem,
                                cols.data(), gw, /*acc=*/true);
            }
            if (gx) {
                detail::gemm_at(static_cast<int>(kk), static_cast<int>(osz), g.cout, pw2, gitem,
                                dcols.data());
                col2im_acc(dcols.data(), g, gx + bi * in_item);
            }
        }
    });
    return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        int padding) {
    const ConvGeom g =
        conv_geometry(x, w, b, stride, padding, /*depthwise=*/true, "depthwise_conv2d");
    Tensor out({g.batch, g.cin, g.oh, g.ow});

    const std::int64_t plane = static_cast<std::int64_t>(g.h) * g.w;
    const std::int64_t oplane = static_cast<std::int64_t>(g.oh) * g.ow;
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int bi = 0; bi < g.batch; ++bi) {
        for (int c = 0; c < g.cin; ++c) {
            const double* xc = px + (static_cast<std::int64_t>(bi) * g.cin + c) * plane;
            const double* wc = pw + static_cast<std::int64_t>(c) * g.k * g.k;
            double* oc = po + (static_cast<std::int64_t>(bi) * g.cin + c) * oplane;
            for (int oh = 0; oh < g.oh; ++oh) {
                for (int ow = 0; ow < g.ow; ++ow) {
                    double acc = pb[c];
                    for (int kh = 0; kh < g.k; ++kh) {
                        const int ih = oh * g.stride - g.padding + kh;
                        if (ih < 0 || ih >= g.h) continue;
                        for (int kw = 0; kw < g.k; ++kw) {
                            const int iw = ow * g.stride - g.padding + kw;
                            if (iw < 0 || iw >= g.w) continue;
                            acc += xc[static_cast<std::int64_t>(ih) * g.w + iw] *
                                   wc[kh * g.k + kw];
                        }
                    }
                    oc[static_cast<std::int64_t>(oh) * g.ow + ow] = acc;
                }
            }
        }
    }

    const Tensor ins[] = {x, w, b};
    Tape::record("depthwise_conv2d", ins, out,
                 [x, w, b, g, plane, oplane](std::span<const double> grad) {
                     double* gx = grad_buffer(x);
                     double* gw = grad_buffer(w);
                     double* gb = grad_buffer(b);
                     const double* px2 = x.data();
                     const double* pw2 = w.data();
                     for (int bi = 0; bi < g.batch; ++bi) {
                         for (int c = 0; c < g.cin; ++c) {
                             const std::int64_t ci = (static_cast<std::int64_t>(bi) * g.cin + c);
                             const double* xc = px2 + ci * plane;
                             const double* wc = pw2 + static_cast<std::int64_t>(c) * g.k * g.k;
                             const double* gc = grad.data() + ci * oplane;
                             for (int oh = 0; oh < g.oh; ++oh) {
                                 for (int ow = 0; ow < g.ow; ++ow) {
                                     const double gv = gc[static_cast<std::int64_t>(oh) * g.ow + ow];
                                     if (gv == 0.0) continue;
                                     if (gb) gb[c] += gv;
                                     for (int kh = 0; kh < g.k; ++kh) {
                                         const int ih = oh * g.stride - g.padding + kh;
                                         if (ih < 0 || ih >= g.h) continue;
                                         for (int kw = 0; kw < g.k; ++kw) {
                                             const int iw = ow * g.stride - g.padding + kw;
                                             if (iw < 0 || iw >= g.w) continue;
                                             const std::int64_t xi =
                                                 static_cast<std::int64_t>(ih) * g.w + iw;
                                             if (gw) gw[c * g.k * g.k + kh * g.k + kw] +=
                                                 gv * xc[xi];
                                             if (gx) gx[ci * plane + xi] += gv * wc[kh * g.k + kw];
                                         }
                                     }
                                 }
                             }
                         }
                     }
                 });
    return out;
}

}  // namespace aanc
