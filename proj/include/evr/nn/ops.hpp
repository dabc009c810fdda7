#pragma once
#include <algorithm>
#include <cmath>
#include <memory>

#include "evr/geometry.hpp"
#include "evr/nn/tape.hpp"

namespace evr::nn {

// ---- elementwise ----

template <class T>
int add(TapeT<T>& tape, int a, int b) {
    require_same_shape(tape.val(a), tape.val(b), "add");
    TensorT<T> out = tape.val(a);
    const TensorT<T>& vb = tape.val(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return tape.make("add", std::move(out), {a, b}, [a, b](TapeT<T>& t, int self) {
        t.add_grad(a, t.grad(self));
        t.add_grad(b, t.grad(self));
    });
}

template <class T>
int sub(TapeT<T>& tape, int a, int b) {
    require_same_shape(tape.val(a), tape.val(b), "sub");
    TensorT<T> out = tape.val(a);
    const TensorT<T>& vb = tape.val(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return tape.make("sub", std::move(out), {a, b}, [a, b](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        t.add_grad(a, g);
        TensorT<T>& gb = t.grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    });
}

template <class T>
int mul(TapeT<T>& tape, int a, int b) {
    require_same_shape(tape.val(a), tape.val(b), "mul");
    TensorT<T> out = tape.val(a);
    const TensorT<T>& vb = tape.val(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return tape.make("mul", std::move(out), {a, b}, [a, b](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        const TensorT<T>& va = t.val(a);
        const TensorT<T>& vb2 = t.val(b);
        TensorT<T>& ga = t.grad(a);
        TensorT<T>& gb = t.grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i] * vb2[i];
            gb[i] += g[i] * va[i];
        }
    });
}

// y = s * x + c, elementwise with scalar constants.
template <class T>
int affine(TapeT<T>& tape, int x, double s, double c) {
    TensorT<T> out = tape.val(x);
    for (auto& v : out.data) v = T(s) * v + T(c);
    return tape.make("affine", std::move(out), {x}, [x, s](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += T(s) * g[i];
    });
}

template <class T>
int relu(TapeT<T>& tape, int x) {
    TensorT<T> out = tape.val(x);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return tape.make("relu", std::move(out), {x}, [x](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        const TensorT<T>& vx = t.val(x);
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (vx[i] > T(0)) gx[i] += g[i];
    });
}

template <class T>
int sigmoid(TapeT<T>& tape, int x) {
    TensorT<T> out = tape.val(x);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return tape.make("sigmoid", std::move(out), {x}, [x](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        const TensorT<T>& y = t.val(self);
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
}

template <class T>
int tanh_op(TapeT<T>& tape, int x) {
    TensorT<T> out = tape.val(x);
    for (auto& v : out.data) v = std::tanh(v);
    return tape.make("tanh", std::move(out), {x}, [x](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        const TensorT<T>& y = t.val(self);
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
    });
}

// ---- shape ops ----

template <class T>
int reshape(TapeT<T>& tape, int x, std::vector<int> shape) {
    if (shape_numel(shape) != tape.val(x).numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(tape.val(x).shape) +
                         " vs " + shape_str(shape));
    TensorT<T> out(shape, tape.val(x).data);
    return tape.make("reshape", std::move(out), {x}, [x](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

template <class T>
int concat_vec(TapeT<T>& tape, int a, int b) {
    const TensorT<T>& va = tape.val(a);
    const TensorT<T>& vb = tape.val(b);
    if (va.ndim() != 1 || vb.ndim() != 1)
        throw ShapeError("concat_vec: expects rank-1 inputs, got " + shape_str(va.shape) +
                         " and " + shape_str(vb.shape));
    TensorT<T> out = TensorT<T>::zeros({va.dim(0) + vb.dim(0)});
    std::copy(va.data.begin(), va.data.end(), out.data.begin());
    std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.dim(0));
    std::size_t na = va.numel();
    return tape.make("concat_vec", std::move(out), {a, b}, [a, b, na](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        TensorT<T>& ga = t.grad(a);
        TensorT<T>& gb = t.grad(b);
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        for (std::size_t i = na; i < g.numel(); ++i) gb[i - na] += g[i];
    });
}

template <class T>
int concat_c(TapeT<T>& tape, int a, int b) {
    const TensorT<T>& va = tape.val(a);
    const TensorT<T>& vb = tape.val(b);
    if (va.ndim() != 3 || vb.ndim() != 3 || va.dim(1) != vb.dim(1) || va.dim(2) != vb.dim(2))
        throw ShapeError("concat_c: incompatible shapes " + shape_str(va.shape) + " and " +
                         shape_str(vb.shape));
    TensorT<T> out = TensorT<T>::zeros({va.dim(0) + vb.dim(0), va.dim(1), va.dim(2)});
    std::copy(va.data.begin(), va.data.end(), out.data.begin());
    std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + std::ptrdiff_t(va.numel()));
    std::size_t na = va.numel();
    return tape.make("concat_c", std::move(out), {a, b}, [a, b, na](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        TensorT<T>& ga = t.grad(a);
        TensorT<T>& gb = t.grad(b);
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        for (std::size_t i = na; i < g.numel(); ++i) gb[i - na] += g[i];
    });
}

// ---- dense / conv ----

template <class T>
int linear(TapeT<T>& tape, int x, int w, int b) {
    const TensorT<T>& vx = tape.val(x);
    const TensorT<T>& vw = tape.val(w);
    if (vx.ndim() != 1 || vw.ndim() != 2 || vw.dim(1) != vx.dim(0))
        throw ShapeError("linear: weight " + shape_str(vw.shape) + " incompatible with input " +
                         shape_str(vx.shape));
    int O = vw.dim(0), I = vw.dim(1);
    TensorT<T> out = TensorT<T>::zeros({O});
    gemm(false, false, O, 1, I, T(1), vw.data.data(), I, vx.data.data(), 1, T(0), out.data.data(),
         1);
    if (b >= 0) {
        const TensorT<T>& vb = tape.val(b);
        require_same_shape(out, vb, "linear bias");
        for (int i = 0; i < O; ++i) out[std::size_t(i)] += vb[std::size_t(i)];
    }
    std::vector<int> parents = b >= 0 ? std::vector<int>{x, w, b} : std::vector<int>{x, w};
    return tape.make("linear", std::move(out), parents, [x, w, b, O, I](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        const TensorT<T>& vx2 = t.val(x);
        const TensorT<T>& vw2 = t.val(w);
        {
            TensorT<T> tmp = TensorT<T>::zeros({I});
            gemm(true, false, I, 1, O, T(1), vw2.data.data(), I, g.data.data(), 1, T(0),
                 tmp.data.data(), 1);
            t.add_grad(x, tmp);
        }
        {
            TensorT<T> tmp = TensorT<T>::zeros({O, I});
            gemm(false, false, O, I, 1, T(1), g.data.data(), 1, vx2.data.data(), I, T(0),
                 tmp.data.data(), I);
            t.add_grad(w, tmp);
        }
        if (b >= 0) t.add_grad(b, g);
    });
}

namespace detail {

template <class T>
void im2col(const TensorT<T>& x, int kh, int kw, int stride, int pad, int oh, int ow,
            std::vector<T>& col) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t n = std::size_t(oh) * ow;
    col.assign(std::size_t(C) * kh * kw * n, T(0));
    std::size_t row = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                T* dst = col.data() + row * n;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = x.data.data() + (std::size_t(c) * H + iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < W) dst[std::size_t(oy) * ow + ox] = src[ix];
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const std::vector<T>& col, int C, int H, int W, int kh, int kw, int stride,
                int pad, int oh, int ow, TensorT<T>& dx) {
    const std::size_t n = std::size_t(oh) * ow;
    std::size_t row = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                const T* src = col.data() + row * n;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = dx.data.data() + (std::size_t(c) * H + iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[std::size_t(oy) * ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

template <class T>
int conv2d(TapeT<T>& tape, int x, int w, int b, int stride, int pad) {
    const TensorT<T>& vx = tape.val(x);
    const TensorT<T>& vw = tape.val(w);
    if (vx.ndim() != 3 || vw.ndim() != 4 || vw.dim(1) != vx.dim(0))
        throw ShapeError("conv2d: weight " + shape_str(vw.shape) + " incompatible with input " +
                         shape_str(vx.shape));
    const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
    const int K = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    const int oh = (H + 2 * pad - kh) / stride + 1;
    const int ow = (W + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv2d: kernel " + shape_str(vw.shape) + " too large for input " +
                         shape_str(vx.shape));
    const int ckk = C * kh * kw;
    const std::size_t n = std::size_t(oh) * ow;

    auto col = std::make_shared<std::vector<T>>();
    detail::im2col(vx, kh, kw, stride, pad, oh, ow, *col);
    TensorT<T> out = TensorT<T>::zeros({K, oh, ow});
    gemm(false, false, K, int(n), ckk, T(1), vw.data.data(), ckk, col->data(), int(n), T(0),
         out.data.data(), int(n));
    if (b >= 0) {
        const TensorT<T>& vb = tape.val(b);
        if (vb.ndim() != 1 || vb.dim(0) != K)
            throw ShapeError("conv2d: bias " + shape_str(vb.shape) + " incompatible with " +
                             std::to_string(K) + " output channels");
        for (int k = 0; k < K; ++k)
            for (std::size_t i = 0; i < n; ++i) out[std::size_t(k) * n + i] += vb[std::size_t(k)];
    }
    std::vector<int> parents = b >= 0 ? std::vector<int>{x, w, b} : std::vector<int>{x, w};
    return tape.make(
        "conv2d", std::move(out), parents,
        [x, w, b, col, C, H, W, K, kh, kw, stride, pad, oh, ow, ckk, n](TapeT<T>& t, int self) {
            const TensorT<T>& g = t.grad(self);
            const TensorT<T>& vw2 = t.val(w);
            {
                TensorT<T> dw = TensorT<T>::zeros({K, C, kh, kw});
                gemm(false, true, K, ckk, int(n), T(1), g.data.data(), int(n), col->data(),
                     int(n), T(0), dw.data.data(), ckk);
                t.add_grad(w, dw);
            }
            {
                std::vector<T> dcol(std::size_t(ckk) * n);
                gemm(true, false, ckk, int(n), K, T(1), vw2.data.data(), ckk, g.data.data(),
                     int(n), T(0), dcol.data(), int(n));
                TensorT<T>& gx = t.grad(x);
                detail::col2im_add(dcol, C, H, W, kh, kw, stride, pad, oh, ow, gx);
            }
            if (b >= 0) {
                TensorT<T>& gb = t.grad(b);
                for (int k = 0; k < K; ++k) {
                    T s = T(0);
                    for (std::size_t i = 0; i < n; ++i) s += g[std::size_t(k) * n + i];
                    gb[std::size_t(k)] += s;
                }
            }
        });
}

template <class T>
int maxpool2x2(TapeT<T>& tape, int x) {
    const TensorT<T>& vx = tape.val(x);
    if (vx.ndim() != 3) throw ShapeError("maxpool2x2: expects (C,H,W), got " + shape_str(vx.shape));
    const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
    const int oh = H / 2, ow = W / 2; // odd trailing row/col dropped
    if (oh == 0 || ow == 0) throw ShapeError("maxpool2x2: input too small " + shape_str(vx.shape));
    TensorT<T> out = TensorT<T>::zeros({C, oh, ow});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
    std::size_t o = 0;
    for (int c = 0; c < C; ++c) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++o) {
                T best = -std::numeric_limits<T>::infinity();
                std::int32_t bi = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dxk = 0; dxk < 2; ++dxk) {
                        std::size_t idx =
                            (std::size_t(c) * H + (2 * oy + dy)) * W + (2 * ox + dxk);
                        if (vx[idx] > best) {
                            best = vx[idx];
                            bi = std::int32_t(idx);
                        }
                    }
                }
                out[o] = best;
                (*argmax)[o] = bi;
            }
        }
    }
    return tape.make("maxpool2x2", std::move(out), {x}, [x, argmax](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[std::size_t((*argmax)[i])] += g[i];
    });
}

// Single-sample batch norm over spatial extent. In train mode the batch
// statistics normalize and an update for the running buffers is recorded on
// the tape (applied later, in episode order, via flush_bn). In eval mode the
// stored running statistics make this a per-channel affine map.
template <class T>
int batchnorm2d(TapeT<T>& tape, int x, int gamma, int beta, ParamStoreT<T>* store,
                const std::string& base, bool train, double eps = 1e-5) {
    const TensorT<T>& vx = tape.val(x);
    if (vx.ndim() != 3) throw ShapeError("batchnorm2d: expects (C,H,W), got " + shape_str(vx.shape));
    const int C = vx.dim(0);
    const std::size_t n = std::size_t(vx.dim(1)) * vx.dim(2);
    const TensorT<T>& vg = tape.val(gamma);
    const TensorT<T>& vb = tape.val(beta);
    if (vg.ndim() != 1 || vg.dim(0) != C || vb.ndim() != 1 || vb.dim(0) != C)
        throw ShapeError("batchnorm2d: gamma/beta " + shape_str(vg.shape) +
                         " incompatible with input " + shape_str(vx.shape));

    if (train) {
        auto mean = std::make_shared<std::vector<T>>(C);
        auto invstd = std::make_shared<std::vector<T>>(C);
        std::vector<T> var(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) {
            const T* px = vx.data.data() + std::size_t(c) * n;
            T m = T(0);
            for (std::size_t i = 0; i < n; ++i) m += px[i];
            m /= T(n);
            T v = T(0);
            for (std::size_t i = 0; i < n; ++i) v += (px[i] - m) * (px[i] - m);
            v /= T(n);
            (*mean)[std::size_t(c)] = m;
            var[std::size_t(c)] = v;
            (*invstd)[std::size_t(c)] = T(1) / std::sqrt(v + T(eps));
        }
        TensorT<T> out = TensorT<T>::zeros(vx.shape);
        for (int c = 0; c < C; ++c) {
            const T* px = vx.data.data() + std::size_t(c) * n;
            T* po = out.data.data() + std::size_t(c) * n;
            T m = (*mean)[std::size_t(c)], is = (*invstd)[std::size_t(c)];
            T gm = vg[std::size_t(c)], bt = vb[std::size_t(c)];
            for (std::size_t i = 0; i < n; ++i) po[i] = gm * (px[i] - m) * is + bt;
        }
        tape.bn_updates.push_back({store, base, *mean, var});
        return tape.make(
            "batchnorm2d", std::move(out), {x, gamma, beta},
            [x, gamma, beta, mean, invstd, C, n](TapeT<T>& t, int self) {
                const TensorT<T>& g = t.grad(self);
                const TensorT<T>& vx2 = t.val(x);
                const TensorT<T>& vg2 = t.val(gamma);
                TensorT<T>& gx = t.grad(x);
                TensorT<T>& gg = t.grad(gamma);
                TensorT<T>& gb = t.grad(beta);
                for (int c = 0; c < C; ++c) {
                    const T* px = vx2.data.data() + std::size_t(c) * n;
                    const T* pg = g.data.data() + std::size_t(c) * n;
                    T* pgx = gx.data.data() + std::size_t(c) * n;
                    T m = (*mean)[std::size_t(c)], is = (*invstd)[std::size_t(c)];
                    T sum_g = T(0), sum_gx = T(0);
                    for (std::size_t i = 0; i < n; ++i) {
                        T xh = (px[i] - m) * is;
                        sum_g += pg[i];
                        sum_gx += pg[i] * xh;
                    }
                    gg[std::size_t(c)] += sum_gx;
                    gb[std::size_t(c)] += sum_g;
                    T gm = vg2[std::size_t(c)];
                    for (std::size_t i = 0; i < n; ++i) {
                        T xh = (px[i] - m) * is;
                        pgx[i] += gm * is * (pg[i] - sum_g / T(n) - xh * sum_gx / T(n));
                    }
                }
            });
    }

    // eval mode: snapshot current running stats into the closure
    const TensorT<T>& rm = store->buffer(base + ".rm");
    const TensorT<T>& rv = store->buffer(base + ".rv");
    auto mean = std::make_shared<std::vector<T>>(rm.data);
    auto invstd = std::make_shared<std::vector<T>>(std::size_t(C));
    for (int c = 0; c < C; ++c)
        (*invstd)[std::size_t(c)] = T(1) / std::sqrt(rv[std::size_t(c)] + T(eps));
    TensorT<T> out = TensorT<T>::zeros(vx.shape);
    for (int c = 0; c < C; ++c) {
        const T* px = vx.data.data() + std::size_t(c) * n;
        T* po = out.data.data() + std::size_t(c) * n;
        T m = (*mean)[std::size_t(c)], is = (*invstd)[std::size_t(c)];
        T gm = vg[std::size_t(c)], bt = vb[std::size_t(c)];
        for (std::size_t i = 0; i < n; ++i) po[i] = gm * (px[i] - m) * is + bt;
    }
    return tape.make("batchnorm2d_eval", std::move(out), {x, gamma, beta},
                     [x, gamma, beta, mean, invstd, C, n](TapeT<T>& t, int self) {
                         const TensorT<T>& g = t.grad(self);
                         const TensorT<T>& vx2 = t.val(x);
                         const TensorT<T>& vg2 = t.val(gamma);
                         TensorT<T>& gx = t.grad(x);
                         TensorT<T>& gg = t.grad(gamma);
                         TensorT<T>& gb = t.grad(beta);
                         for (int c = 0; c < C; ++c) {
                             const T* px = vx2.data.data() + std::size_t(c) * n;
                             const T* pg = g.data.data() + std::size_t(c) * n;
                             T* pgx = gx.data.data() + std::size_t(c) * n;
                             T m = (*mean)[std::size_t(c)], is = (*invstd)[std::size_t(c)];
                             T gm = vg2[std::size_t(c)];
                             for (std::size_t i = 0; i < n; ++i) {
                                 pgx[i] += gm * is * pg[i];
                                 gg[std::size_t(c)] += pg[i] * (px[i] - m) * is;
                                 gb[std::size_t(c)] += pg[i];
                             }
                         }
                     });
}

// ---- resampling ----

namespace detail {

struct Tap {
    int i0, i1;
    double w0, w1;
};

// align_corners = false source coordinate for a destination index.
inline Tap bilinear_tap(int dst, int src_extent, double scale) {
    double s = (dst + 0.5) * scale - 0.5;
    double f = std::floor(s);
    int i0 = int(f), i1 = i0 + 1;
    double w1 = s - f;
    Tap t;
    t.i0 = std::clamp(i0, 0, src_extent - 1);
    t.i1 = std::clamp(i1, 0, src_extent - 1);
    t.w0 = 1.0 - w1;
    t.w1 = w1;
    return t;
}

} // namespace detail

template <class T>
int resize_bilinear(TapeT<T>& tape, int x, int oh, int ow) {
    const TensorT<T>& vx = tape.val(x);
    if (vx.ndim() != 3)
        throw ShapeError("resize_bilinear: expects (C,H,W), got " + shape_str(vx.shape));
    const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
    const double sy = double(H) / oh, sx = double(W) / ow;
    TensorT<T> out = TensorT<T>::zeros({C, oh, ow});
    for (int oy = 0; oy < oh; ++oy) {
        auto ty = detail::bilinear_tap(oy, H, sy);
        for (int ox = 0; ox < ow; ++ox) {
            auto tx = detail::bilinear_tap(ox, W, sx);
            for (int c = 0; c < C; ++c) {
                double v = ty.w0 * (tx.w0 * vx.at3(c, ty.i0, tx.i0) + tx.w1 * vx.at3(c, ty.i0, tx.i1)) +
                           ty.w1 * (tx.w0 * vx.at3(c, ty.i1, tx.i0) + tx.w1 * vx.at3(c, ty.i1, tx.i1));
                out.at3(c, oy, ox) = T(v);
            }
        }
    }
    return tape.make("resize_bilinear", std::move(out), {x},
                     [x, C, H, W, oh, ow, sy, sx](TapeT<T>& t, int self) {
                         const TensorT<T>& g = t.grad(self);
                         TensorT<T>& gx = t.grad(x);
                         for (int oy = 0; oy < oh; ++oy) {
                             auto ty = detail::bilinear_tap(oy, H, sy);
                             for (int ox = 0; ox < ow; ++ox) {
                                 auto tx = detail::bilinear_tap(ox, W, sx);
                                 for (int c = 0; c < C; ++c) {
                                     T gv = g.at3(c, oy, ox);
                                     gx.at3(c, ty.i0, tx.i0) += T(ty.w0 * tx.w0) * gv;
                                     gx.at3(c, ty.i0, tx.i1) += T(ty.w0 * tx.w1) * gv;
                                     gx.at3(c, ty.i1, tx.i0) += T(ty.w1 * tx.w0) * gv;
                                     gx.at3(c, ty.i1, tx.i1) += T(ty.w1 * tx.w1) * gv;
                                 }
                             }
                         }
                     });
}

// Bilinear crop of a feature map over a box given in feature coordinates
// (integer coordinate = cell center), resampled to P x P.
template <class T>
int roi_bilinear(TapeT<T>& tape, int x, BoxF box, int P) {
    const TensorT<T>& vx = tape.val(x);
    if (vx.ndim() != 3)
        throw ShapeError("roi_bilinear: expects (C,H,W), got " + shape_str(vx.shape));
    if (box.w() <= 0 || box.h() <= 0)
        throw ValidationError("roi_bilinear: degenerate box (zero area)");
    const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);

    auto taps_y = std::make_shared<std::vector<detail::Tap>>();
    auto taps_x = std::make_shared<std::vector<detail::Tap>>();
    for (int i = 0; i < P; ++i) {
        double fy = box.y0 + box.h() * (i + 0.5) / P;
        double fx = box.x0 + box.w() * (i + 0.5) / P;
        auto mk = [](double s, int extent) {
            double f = std::floor(s);
            detail::Tap t;
            t.i0 = std::clamp(int(f), 0, extent - 1);
            t.i1 = std::clamp(int(f) + 1, 0, extent - 1);
            t.w1 = s - f;
            t.w0 = 1.0 - t.w1;
            return t;
        };
        taps_y->push_back(mk(fy, H));
        taps_x->push_back(mk(fx, W));
    }
    TensorT<T> out = TensorT<T>::zeros({C, P, P});
    for (int i = 0; i < P; ++i) {
        const auto& ty = (*taps_y)[std::size_t(i)];
        for (int j = 0; j < P; ++j) {
            const auto& tx = (*taps_x)[std::size_t(j)];
            for (int c = 0; c < C; ++c) {
                double v = ty.w0 * (tx.w0 * vx.at3(c, ty.i0, tx.i0) + tx.w1 * vx.at3(c, ty.i0, tx.i1)) +
                           ty.w1 * (tx.w0 * vx.at3(c, ty.i1, tx.i0) + tx.w1 * vx.at3(c, ty.i1, tx.i1));
                out.at3(c, i, j) = T(v);
            }
        }
    }
    return tape.make("roi_bilinear", std::move(out), {x},
                     [x, taps_y, taps_x, C, P](TapeT<T>& t, int self) {
                         const TensorT<T>& g = t.grad(self);
                         TensorT<T>& gx = t.grad(x);
                         for (int i = 0; i < P; ++i) {
                             const auto& ty = (*taps_y)[std::size_t(i)];
                             for (int j = 0; j < P; ++j) {
                                 const auto& tx = (*taps_x)[std::size_t(j)];
                                 for (int c = 0; c < C; ++c) {
                                     T gv = g.at3(c, i, j);
                                     gx.at3(c, ty.i0, tx.i0) += T(ty.w0 * tx.w0) * gv;
                                     gx.at3(c, ty.i0, tx.i1) += T(ty.w0 * tx.w1) * gv;
                                     gx.at3(c, ty.i1, tx.i0) += T(ty.w1 * tx.w0) * gv;
                                     gx.at3(c, ty.i1, tx.i1) += T(ty.w1 * tx.w1) * gv;
                                 }
                             }
                         }
                     });
}

// ---- lookup / reductions / distributions ----

template <class T>
int embedding_row(TapeT<T>& tape, int table, int row) {
    const TensorT<T>& vt = tape.val(table);
    if (vt.ndim() != 2) throw ShapeError("embedding_row: table must be 2-d, got " + shape_str(vt.shape));
    if (row < 0 || row >= vt.dim(0))
        throw ValidationError("embedding_row: row " + std::to_string(row) + " out of range");
    const int E = vt.dim(1);
    TensorT<T> out = TensorT<T>::zeros({E});
    std::copy(vt.data.begin() + std::ptrdiff_t(row) * E,
              vt.data.begin() + std::ptrdiff_t(row + 1) * E, out.data.begin());
    return tape.make("embedding_row", std::move(out), {table}, [table, row, E](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        TensorT<T>& gt = t.grad(table);
        for (int i = 0; i < E; ++i) gt[std::size_t(row) * E + std::size_t(i)] += g[std::size_t(i)];
    });
}

template <class T>
int sum_all(TapeT<T>& tape, int x) {
    const TensorT<T>& vx = tape.val(x);
    T s = T(0);
    for (T v : vx.data) s += v;
    return tape.make("sum_all", TensorT<T>({1}, {s}), {x}, [x](TapeT<T>& t, int self) {
        T g = t.grad(self)[0];
        TensorT<T>& gx = t.grad(x);
        for (auto& v : gx.data) v += g;
    });
}

template <class T>
int mean_all(TapeT<T>& tape, int x) {
    const TensorT<T>& vx = tape.val(x);
    T s = T(0);
    for (T v : vx.data) s += v;
    std::size_t n = vx.numel();
    return tape.make("mean_all", TensorT<T>({1}, {T(s / T(n))}), {x}, [x, n](TapeT<T>& t, int self) {
        T g = t.grad(self)[0] / T(n);
        TensorT<T>& gx = t.grad(x);
        for (auto& v : gx.data) v += g;
    });
}

template <class T>
int pick(TapeT<T>& tape, int x, int index) {
    const TensorT<T>& vx = tape.val(x);
    if (index < 0 || std::size_t(index) >= vx.numel())
        throw ShapeError("pick: index " + std::to_string(index) + " out of range for " +
                         shape_str(vx.shape));
    return tape.make("pick", TensorT<T>({1}, {vx[std::size_t(index)]}), {x},
                     [x, index](TapeT<T>& t, int self) {
                         t.grad(x)[std::size_t(index)] += t.grad(self)[0];
                     });
}

template <class T>
int softmax_vec(TapeT<T>& tape, int x) {
    const TensorT<T>& vx = tape.val(x);
    if (vx.ndim() != 1) throw ShapeError("softmax: expects rank-1, got " + shape_str(vx.shape));
    TensorT<T> out = vx;
    T m = *std::max_element(out.data.begin(), out.data.end());
    T z = T(0);
    for (auto& v : out.data) {
        v = std::exp(v - m);
        z += v;
    }
    for (auto& v : out.data) v /= z;
    return tape.make("softmax", std::move(out), {x}, [x](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        const TensorT<T>& y = t.val(self);
        T dot = T(0);
        for (std::size_t i = 0; i < g.numel(); ++i) dot += g[i] * y[i];
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += y[i] * (g[i] - dot);
    });
}

template <class T>
int log_softmax_vec(TapeT<T>& tape, int x) {
    const TensorT<T>& vx = tape.val(x);
    if (vx.ndim() != 1) throw ShapeError("log_softmax: expects rank-1, got " + shape_str(vx.shape));
    TensorT<T> out = vx;
    T m = *std::max_element(out.data.begin(), out.data.end());
    T z = T(0);
    for (T v : out.data) z += std::exp(v - m);
    T lse = m + std::log(z);
    for (auto& v : out.data) v -= lse;
    return tape.make("log_softmax", std::move(out), {x}, [x](TapeT<T>& t, int self) {
        const TensorT<T>& g = t.grad(self);
        const TensorT<T>& y = t.val(self);
        T sum_g = T(0);
        for (std::size_t i = 0; i < g.numel(); ++i) sum_g += g[i];
        TensorT<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] - std::exp(y[i]) * sum_g;
    });
}

// ---- losses ----

template <class T>
int cross_entropy(TapeT<T>& tape, int logits, int target_class) {
    const TensorT<T>& vl = tape.val(logits);
    if (vl.ndim() != 1) throw ShapeError("cross_entropy: logits must be rank-1, got " + shape_str(vl.shape));
    if (target_class < 0 || target_class >= vl.dim(0))
        throw ValidationError("cross_entropy: target class out of range");
    T m = *std::max_element(vl.data.begin(), vl.data.end());
    T z = T(0);
    for (T v : vl.data) z += std::exp(v - m);
    T loss = m + std::log(z) - vl[std::size_t(target_class)];
    return tape.make("cross_entropy", TensorT<T>({1}, {loss}), {logits},
                     [logits, target_class](TapeT<T>& t, int self) {
                         T g = t.grad(self)[0];
                         const TensorT<T>& vl2 = t.val(logits);
                         T m2 = *std::max_element(vl2.data.begin(), vl2.data.end());
                         T z2 = T(0);
                         for (T v : vl2.data) z2 += std::exp(v - m2);
                         TensorT<T>& gl = t.grad(logits);
                         for (std::size_t i = 0; i < vl2.numel(); ++i) {
                             T p = std::exp(vl2[i] - m2) / z2;
                             gl[i] += g * (p - (int(i) == target_class ? T(1) : T(0)));
                         }
                     });
}

// Mean over elements of: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
template <class T>
int smooth_l1(TapeT<T>& tape, int pred, TensorT<T> target) {
    const TensorT<T>& vp = tape.val(pred);
    require_same_shape(vp, target, "smooth_l1");
    const std::size_t n = vp.numel();
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        T d = vp[i] - target[i];
        T a = std::abs(d);
        loss += a < T(1) ? T(0.5) * d * d : a - T(0.5);
    }
    loss /= T(n);
    auto tgt = std::make_shared<TensorT<T>>(std::move(target));
    return tape.make("smooth_l1", TensorT<T>({1}, {loss}), {pred}, [pred, tgt, n](TapeT<T>& t, int self) {
        T g = t.grad(self)[0] / T(n);
        const TensorT<T>& vp2 = t.val(pred);
        TensorT<T>& gp = t.grad(pred);
        for (std::size_t i = 0; i < n; ++i) {
            T d = vp2[i] - (*tgt)[i];
            gp[i] += g * std::clamp(d, T(-1), T(1));
        }
    });
}

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy on probabilities, clamped to [1e-7, 1-1e-7].
// Gradient is zero where the clamp is active.
template <class T>
int binary_cross_entropy(TapeT<T>& tape, int probs, TensorT<T> target) {
    const TensorT<T>& vp = tape.val(probs);
    require_same_shape(vp, target, "binary_cross_entropy");
    const std::size_t n = vp.numel();
    const T lo = T(kBceClamp), hi = T(1) - T(kBceClamp);
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        T p = std::clamp(vp[i], lo, hi);
        T y = target[i];
        loss += -(y * std::log(p) + (T(1) - y) * std::log(T(1) - p));
    }
    loss /= T(n);
    auto tgt = std::make_shared<TensorT<T>>(std::move(target));
    return tape.make("bce", TensorT<T>({1}, {loss}), {probs}, [probs, tgt, n, lo, hi](TapeT<T>& t, int self) {
        T g = t.grad(self)[0] / T(n);
        const TensorT<T>& vp2 = t.val(probs);
        TensorT<T>& gp = t.grad(probs);
        for (std::size_t i = 0; i < n; ++i) {
            T p = vp2[i];
            if (p < lo || p > hi) continue;
            T y = (*tgt)[i];
            gp[i] += g * (p - y) / (p * (T(1) - p));
        }
    });
}

// ---- recurrent composites ----
// Cho-style GRU: z and r gates on [x, h]; candidate on [x, r*h];
// h' = z*h + (1-z)*candidate, so a saturated update gate keeps the state.

template <class T>
struct GruWeights {
    int wz, bz, wr, br, wh, bh;
};

template <class T>
int gru_cell(TapeT<T>& tape, int x, int h, const GruWeights<T>& w) {
    int xh = concat_vec(tape, x, h);
    int z = sigmoid(tape, linear(tape, xh, w.wz, w.bz));
    int r = sigmoid(tape, linear(tape, xh, w.wr, w.br));
    int rh = mul(tape, r, h);
    int xrh = concat_vec(tape, x, rh);
    int cand = tanh_op(tape, linear(tape, xrh, w.wh, w.bh));
    return add(tape, mul(tape, z, h), mul(tape, affine(tape, z, -1.0, 1.0), cand));
}

template <class T>
int conv_gru_cell(TapeT<T>& tape, int x, int h, const GruWeights<T>& w) {
    int xh = concat_c(tape, x, h);
    int z = sigmoid(tape, conv2d(tape, xh, w.wz, w.bz, 1, 1));
    int r = sigmoid(tape, conv2d(tape, xh, w.wr, w.br, 1, 1));
    int rh = mul(tape, r, h);
    int xrh = concat_c(tape, x, rh);
    int cand = tanh_op(tape, conv2d(tape, xrh, w.wh, w.bh, 1, 1));
    return add(tape, mul(tape, z, h), mul(tape, affine(tape, z, -1.0, 1.0), cand));
}

} // namespace evr::nn
