#include "capsforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace capsforge {

namespace {

template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> parents, std::function<void(Node<T>&)> bwd) {
    check_finite<T>(value, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    node->leaf = false;
    bool track = grad_enabled();
    if (track) {
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        track = any;
    }
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(bwd);
    }
    return Tensor<T>(node);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

template <class T>
void require_ndim(const Tensor<T>& t, std::size_t n, const char* op, const char* arg) {
    if (t.ndim() != n)
        throw DimensionError(std::string(op) + ": " + arg + " must have " + std::to_string(n) +
                             " axes, got shape " + shape_str(t.shape()));
}

}  // namespace

template <class T>
void gemm_accum(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict__ arow = a + i * k;
        T* __restrict__ crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* __restrict__ brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    work::add_macs(static_cast<std::uint64_t>(m) * k * n);
}

// ---- elementwise -----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] + bn->value[i];
    work::add_macs(out.size());
    return make_op<T>("add", a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] - bn->value[i];
    work::add_macs(out.size());
    return make_op<T>("sub", a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] * bn->value[i];
    work::add_macs(out.size());
    return make_op<T>("mul", a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    auto an = a.node();
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] + c;
    return make_op<T>("add_scalar", a.shape(), std::move(out), {an}, [an](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    auto an = a.node();
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] * c;
    work::add_macs(out.size());
    return make_op<T>("mul_scalar", a.shape(), std::move(out), {an}, [an, c](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    auto xn = x.node();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn->value[i] > T(0) ? xn->value[i] : T(0);
    return make_op<T>("relu", x.shape(), std::move(out), {xn}, [xn](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        // subgradient 0 at exactly 0
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (xn->value[i] > T(0)) xn->grad[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto xn = x.node();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xn->value[i];
        if (v >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            out[i] = e / (T(1) + e);
        }
    }
    work::add_macs(4 * out.size());
    return make_op<T>("sigmoid", x.shape(), std::move(out), {xn}, [xn](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T y = self.value[i];
            xn->grad[i] += self.grad[i] * y * (T(1) - y);
        }
    });
}

// ---- shape -----------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape target) {
    if (shape_size(target) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(target));
    auto xn = x.node();
    std::vector<T> out = xn->value;
    return make_op<T>("reshape", std::move(target), std::move(out), {xn}, [xn](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

// ---- reductions ------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    auto xn = x.node();
    T acc = T(0);
    for (std::size_t i = 0; i < xn->value.size(); ++i) acc += xn->value[i];
    work::add_macs(x.size());
    return make_op<T>("sum", Shape{1}, std::vector<T>{acc}, {xn}, [xn](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = self.grad[0];
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
}

// ---- conv / pool / dense ---------------------------------------------------

namespace {

// cols layout: [C*kh*kw rows][Ho*Wo columns], each row contiguous over output
// positions so the GEMM inner loop is unit-stride.
template <class T>
void im2col(const T* img, std::size_t c_dim, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t ho, std::size_t wo, T* cols) {
    std::size_t row = 0;
    for (std::size_t c = 0; c < c_dim; ++c) {
        for (std::size_t ih = 0; ih < kh; ++ih) {
            for (std::size_t iw = 0; iw < kw; ++iw, ++row) {
                T* dst = cols + row * (ho * wo);
                const T* src = img + c * h * w + ih * w + iw;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const T* s = src + oy * stride * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = s[ox * stride];
                }
            }
        }
    }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride) {
    require_ndim(input, 4, "conv2d", "input");
    require_ndim(kernel, 4, "conv2d", "kernel");
    require_ndim(bias, 1, "conv2d", "bias");
    if (stride == 0) throw ContractError("conv2d: stride must be >= 1");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t f = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kc != c)
        throw DimensionError("conv2d: input channel axis (" + std::to_string(c) + ") != kernel channel axis (" +
                             std::to_string(kc) + ")");
    if (kh > h || kw > w)
        throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " larger than input " + std::to_string(h) + "x" + std::to_string(w));
    if (bias.dim(0) != f)
        throw DimensionError("conv2d: bias axis (" + std::to_string(bias.dim(0)) + ") != filter axis (" +
                             std::to_string(f) + ")");
    const std::size_t ho = (h - kh) / stride + 1;
    const std::size_t wo = (w - kw) / stride + 1;
    const std::size_t k = c * kh * kw;
    const std::size_t p = ho * wo;

    auto in_n = input.node();
    auto kr_n = kernel.node();
    auto bs_n = bias.node();
    std::vector<T> out(n * f * p, T(0));
    std::vector<T> cols(k * p);
    for (std::size_t i = 0; i < n; ++i) {
        im2col(in_n->value.data() + i * c * h * w, c, h, w, kh, kw, stride, ho, wo, cols.data());
        gemm_accum(f, k, p, kr_n->value.data(), cols.data(), out.data() + i * f * p);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ff = 0; ff < f; ++ff) {
            T* row = out.data() + (i * f + ff) * p;
            const T b = bs_n->value[ff];
            for (std::size_t j = 0; j < p; ++j) row[j] += b;
        }

    auto bwd = [in_n, kr_n, bs_n, n, c, h, w, f, kh, kw, stride, ho, wo, k, p](Node<T>& self) {
        const T* g = self.grad.data();
        if (bs_n->requires_grad) {
            bs_n->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ff = 0; ff < f; ++ff) {
                    const T* grow = g + (i * f + ff) * p;
                    T acc = T(0);
                    for (std::size_t j = 0; j < p; ++j) acc += grow[j];
                    bs_n->grad[ff] += acc;
                }
        }
        const bool need_k = kr_n->requires_grad;
        const bool need_x = in_n->requires_grad;
        if (!need_k && !need_x) return;
        if (need_k) kr_n->ensure_grad();
        if (need_x) in_n->ensure_grad();
        std::vector<T> cols(k * p);
        std::vector<T> colsT(need_k ? p * k : 0);
        std::vector<T> dcols(need_x ? k * p : 0);
        for (std::size_t i = 0; i < n; ++i) {
            im2col(in_n->value.data() + i * c * h * w, c, h, w, kh, kw, stride, ho, wo, cols.data());
            const T* gi = g + i * f * p;
            if (need_k) {
                for (std::size_t rr = 0; rr < k; ++rr)
                    for (std::size_t j = 0; j < p; ++j) colsT[j * k + rr] = cols[rr * p + j];
                gemm_accum(f, p, k, gi, colsT.data(), kr_n->grad.data());
            }
            if (need_x) {
                std::fill(dcols.begin(), dcols.end(), T(0));
                // dcols = kernel^T (as [K,F]) * g; ikj with A read column-wise
                for (std::size_t rr = 0; rr < k; ++rr) {
                    T* __restrict__ drow = dcols.data() + rr * p;
                    for (std::size_t ff = 0; ff < f; ++ff) {
                        const T kv = kr_n->value[ff * k + rr];
                        const T* __restrict__ grow = gi + ff * p;
                        for (std::size_t j = 0; j < p; ++j) drow[j] += kv * grow[j];
                    }
                }
                work::add_macs(static_cast<std::uint64_t>(k) * f * p);
                T* din = in_n->grad.data() + i * c * h * w;
                std::size_t row = 0;
                for (std::size_t cc = 0; cc < c; ++cc)
                    for (std::size_t ih = 0; ih < kh; ++ih)
                        for (std::size_t iw = 0; iw < kw; ++iw, ++row) {
                            const T* src = dcols.data() + row * p;
                            T* dst = din + cc * h * w + ih * w + iw;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                                T* d = dst + oy * stride * w;
                                for (std::size_t ox = 0; ox < wo; ++ox) d[ox * stride] += src[oy * wo + ox];
                            }
                        }
            }
        }
    };
    return make_op<T>("conv2d", Shape{n, f, ho, wo}, std::move(out), {in_n, kr_n, bs_n}, std::move(bwd));
}

template <class T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
    require_ndim(input, 4, "maxpool2d", "input");
    if (window == 0 || stride == 0) throw ContractError("maxpool2d: window and stride must be >= 1");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (window > h || window > w)
        throw DimensionError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                             std::to_string(h) + "x" + std::to_string(w));
    const std::size_t ho = (h - window) / stride + 1;
    const std::size_t wo = (w - window) / stride + 1;
    auto in_n = input.node();
    std::vector<T> out(n * c * ho * wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    std::size_t oi = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t cc = 0; cc < c; ++cc) {
            const T* plane = in_n->value.data() + (i * c + cc) * h * w;
            const std::size_t base = (i * c + cc) * h * w;
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox, ++oi) {
                    T best = plane[oy * stride * w + ox * stride];
                    std::size_t best_idx = base + oy * stride * w + ox * stride;
                    for (std::size_t iy = 0; iy < window; ++iy)
                        for (std::size_t ix = 0; ix < window; ++ix) {
                            const std::size_t yy = oy * stride + iy, xx = ox * stride + ix;
                            const T v = plane[yy * w + xx];
                            if (v > best) {  // strict: first index wins ties
                                best = v;
                                best_idx = base + yy * w + xx;
                            }
                        }
                    out[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
        }
    return make_op<T>("maxpool2d", Shape{n, c, ho, wo}, std::move(out), {in_n}, [in_n, argmax](Node<T>& self) {
        if (!in_n->requires_grad) return;
        in_n->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) in_n->grad[(*argmax)[i]] += self.grad[i];
    });
}

template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_ndim(x, 2, "dense", "input");
    require_ndim(weight, 2, "dense", "weight");
    require_ndim(bias, 1, "dense", "bias");
    const std::size_t n = x.dim(0), in = x.dim(1);
    const std::size_t wi = weight.dim(0), out_dim = weight.dim(1);
    if (in != wi)
        throw DimensionError("dense: input axis 1 (" + std::to_string(in) + ") != weight axis 0 (" +
                             std::to_string(wi) + ")");
    if (bias.dim(0) != out_dim)
        throw DimensionError("dense: bias axis (" + std::to_string(bias.dim(0)) + ") != weight axis 1 (" +
                             std::to_string(out_dim) + ")");
    auto xn = x.node(), wn = weight.node(), bn = bias.node();
    std::vector<T> out(n * out_dim, T(0));
    gemm_accum(n, in, out_dim, xn->value.data(), wn->value.data(), out.data());
    for (std::size_t i = 0; i < n; ++i) {
        T* row = out.data() + i * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) row[o] += bn->value[o];
    }
    auto bwd = [xn, wn, bn, n, in, out_dim](Node<T>& self) {
        const T* g = self.grad.data();
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < out_dim; ++o) bn->grad[o] += g[i * out_dim + o];
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const T* xrow = xn->value.data() + i * in;
                const T* grow = g + i * out_dim;
                for (std::size_t ii = 0; ii < in; ++ii) {
                    const T xv = xrow[ii];
                    T* __restrict__ wrow = wn->grad.data() + ii * out_dim;
                    for (std::size_t o = 0; o < out_dim; ++o) wrow[o] += xv * grow[o];
                }
            }
            work::add_macs(static_cast<std::uint64_t>(n) * in * out_dim);
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            std::vector<T> wt(out_dim * in);
            for (std::size_t ii = 0; ii < in; ++ii)
                for (std::size_t o = 0; o < out_dim; ++o) wt[o * in + ii] = wn->value[ii * out_dim + o];
            gemm_accum(n, out_dim, in, g, wt.data(), xn->grad.data());
        }
    };
    return make_op<T>("dense", Shape{n, out_dim}, std::move(out), {xn, wn, bn}, std::move(bwd));
}

// ---- softmax ---------------------------------------------------------------

template <class T>
Tensor<T> softmax_axis(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.ndim())
        throw DimensionError("softmax_axis: axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(x.shape()));
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    auto xn = x.node();
    std::vector<T> out(x.size());
    const T* v = xn->value.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            T mx = v[base];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, v[base + l * inner]);
            T sum = T(0);
            for (std::size_t l = 0; l < len; ++l) {
                const T e = std::exp(v[base + l * inner] - mx);
                out[base + l * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
        }
    work::add_macs(5 * x.size());
    return make_op<T>("softmax", x.shape(), std::move(out), {xn}, [xn, outer, inner, len](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* y = self.value.data();
        const T* g = self.grad.data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                T dot = T(0);
                for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t idx = base + l * inner;
                    xn->grad[idx] += y[idx] * (g[idx] - dot);
                }
            }
    });
}

// ---- capsule primitives ----------------------------------------------------

template <class T>
Tensor<T> squash(const Tensor<T>& s, T eps) {
    if (s.ndim() < 1) throw DimensionError("squash: needs at least one axis");
    const std::size_t d = s.shape().back();
    const std::size_t rows = s.size() / d;
    auto sn = s.node();
    std::vector<T> out(s.size());
    const T* v = sn->value.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = v + r * d;
        T m = eps;
        for (std::size_t i = 0; i < d; ++i) m += row[i] * row[i];
        const T factor = std::sqrt(m) / (T(1) + m);
        T* o = out.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) o[i] = row[i] * factor;
    }
    work::add_macs(3 * s.size());
    return make_op<T>("squash", s.shape(), std::move(out), {sn}, [sn, d, rows, eps](Node<T>& self) {
        if (!sn->requires_grad) return;
        sn->ensure_grad();
        const T* v = sn->value.data();
        const T* g = self.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = v + r * d;
            const T* grow = g + r * d;
            T m = eps, sg = T(0);
            for (std::size_t i = 0; i < d; ++i) m += row[i] * row[i];
            for (std::size_t i = 0; i < d; ++i) sg += row[i] * grow[i];
            const T root = std::sqrt(m);
            const T factor = root / (T(1) + m);
            // d factor / d m = (1 - m) / (2 sqrt(m) (1 + m)^2)
            const T dfac = (T(1) - m) / (T(2) * root * (T(1) + m) * (T(1) + m));
            T* dst = sn->grad.data() + r * d;
            for (std::size_t i = 0; i < d; ++i) dst[i] += factor * grow[i] + T(2) * row[i] * dfac * sg;
        }
    });
}

template <class T>
Tensor<T> norm_last_axis(const Tensor<T>& x, T eps) {
    if (x.ndim() < 1) throw DimensionError("norm_last_axis: needs at least one axis");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    auto xn = x.node();
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<T> out(rows);
    const T* v = xn->value.data();
    for (std::size_t r = 0; r < rows; ++r) {
        T m = eps;
        for (std::size_t i = 0; i < d; ++i) m += v[r * d + i] * v[r * d + i];
        out[r] = std::sqrt(m);
    }
    work::add_macs(x.size());
    return make_op<T>("norm", std::move(out_shape), std::move(out), {xn}, [xn, d, rows, eps](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* v = xn->value.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T scale = self.grad[r] / self.value[r];
            for (std::size_t i = 0; i < d; ++i) xn->grad[r * d + i] += v[r * d + i] * scale;
        }
        (void)eps;
    });
}

template <class T>
Tensor<T> predict_vectors(const Tensor<T>& u, const Tensor<T>& W) {
    const bool batched = u.ndim() == 3;
    if (!batched) require_ndim(u, 2, "predict_vectors", "u");
    require_ndim(W, 4, "predict_vectors", "W");
    const std::size_t n = batched ? u.dim(0) : 1;
    const std::size_t num_in = batched ? u.dim(1) : u.dim(0);
    const std::size_t din = batched ? u.dim(2) : u.dim(1);
    const std::size_t wi = W.dim(0), num_out = W.dim(1), wdin = W.dim(2), dout = W.dim(3);
    if (num_in != wi)
        throw DimensionError("predict_vectors: capsule axis (" + std::to_string(num_in) + ") != W axis 0 (" +
                             std::to_string(wi) + ")");
    if (din != wdin)
        throw DimensionError("predict_vectors: vector axis (" + std::to_string(din) + ") != W axis 2 (" +
                             std::to_string(wdin) + ")");
    auto un = u.node(), wn = W.node();
    std::vector<T> out(n * num_in * num_out * dout, T(0));
    const T* uv = un->value.data();
    const T* wv = wn->value.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < num_in; ++i) {
            const T* urow = uv + (b * num_in + i) * din;
            for (std::size_t j = 0; j < num_out; ++j) {
                const T* wmat = wv + ((i * num_out + j) * din) * dout;
                T* __restrict__ orow = out.data() + ((b * num_in + i) * num_out + j) * dout;
                for (std::size_t dd = 0; dd < din; ++dd) {
                    const T uval = urow[dd];
                    const T* __restrict__ wrow = wmat + dd * dout;
                    for (std::size_t o = 0; o < dout; ++o) orow[o] += uval * wrow[o];
                }
            }
        }
    work::add_macs(static_cast<std::uint64_t>(n) * num_in * num_out * din * dout);
    Shape out_shape = batched ? Shape{n, num_in, num_out, dout} : Shape{num_in, num_out, dout};
    auto bwd = [un, wn, n, num_in, num_out, din, dout](Node<T>& self) {
        const T* g = self.grad.data();
        const T* uv = un->value.data();
        const T* wv = wn->value.data();
        if (un->requires_grad) {
            un->ensure_grad();
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < num_in; ++i) {
                    T* du = un->grad.data() + (b * num_in + i) * din;
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const T* grow = g + ((b * num_in + i) * num_out + j) * dout;
                        const T* wmat = wv + ((i * num_out + j) * din) * dout;
                        for (std::size_t dd = 0; dd < din; ++dd) {
                            T acc = T(0);
                            const T* wrow = wmat + dd * dout;
                            for (std::size_t o = 0; o < dout; ++o) acc += grow[o] * wrow[o];
                            du[dd] += acc;
                        }
                    }
                }
            work::add_macs(static_cast<std::uint64_t>(n) * num_in * num_out * din * dout);
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < num_in; ++i) {
                    const T* urow = uv + (b * num_in + i) * din;
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const T* grow = g + ((b * num_in + i) * num_out + j) * dout;
                        T* dwmat = wn->grad.data() + ((i * num_out + j) * din) * dout;
                        for (std::size_t dd = 0; dd < din; ++dd) {
                            const T uval = urow[dd];
                            T* __restrict__ dwrow = dwmat + dd * dout;
                            for (std::size_t o = 0; o < dout; ++o) dwrow[o] += uval * grow[o];
                        }
                    }
                }
            work::add_macs(static_cast<std::uint64_t>(n) * num_in * num_out * din * dout);
        }
    };
    return make_op<T>("predict_vectors", std::move(out_shape), std::move(out), {un, wn}, std::move(bwd));
}

template <class T>
Tensor<T> coupling_mix(const Tensor<T>& c, const Tensor<T>& uhat) {
    const bool batched = uhat.ndim() == 4;
    if (!batched) require_ndim(uhat, 3, "coupling_mix", "uhat");
    const std::size_t n = batched ? uhat.dim(0) : 1;
    const std::size_t num_in = batched ? uhat.dim(1) : uhat.dim(0);
    const std::size_t num_out = batched ? uhat.dim(2) : uhat.dim(1);
    const std::size_t d = batched ? uhat.dim(3) : uhat.dim(2);
    if (shape_size(c.shape()) != n * num_in * num_out)
        throw DimensionError("coupling_mix: couplings " + shape_str(c.shape()) + " do not match predictions " +
                             shape_str(uhat.shape()));
    auto cn = c.node(), un = uhat.node();
    std::vector<T> out(n * num_out * d, T(0));
    const T* cv = cn->value.data();
    const T* uv = un->value.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < num_in; ++i)
            for (std::size_t j = 0; j < num_out; ++j) {
                const T cij = cv[(b * num_in + i) * num_out + j];
                const T* urow = uv + ((b * num_in + i) * num_out + j) * d;
                T* __restrict__ srow = out.data() + (b * num_out + j) * d;
                for (std::size_t dd = 0; dd < d; ++dd) srow[dd] += cij * urow[dd];
            }
    work::add_macs(static_cast<std::uint64_t>(n) * num_in * num_out * d);
    Shape out_shape = batched ? Shape{n, num_out, d} : Shape{num_out, d};
    auto bwd = [cn, un, n, num_in, num_out, d](Node<T>& self) {
        const T* g = self.grad.data();
        const T* cv = cn->value.data();
        const T* uv = un->value.data();
        if (cn->requires_grad) {
            cn->ensure_grad();
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < num_in; ++i)
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const T* grow = g + (b * num_out + j) * d;
                        const T* urow = uv + ((b * num_in + i) * num_out + j) * d;
                        T acc = T(0);
                        for (std::size_t dd = 0; dd < d; ++dd) acc += grow[dd] * urow[dd];
                        cn->grad[(b * num_in + i) * num_out + j] += acc;
                    }
        }
        if (un->requires_grad) {
            un->ensure_grad();
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < num_in; ++i)
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const T cij = cv[(b * num_in + i) * num_out + j];
                        const T* grow = g + (b * num_out + j) * d;
                        T* __restrict__ du = un->grad.data() + ((b * num_in + i) * num_out + j) * d;
                        for (std::size_t dd = 0; dd < d; ++dd) du[dd] += cij * grow[dd];
                    }
        }
        work::add_macs(2ull * n * num_in * num_out * d);
    };
    return make_op<T>("coupling_mix", std::move(out_shape), std::move(out), {cn, un}, std::move(bwd));
}

template <class T>
Tensor<T> agreement(const Tensor<T>& uhat, const Tensor<T>& v) {
    const bool batched = uhat.ndim() == 4;
    if (!batched) require_ndim(uhat, 3, "agreement", "uhat");
    const std::size_t n = batched ? uhat.dim(0) : 1;
    const std::size_t num_in = batched ? uhat.dim(1) : uhat.dim(0);
    const std::size_t num_out = batched ? uhat.dim(2) : uhat.dim(1);
    const std::size_t d = batched ? uhat.dim(3) : uhat.dim(2);
    if (shape_size(v.shape()) != n * num_out * d)
        throw DimensionError("agreement: outputs " + shape_str(v.shape()) + " do not match predictions " +
                             shape_str(uhat.shape()));
    auto un = uhat.node(), vn = v.node();
    std::vector<T> out(n * num_in * num_out);
    const T* uv = un->value.data();
    const T* vv = vn->value.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < num_in; ++i)
            for (std::size_t j = 0; j < num_out; ++j) {
                const T* urow = uv + ((b * num_in + i) * num_out + j) * d;
                const T* vrow = vv + (b * num_out + j) * d;
                T acc = T(0);
                for (std::size_t dd = 0; dd < d; ++dd) acc += urow[dd] * vrow[dd];
                out[(b * num_in + i) * num_out + j] = acc;
            }
    work::add_macs(static_cast<std::uint64_t>(n) * num_in * num_out * d);
    Shape out_shape = batched ? Shape{n, num_in, num_out} : Shape{num_in, num_out};
    auto bwd = [un, vn, n, num_in, num_out, d](Node<T>& self) {
        const T* g = self.grad.data();
        const T* uv = un->value.data();
        const T* vv = vn->value.data();
        if (un->requires_grad) {
            un->ensure_grad();
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < num_in; ++i)
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const T gij = g[(b * num_in + i) * num_out + j];
                        const T* vrow = vv + (b * num_out + j) * d;
                        T* __restrict__ du = un->grad.data() + ((b * num_in + i) * num_out + j) * d;
                        for (std::size_t dd = 0; dd < d; ++dd) du[dd] += gij * vrow[dd];
                    }
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < num_in; ++i)
                    for (std::size_t j = 0; j < num_out; ++j) {
                        const T gij = g[(b * num_in + i) * num_out + j];
                        const T* urow = uv + ((b * num_in + i) * num_out + j) * d;
                        T* __restrict__ dv = vn->grad.data() + (b * num_out + j) * d;
                        for (std::size_t dd = 0; dd < d; ++dd) dv[dd] += gij * urow[dd];
                    }
        }
        work::add_macs(2ull * n * num_in * num_out * d);
    };
    return make_op<T>("agreement", std::move(out_shape), std::move(out), {un, vn}, std::move(bwd));
}

template <class T>
Tensor<T> group_capsules(const Tensor<T>& x, std::size_t types, std::size_t dim) {
    require_ndim(x, 4, "group_capsules", "input");
    const std::size_t n = x.dim(0), ch = x.dim(1), gh = x.dim(2), gw = x.dim(3);
    if (ch != types * dim)
        throw DimensionError("group_capsules: channel axis (" + std::to_string(ch) + ") != types*dim (" +
                             std::to_string(types * dim) + ")");
    auto xn = x.node();
    const std::size_t caps = types * gh * gw;
    std::vector<T> out(n * caps * dim);
    const T* v = xn->value.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < types; ++t)
            for (std::size_t r = 0; r < gh; ++r)
                for (std::size_t c = 0; c < gw; ++c) {
                    const std::size_t cap = (t * gh + r) * gw + c;
                    T* o = out.data() + (b * caps + cap) * dim;
                    for (std::size_t dd = 0; dd < dim; ++dd)
                        o[dd] = v[((b * ch + t * dim + dd) * gh + r) * gw + c];
                }
    return make_op<T>("group_capsules", Shape{n, caps, dim}, std::move(out), {xn},
                      [xn, n, ch, gh, gw, types, dim, caps](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          const T* g = self.grad.data();
                          for (std::size_t b = 0; b < n; ++b)
                              for (std::size_t t = 0; t < types; ++t)
                                  for (std::size_t r = 0; r < gh; ++r)
                                      for (std::size_t c = 0; c < gw; ++c) {
                                          const std::size_t cap = (t * gh + r) * gw + c;
                                          const T* grow = g + (b * caps + cap) * dim;
                                          for (std::size_t dd = 0; dd < dim; ++dd)
                                              xn->grad[((b * ch + t * dim + dd) * gh + r) * gw + c] += grow[dd];
                                      }
                      });
}

template <class T>
Tensor<T> mask_rows(const Tensor<T>& caps, const std::vector<int>& selected) {
    require_ndim(caps, 3, "mask_rows", "capsules");
    const std::size_t n = caps.dim(0), j = caps.dim(1), d = caps.dim(2);
    if (selected.size() != n)
        throw DimensionError("mask_rows: need one class per sample (" + std::to_string(n) + "), got " +
                             std::to_string(selected.size()));
    for (std::size_t i = 0; i < n; ++i)
        if (selected[i] < 0 || static_cast<std::size_t>(selected[i]) >= j)
            throw ContractError("mask_rows: class index " + std::to_string(selected[i]) + " out of range [0," +
                                std::to_string(j) + ") at sample " + std::to_string(i));
    auto cn = caps.node();
    std::vector<T> out(n * j * d, T(0));
    const T* v = cn->value.data();
    auto sel = std::make_shared<std::vector<int>>(selected);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = static_cast<std::size_t>(selected[i]);
        const T* src = v + (i * j + cls) * d;
        T* dst = out.data() + i * j * d + cls * d;
        for (std::size_t dd = 0; dd < d; ++dd) dst[dd] = src[dd];
    }
    return make_op<T>("mask_rows", Shape{n, j * d}, std::move(out), {cn}, [cn, sel, n, j, d](Node<T>& self) {
        if (!cn->requires_grad) return;
        cn->ensure_grad();
        const T* g = self.grad.data();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t cls = static_cast<std::size_t>((*sel)[i]);
            const T* grow = g + i * j * d + cls * d;
            T* dst = cn->grad.data() + (i * j + cls) * d;
            for (std::size_t dd = 0; dd < d; ++dd) dst[dd] += grow[dd];
        }
    });
}

// ---- losses ----------------------------------------------------------------

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    require_ndim(logits, 2, "cross_entropy", "logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n)
        throw DimensionError("cross_entropy: need one label per row (" + std::to_string(n) + "), got " +
                             std::to_string(labels.size()));
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " out of range at row " +
                                std::to_string(i));
    auto ln = logits.node();
    auto lab = std::make_shared<std::vector<int>>(labels);
    const T* v = ln->value.data();
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = v + i * k;
        T mx = row[0];
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < k; ++c) sum += std::exp(row[c] - mx);
        total += std::log(sum) - (row[static_cast<std::size_t>(labels[i])] - mx);
    }
    total /= static_cast<T>(n);
    work::add_macs(3 * logits.size());
    return make_op<T>("cross_entropy", Shape{1}, std::vector<T>{total}, {ln}, [ln, lab, n, k](Node<T>& self) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const T g0 = self.grad[0] / static_cast<T>(n);
        const T* v = ln->value.data();
        for (std::size_t i = 0; i < n; ++i) {
            const T* row = v + i * k;
            T mx = row[0];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
            T sum = T(0);
            for (std::size_t c = 0; c < k; ++c) sum += std::exp(row[c] - mx);
            T* drow = ln->grad.data() + i * k;
            for (std::size_t c = 0; c < k; ++c) {
                const T soft = std::exp(row[c] - mx) / sum;
                drow[c] += g0 * (soft - (static_cast<std::size_t>((*lab)[i]) == c ? T(1) : T(0)));
            }
        }
    });
}

// ---- non-graph helpers -----------------------------------------------------

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& x) {
    require_ndim(x, 2, "argmax_rows", "input");
    const std::size_t n = x.dim(0), k = x.dim(1);
    std::vector<int> out(n);
    const T* v = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = v + i * k;
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (row[c] > row[best]) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

template <class T>
Tensor<T> one_hot(const std::vector<int>& labels, std::size_t classes, T on, T off) {
    std::vector<T> data(labels.size() * classes, off);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw ContractError("one_hot: label " + std::to_string(labels[i]) + " out of range");
        data[i * classes + static_cast<std::size_t>(labels[i])] = on;
    }
    return Tensor<T>::from_data({labels.size(), classes}, std::move(data), false);
}

#define CAPSFORGE_INSTANTIATE_OPS(T)                                                                     \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                               \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                               \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                        \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                     \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                              \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                                     \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);     \
    template Tensor<T> maxpool2d<T>(const Tensor<T>&, std::size_t, std::size_t);                         \
    template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> softmax_axis<T>(const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> squash<T>(const Tensor<T>&, T);                                                   \
    template Tensor<T> norm_last_axis<T>(const Tensor<T>&, T);                                           \
    template Tensor<T> predict_vectors<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> coupling_mix<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> agreement<T>(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> group_capsules<T>(const Tensor<T>&, std::size_t, std::size_t);                    \
    template Tensor<T> mask_rows<T>(const Tensor<T>&, const std::vector<int>&);                          \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);                      \
    template std::vector<int> argmax_rows<T>(const Tensor<T>&);                                          \
    template Tensor<T> one_hot<T>(const std::vector<int>&, std::size_t, T, T);                           \
    template void gemm_accum<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);

CAPSFORGE_INSTANTIATE_OPS(float)
CAPSFORGE_INSTANTIATE_OPS(double)
#undef CAPSFORGE_INSTANTIATE_OPS

}  // namespace capsforge
