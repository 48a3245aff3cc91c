#include "msdial/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace msdial {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<detail::TensorImpl>;

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                        shape_str(b) + " do not broadcast");
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Element stride into `in` for each axis of `out` (0 on broadcast axes).
// `in` is right-aligned to `out`.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::vector<std::size_t> natural(in.size());
    std::size_t acc = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        natural[i] = acc;
        acc *= in[i];
    }
    const std::size_t offset = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
        strides[offset + i] = (in[i] == out[offset + i]) ? natural[i] : 0;
    }
    return strides;
}

// Walks `out_shape` in row-major order calling f(out_flat, a_flat, b_flat).
template <class F>
void for_each_broadcast(const Shape& out_shape, const std::vector<std::size_t>& a_strides,
                        const std::vector<std::size_t>& b_strides, F&& f) {
    const std::size_t n = shape_numel(out_shape);
    const std::size_t rank = out_shape.size();
    std::vector<std::size_t> coords(rank, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t ax = rank; ax-- > 0;) {
            ++coords[ax];
            ia += a_strides[ax];
            ib += b_strides[ax];
            if (coords[ax] < out_shape[ax]) break;
            ia -= a_strides[ax] * out_shape[ax];
            ib -= b_strides[ax] * out_shape[ax];
            coords[ax] = 0;
        }
    }
}

void maybe_record(OpKind kind, std::initializer_list<Tensor> inputs, Tensor& out,
                  std::function<void()> backward_fn) {
    Tape* tape = Tape::active();
    if (tape == nullptr) return;
    bool any_grad = false;
    for (const Tensor& t : inputs) any_grad = any_grad || t.requires_grad();
    if (!any_grad) return;
    out.set_requires_grad(true);
    std::vector<ImplPtr> impls;
    impls.reserve(inputs.size());
    for (const Tensor& t : inputs) impls.push_back(t.impl());
    tape->record({kind, std::move(impls), out.impl(), std::move(backward_fn)});
}

// dst.grad += sign * out_grad (* factor, broadcast over out_shape), reduced
// over the axes dst was broadcast along.
void accum_reduced(TensorImpl& dst, const Shape& out_shape, const std::vector<double>& out_grad,
                   const TensorImpl* factor, double sign) {
    dst.ensure_grad();
    if (factor == nullptr && dst.shape == out_shape) {
        for (std::size_t i = 0; i < out_grad.size(); ++i) dst.grad[i] += sign * out_grad[i];
        return;
    }
    const auto dst_strides = broadcast_strides(dst.shape, out_shape);
    const auto fac_strides = factor != nullptr ? broadcast_strides(factor->shape, out_shape)
                                               : std::vector<std::size_t>(out_shape.size(), 0);
    const double* fac_data = factor != nullptr ? factor->data.data() : nullptr;
    for_each_broadcast(out_shape, dst_strides, fac_strides,
                       [&](std::size_t i, std::size_t id, std::size_t ifac) {
                           const double g = fac_data ? out_grad[i] * fac_data[ifac] : out_grad[i];
                           dst.grad[id] += sign * g;
                       });
}

template <class F>
Tensor binary_map(const Tensor& a, const Tensor& b, const char* op, F&& f) {
    if (a.shape() == b.shape()) {
        std::vector<double> data(a.numel());
        const auto av = a.values();
        const auto bv = b.values();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = f(av[i], bv[i]);
        return Tensor::from(a.shape(), std::move(data));
    }
    Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
    std::vector<double> data(shape_numel(out_shape));
    const auto a_strides = broadcast_strides(a.shape(), out_shape);
    const auto b_strides = broadcast_strides(b.shape(), out_shape);
    const auto av = a.values();
    const auto bv = b.values();
    for_each_broadcast(out_shape, a_strides, b_strides,
                       [&](std::size_t i, std::size_t ia, std::size_t ib) {
                           data[i] = f(av[ia], bv[ib]);
                       });
    return Tensor::from(std::move(out_shape), std::move(data));
}

template <class F>
Tensor unary_map(const Tensor& a, F&& f) {
    std::vector<double> data(a.numel());
    const auto av = a.values();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = f(av[i]);
    return Tensor::from(a.shape(), std::move(data));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = binary_map(a, b, "add", [](double x, double y) { return x + y; });
    maybe_record(OpKind::kAdd, {a, b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
        if (ai->requires_grad) accum_reduced(*ai, oi->shape, oi->grad, nullptr, 1.0);
        if (bi->requires_grad) accum_reduced(*bi, oi->shape, oi->grad, nullptr, 1.0);
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor out = binary_map(a, b, "sub", [](double x, double y) { return x - y; });
    maybe_record(OpKind::kSub, {a, b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
        if (ai->requires_grad) accum_reduced(*ai, oi->shape, oi->grad, nullptr, 1.0);
        if (bi->requires_grad) accum_reduced(*bi, oi->shape, oi->grad, nullptr, -1.0);
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Tensor out = binary_map(a, b, "mul", [](double x, double y) { return x * y; });
    maybe_record(OpKind::kMul, {a, b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
        if (ai->requires_grad) accum_reduced(*ai, oi->shape, oi->grad, bi.get(), 1.0);
        if (bi->requires_grad) accum_reduced(*bi, oi->shape, oi->grad, ai.get(), 1.0);
    });
    return out;
}

Tensor neg(const Tensor& a) {
    Tensor out = unary_map(a, [](double x) { return -x; });
    maybe_record(OpKind::kNeg, {a}, out, [ai = a.impl(), oi = out.impl()] {
        ai->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] -= oi->grad[i];
    });
    return out;
}

Tensor relu(const Tensor& a) {
    // NaN propagates rather than clamping to 0, so poisoned values reach the
    // training loss guard.
    Tensor out = unary_map(a, [](double x) { return x > 0.0 ? x : (x != x ? x : 0.0); });
    maybe_record(OpKind::kRelu, {a}, out, [ai = a.impl(), oi = out.impl()] {
        ai->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) {
            if (ai->data[i] > 0.0) ai->grad[i] += oi->grad[i];
        }
    });
    return out;
}

Tensor log(const Tensor& a) {
    const auto av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        // NaN is neither positive nor non-positive; it propagates (IEEE) so
        // the training loss guard can catch it.
        if (av[i] <= 0.0) {
            throw std::domain_error("log of non-positive value " + std::to_string(av[i]) +
                                    " at index " + std::to_string(i));
        }
    }
    Tensor out = unary_map(a, [](double x) { return std::log(x); });
    maybe_record(OpKind::kLog, {a}, out, [ai = a.impl(), oi = out.impl()] {
        ai->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] / ai->data[i];
    });
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = unary_map(a, [](double x) { return std::exp(x); });
    maybe_record(OpKind::kExp, {a}, out, [ai = a.impl(), oi = out.impl()] {
        ai->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * oi->data[i];
    });
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0);
    const std::size_t k = a.extent(1);
    const std::size_t n = b.extent(1);
    if (b.extent(0) != k) {
        throw std::invalid_argument("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                                    " . " + shape_str(b.shape()));
    }
    std::vector<double> data(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double x = av[i * k + kk];
            const double* brow = bv.data() + kk * n;
            double* orow = data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    }
    Tensor out = Tensor::from({m, n}, std::move(data));
    maybe_record(OpKind::kMatmul, {a, b}, out,
                 [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
                     const auto& go = oi->grad;
                     if (ai->requires_grad) {
                         ai->ensure_grad();
                         for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t kk = 0; kk < k; ++kk) {
                                 double s = 0.0;
                                 const double* grow = go.data() + i * n;
                                 const double* brow = bi->data.data() + kk * n;
                                 for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                                 ai->grad[i * k + kk] += s;
                             }
                         }
                     }
                     if (bi->requires_grad) {
                         bi->ensure_grad();
                         for (std::size_t kk = 0; kk < k; ++kk) {
                             for (std::size_t i = 0; i < m; ++i) {
                                 const double x = ai->data[i * k + kk];
                                 const double* grow = go.data() + i * n;
                                 double* drow = bi->grad.data() + kk * n;
                                 for (std::size_t j = 0; j < n; ++j) drow[j] += x * grow[j];
                             }
                         }
                     }
                 });
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    if (x.rank() != 4 || w.rank() != 4) {
        throw std::invalid_argument("conv2d expects rank-4 input and kernel, got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (stride == 0) throw std::invalid_argument("conv2d stride must be positive");
    const std::size_t batch = x.extent(0), cin = x.extent(1), h = x.extent(2), wdt = x.extent(3);
    const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (w.extent(1) != cin) {
        throw std::invalid_argument("conv2d kernel channels " + std::to_string(w.extent(1)) +
                                    " do not match input channels " + std::to_string(cin));
    }
    if (bias.numel() != cout) {
        throw std::invalid_argument("conv2d bias length " + std::to_string(bias.numel()) +
                                    " does not match output channels " + std::to_string(cout));
    }
    if (kh > h + 2 * padding || kw > wdt + 2 * padding) {
        throw std::invalid_argument("conv2d kernel [" + std::to_string(kh) + "x" +
                                    std::to_string(kw) + "] larger than padded input [" +
                                    std::to_string(h + 2 * padding) + "x" +
                                    std::to_string(wdt + 2 * padding) + "]");
    }
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (wdt + 2 * padding - kw) / stride + 1;

    std::vector<double> data(batch * cout * oh * ow);
    const auto xv = x.values();
    const auto wv = w.values();
    const auto bv = bias.values();
    const auto x_at = [&](std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
        return xv[((n * cin + c) * h + i) * wdt + j];
    };
    std::size_t o = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t i = 0; i < oh; ++i) {
                for (std::size_t j = 0; j < ow; ++j, ++o) {
                    double acc = bv[co];
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        for (std::size_t ki = 0; ki < kh; ++ki) {
                            const std::ptrdiff_t hi =
                                static_cast<std::ptrdiff_t>(i * stride + ki) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const std::ptrdiff_t wi =
                                    static_cast<std::ptrdiff_t>(j * stride + kj) -
                                    static_cast<std::ptrdiff_t>(padding);
                                if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(wdt)) continue;
                                acc += x_at(n, ci, hi, wi) *
                                       wv[((co * cin + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    data[o] = acc;
                }
            }
        }
    }
    Tensor out = Tensor::from({batch, cout, oh, ow}, std::move(data));
    maybe_record(
        OpKind::kConv2d, {x, w, bias}, out,
        [xi = x.impl(), wi_ = w.impl(), bi = bias.impl(), oi = out.impl(), batch, cin, cout, h,
         wdt, kh, kw, oh, ow, stride, padding] {
            const bool need_x = xi->requires_grad;
            const bool need_w = wi_->requires_grad;
            const bool need_b = bi->requires_grad;
            if (need_x) xi->ensure_grad();
            if (need_w) wi_->ensure_grad();
            if (need_b) bi->ensure_grad();
            const auto& go = oi->grad;
            std::size_t o = 0;
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t co = 0; co < cout; ++co) {
                    for (std::size_t i = 0; i < oh; ++i) {
                        for (std::size_t j = 0; j < ow; ++j, ++o) {
                            const double g = go[o];
                            if (g == 0.0) continue;
                            if (need_b) bi->grad[co] += g;
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                for (std::size_t ki = 0; ki < kh; ++ki) {
                                    const std::ptrdiff_t hi =
                                        static_cast<std::ptrdiff_t>(i * stride + ki) -
                                        static_cast<std::ptrdiff_t>(padding);
                                    if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(h)) continue;
                                    for (std::size_t kj = 0; kj < kw; ++kj) {
                                        const std::ptrdiff_t wj =
                                            static_cast<std::ptrdiff_t>(j * stride + kj) -
                                            static_cast<std::ptrdiff_t>(padding);
                                        if (wj < 0 || wj >= static_cast<std::ptrdiff_t>(wdt))
                                            continue;
                                        const std::size_t xidx =
                                            ((n * cin + ci) * h + hi) * wdt + wj;
                                        const std::size_t widx =
                                            ((co * cin + ci) * kh + ki) * kw + kj;
                                        if (need_w) wi_->grad[widx] += g * xi->data[xidx];
                                        if (need_x) xi->grad[xidx] += g * wi_->data[widx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    return out;
}

Tensor log_softmax(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw std::invalid_argument("log_softmax expects [N x C] logits, got " +
                                    shape_str(logits.shape()));
    }
    const std::size_t n = logits.extent(0);
    const std::size_t c = logits.extent(1);
    if (c < 2) {
        throw std::invalid_argument("log_softmax needs at least 2 classes, got " +
                                    std::to_string(c));
    }
    std::vector<double> data(n * c);
    const auto lv = logits.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = lv.data() + i * c;
        const double m = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < c; ++j) data[i * c + j] = row[j] - lse;
    }
    Tensor out = Tensor::from({n, c}, std::move(data));
    maybe_record(OpKind::kLogSoftmax, {logits}, out, [li = logits.impl(), oi = out.impl(), n, c] {
        li->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double* grow = oi->grad.data() + i * c;
            const double* orow = oi->data.data() + i * c;
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += grow[j];
            for (std::size_t j = 0; j < c; ++j) {
                li->grad[i * c + j] += grow[j] - std::exp(orow[j]) * gsum;
            }
        }
    });
    return out;
}

Tensor sum_to(const Tensor& a, const Shape& target) {
    if (target.size() != a.rank()) {
        throw std::invalid_argument("sum_to target rank " + std::to_string(target.size()) +
                                    " does not match input " + shape_str(a.shape()));
    }
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] != a.shape()[i] && target[i] != 1) {
            throw std::invalid_argument("sum_to target " + shape_str(target) +
                                        " incompatible with input " + shape_str(a.shape()));
        }
    }
    std::vector<double> data(shape_numel(target), 0.0);
    const auto t_strides = broadcast_strides(target, a.shape());
    const std::vector<std::size_t> zero(a.rank(), 0);
    const auto av = a.values();
    for_each_broadcast(a.shape(), t_strides, zero,
                       [&](std::size_t i, std::size_t it, std::size_t) { data[it] += av[i]; });
    Tensor out = Tensor::from(target, std::move(data));
    maybe_record(OpKind::kSumTo, {a}, out, [ai = a.impl(), oi = out.impl()] {
        ai->ensure_grad();
        const auto t_strides = broadcast_strides(oi->shape, ai->shape);
        const std::vector<std::size_t> zero(ai->shape.size(), 0);
        for_each_broadcast(ai->shape, t_strides, zero,
                           [&](std::size_t i, std::size_t it, std::size_t) {
                               ai->grad[i] += oi->grad[it];
                           });
    });
    return out;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out = Tensor::scalar(s);
    maybe_record(OpKind::kSumAll, {a}, out, [ai = a.impl(), oi = out.impl()] {
        ai->ensure_grad();
        const double g = oi->grad[0];
        for (double& v : ai->grad) v += g;
    });
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    if (a.rank() == 0) throw std::invalid_argument("slice_rows on a rank-0 tensor");
    const std::size_t rows = a.extent(0);
    if (start + count > rows) {
        throw std::invalid_argument("slice_rows [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") out of range for " +
                                    shape_str(a.shape()));
    }
    const std::size_t row_elems = rows == 0 ? 0 : a.numel() / rows;
    Shape out_shape = a.shape();
    out_shape[0] = count;
    std::vector<double> data(count * row_elems);
    std::copy_n(a.values().data() + start * row_elems, data.size(), data.data());
    Tensor out = Tensor::from(std::move(out_shape), std::move(data));
    maybe_record(OpKind::kSliceRows, {a}, out, [ai = a.impl(), oi = out.impl(), start, row_elems] {
        ai->ensure_grad();
        const std::size_t offset = start * row_elems;
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[offset + i] += oi->grad[i];
    });
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows of zero parts");
    const Shape& first = parts.front().shape();
    if (first.empty()) throw std::invalid_argument("concat_rows of rank-0 tensors");
    std::size_t rows = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.size() ||
            !std::equal(first.begin() + 1, first.end(), p.shape().begin() + 1)) {
            throw std::invalid_argument("concat_rows parts disagree: " + shape_str(first) +
                                        " vs " + shape_str(p.shape()));
        }
        rows += p.extent(0);
    }
    Shape out_shape = first;
    out_shape[0] = rows;
    std::vector<double> data;
    data.reserve(shape_numel(out_shape));
    for (const Tensor& p : parts) {
        const auto pv = p.values();
        data.insert(data.end(), pv.begin(), pv.end());
    }
    Tensor out = Tensor::from(std::move(out_shape), std::move(data));

    Tape* tape = Tape::active();
    bool any_grad = false;
    for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
    if (tape != nullptr && any_grad) {
        out.set_requires_grad(true);
        std::vector<ImplPtr> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        auto inputs = impls;
        tape->record({OpKind::kConcatRows, std::move(impls), oi, [inputs, oi] {
                          std::size_t offset = 0;
                          for (const ImplPtr& p : inputs) {
                              if (p->requires_grad) {
                                  p->ensure_grad();
                                  for (std::size_t i = 0; i < p->data.size(); ++i) {
                                      p->grad[i] += oi->grad[offset + i];
                                  }
                              }
                              offset += p->data.size();
                          }
                      }});
    }
    return out;
}

Tensor reshape(const Tensor& a, const Shape& new_shape) {
    if (shape_numel(new_shape) != a.numel()) {
        throw std::invalid_argument("reshape " + shape_str(a.shape()) + " to " +
                                    shape_str(new_shape) + " changes element count");
    }
    Tensor out = Tensor::from(new_shape, std::vector<double>(a.values().begin(), a.values().end()));
    maybe_record(OpKind::kReshape, {a}, out, [ai = a.impl(), oi = out.impl()] {
        ai->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
    return out;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
    GradCheckReport report;
    const std::size_t n = x.numel();
    report.checked = n;

    const bool old_requires = x.requires_grad();
    std::vector<double> analytic(n, 0.0);
    {
        Tape tape;
        TapeScope scope(tape);
        x.set_requires_grad(true);
        x.impl()->grad.clear();
        Tensor y = f(x);
        if (y.numel() != 1) {
            throw std::invalid_argument("grad_check: f must return a scalar, got shape " +
                                        shape_str(y.shape()));
        }
        tape.backward(y);
        const auto g = x.grad();
        std::copy(g.begin(), g.end(), analytic.begin());
    }
    x.set_requires_grad(old_requires);
    x.impl()->grad.clear();

    const auto eval = [&] {
        NoTapeScope no_tape;
        return f(x).item();
    };
    const double f0 = eval();
    if (!std::isfinite(f0)) report.has_nan = true;

    auto& data = x.impl()->data;
    for (std::size_t i = 0; i < n; ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double fp = eval();
        data[i] = saved - h;
        const double fm = eval();
        data[i] = saved;

        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i])) {
            report.has_nan = true;
            continue;
        }
        const double fwd = (fp - f0) / h;
        const double bwd = (f0 - fm) / h;
        if (std::abs(fwd - bwd) > 0.05 * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
            report.kink_coords.push_back(i);  // one-sided slopes disagree: non-comparable
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max(std::abs(analytic[i]), std::abs(numeric));
        const double err =
            denom < 1e-8 ? std::abs(analytic[i] - numeric) : std::abs(analytic[i] - numeric) / denom;
        if (err > report.max_rel_err) {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    return report;
}

}  // namespace msdial
