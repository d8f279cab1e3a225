#include "toivsf/ops.hpp"

#include <cblas.h>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

#include "toivsf/errors.hpp"

namespace toivsf {

namespace {

// --- gradient fault hook ---------------------------------------------------

std::atomic<bool> g_fault_active{false};
std::mutex g_fault_mutex;
std::string g_fault_op;

real fault_factor(const char* op) {
    if (!g_fault_active.load(std::memory_order_relaxed)) return real(1);
    std::lock_guard<std::mutex> lock(g_fault_mutex);
    return g_fault_op == op ? real(1.5) : real(1);
}

// --- node construction -----------------------------------------------------


void check_live(const Tensor& t, const char* op) {
    if (!t.defined()) throw DimensionError(std::string(op) + ": undefined input tensor");
    if (t.node()->consumed) {
        throw StaleTapeError(std::string(op) + ": input belongs to a consumed tape; re-run the forward pass");
    }
}

void check_finite(const std::vector<real>& values, const char* op) {
    for (real v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

// Creates the output node. The backward closure is attached only when some
// input participates in gradient flow.
Tensor make_result(const char* op, Shape shape, std::vector<real> values,
                   std::vector<const Tensor*> inputs, std::function<void(detail::Node&)> rule) {
    check_finite(values, op);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->op = op;
    bool needs = false;
    if (NoGradGuard::grad_enabled()) {
        for (const Tensor* t : inputs) needs = needs || t->requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (const Tensor* t : inputs) node->inputs.push_back(t->node());
        node->backward = std::move(rule);
    }
    return Tensor::from_node(std::move(node));
}

// Gradient buffer of input i if it wants one, else nullptr.
real* input_grad(detail::Node& out, std::size_t i) {
    detail::Node& in = *out.inputs[i];
    if (!in.requires_grad) return nullptr;
    return in.grad_buffer().data();
}

// --- dense kernels -----------------------------------------------------------

// C(m,n) += A(m,k) B(k,n)
// One BLAS thread keeps summation order, and therefore results, fixed.
const bool g_blas_single_thread = [] {
    openblas_set_num_threads(1);
    return true;
}();

#ifdef TOIVSF_SINGLE_PRECISION
constexpr auto blas_gemm = cblas_sgemm;
#else
constexpr auto blas_gemm = cblas_dgemm;
#endif

// Below this many multiply-adds the BLAS call overhead dominates.
constexpr std::size_t kBlasMinWork = 1 << 15;

// c(m, n) += a(m, k) * b(k, n)
void gemm_nn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n >= kBlasMinWork) {
        blas_gemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1, a, int(k), b, int(n), 1, c,
                  int(n));
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        real* crow = c + i * n;
        const real* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const real av = arow[p];
            const real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c(m, k) += g(m, n) * b(k, n)^T
void gemm_nt(const real* g, const real* b, real* c, std::size_t m, std::size_t n, std::size_t k) {
    if (m * k * n >= kBlasMinWork) {
        blas_gemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(k), int(n), 1, g, int(n), b, int(n), 1, c, int(k));
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const real* grow = g + i * n;
        real* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const real* brow = b + p * n;
            real acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// c(k, n) += a(m, k)^T * g(m, n)
void gemm_tn(const real* a, const real* g, real* c, std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n >= kBlasMinWork) {
        blas_gemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(k), int(n), int(m), 1, a, int(k), g, int(n), 1, c, int(n));
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const real* arow = a + i * k;
        const real* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const real av = arow[p];
            real* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

// --- suffix broadcast for binary elementwise ops ----------------------------

std::size_t suffix_extent(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) return sa.empty() ? 1 : shape_numel(sa);
    if (sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<long>(sb.size()))) {
        return shape_numel(sb);
    }
    throw DimensionError(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " are not broadcast-compatible");
}

}  // namespace

namespace testing {

void set_gradient_fault(const std::string& op) {
    std::lock_guard<std::mutex> lock(g_fault_mutex);
    g_fault_op = op;
    g_fault_active.store(true);
}

void clear_gradient_fault() {
    std::lock_guard<std::mutex> lock(g_fault_mutex);
    g_fault_op.clear();
    g_fault_active.store(false);
}

}  // namespace testing

Tensor add(const Tensor& a, const Tensor& b) {
    check_live(a, "add");
    check_live(b, "add");
    const std::size_t inner = suffix_extent(a, b, "add");
    const std::size_t n = a.numel();
    std::vector<real> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % inner];
    return make_result("add", a.shape(), std::move(out), {&a, &b}, [inner](detail::Node& o) {
        const real f = fault_factor("add");
        const std::vector<real>& g = o.grad;
        if (real* ga = input_grad(o, 0)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f * g[i];
        }
        if (real* gb = input_grad(o, 1)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += f * g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_live(a, "sub");
    check_live(b, "sub");
    const std::size_t inner = suffix_extent(a, b, "sub");
    const std::size_t n = a.numel();
    std::vector<real> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i % inner];
    return make_result("sub", a.shape(), std::move(out), {&a, &b}, [inner](detail::Node& o) {
        const real f = fault_factor("sub");
        const std::vector<real>& g = o.grad;
        if (real* ga = input_grad(o, 0)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f * g[i];
        }
        if (real* gb = input_grad(o, 1)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] -= f * g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_live(a, "mul");
    check_live(b, "mul");
    const std::size_t inner = suffix_extent(a, b, "mul");
    const std::size_t n = a.numel();
    std::vector<real> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i % inner];
    return make_result("mul", a.shape(), std::move(out), {&a, &b}, [inner](detail::Node& o) {
        const real f = fault_factor("mul");
        const std::vector<real>& g = o.grad;
        const std::vector<real>& av = o.inputs[0]->values;
        const std::vector<real>& bv = o.inputs[1]->values;
        if (real* ga = input_grad(o, 0)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f * g[i] * bv[i % inner];
        }
        if (real* gb = input_grad(o, 1)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += f * g[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, real factor) {
    check_live(a, "scale");
    std::vector<real> out(a.values().begin(), a.values().end());
    for (real& v : out) v *= factor;
    return make_result("scale", a.shape(), std::move(out), {&a}, [factor](detail::Node& o) {
        const real f = fault_factor("scale");
        const std::vector<real>& g = o.grad;
        if (real* ga = input_grad(o, 0)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f * factor * g[i];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_live(a, "matmul");
    check_live(b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
        throw DimensionError("matmul: cannot multiply " + shape_str(sa) + " by " + shape_str(sb));
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const std::size_t n = sb[sb.size() - 1];

    // Broadcast the batch axes.
    const Shape batch_a(sa.begin(), sa.end() - 2);
    const Shape batch_b(sb.begin(), sb.end() - 2);
    const std::size_t rank = std::max(batch_a.size(), batch_b.size());
    Shape batch(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i + batch_a.size() >= rank ? batch_a[i + batch_a.size() - rank] : 1;
        const std::size_t eb = i + batch_b.size() >= rank ? batch_b[i + batch_b.size() - rank] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw DimensionError("matmul: batch axes of " + shape_str(sa) + " and " + shape_str(sb) +
                                 " are not broadcast-compatible");
        }
        batch[i] = std::max(ea, eb);
    }
    const std::size_t nbatch = shape_numel(batch);

    // Per output batch: offsets (in matrices) into a and b.
    std::vector<std::size_t> off_a(nbatch), off_b(nbatch);
    {
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t flat = 0; flat < nbatch; ++flat) {
            std::size_t fa = 0, fb = 0;
            for (std::size_t i = 0; i < rank; ++i) {
                if (i + batch_a.size() >= rank) {
                    const std::size_t e = batch_a[i + batch_a.size() - rank];
                    fa = fa * e + (e == 1 ? 0 : idx[i]);
                }
                if (i + batch_b.size() >= rank) {
                    const std::size_t e = batch_b[i + batch_b.size() - rank];
                    fb = fb * e + (e == 1 ? 0 : idx[i]);
                }
            }
            off_a[flat] = fa;
            off_b[flat] = fb;
            for (std::size_t i = rank; i-- > 0;) {
                if (++idx[i] < batch[i]) break;
                idx[i] = 0;
            }
        }
    }

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<real> out(nbatch * m * n, real(0));
    const real* av = a.values().data();
    const real* bv = b.values().data();
    const bool shared_b = batch_b.empty() || shape_numel(batch_b) == 1;
    const bool flat_a = shared_b && shape_numel(batch_a) == nbatch;
    if (flat_a) {
        gemm_nn(av, bv, out.data(), nbatch * m, k, n);
    } else {
        for (std::size_t t = 0; t < nbatch; ++t) {
            gemm_nn(av + off_a[t] * m * k, bv + off_b[t] * k * n, out.data() + t * m * n, m, k, n);
        }
    }

    return make_result("matmul", std::move(out_shape), std::move(out), {&a, &b},
                       [m, k, n, nbatch, flat_a, off_a = std::move(off_a), off_b = std::move(off_b)](detail::Node& o) {
                           const real f = fault_factor("matmul");
                           const real* g = o.grad.data();
                           const real* av = o.inputs[0]->values.data();
                           const real* bv = o.inputs[1]->values.data();
                           std::vector<real> scaled;
                           if (f != real(1)) {
                               scaled.assign(o.grad.begin(), o.grad.end());
                               for (real& v : scaled) v *= f;
                               g = scaled.data();
                           }
                           real* ga = input_grad(o, 0);
                           real* gb = input_grad(o, 1);
                           if (flat_a) {
                               if (ga) gemm_nt(g, bv, ga, nbatch * m, n, k);
                               if (gb) gemm_tn(av, g, gb, nbatch * m, k, n);
                               return;
                           }
                           for (std::size_t t = 0; t < nbatch; ++t) {
                               const real* gt = g + t * m * n;
                               if (ga) gemm_nt(gt, bv + off_b[t] * k * n, ga + off_a[t] * m * k, m, n, k);
                               if (gb) gemm_tn(av + off_a[t] * m * k, gt, gb + off_b[t] * k * n, m, k, n);
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    return add(matmul(x, weight), bias);
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    check_live(a, "reshape");
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<real> out(a.values().begin(), a.values().end());
    return make_result("reshape", shape, std::move(out), {&a}, [](detail::Node& o) {
        const real f = fault_factor("reshape");
        if (real* ga = input_grad(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += f * o.grad[i];
        }
    });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
    check_live(a, "permute");
    const Shape& s = a.shape();
    const std::size_t rank = s.size();
    if (order.size() != rank) throw DimensionError("permute: order rank mismatch for " + shape_str(s));
    std::vector<bool> seen(rank, false);
    for (std::size_t axis : order) {
        if (axis >= rank || seen[axis]) throw DimensionError("permute: invalid axis order for " + shape_str(s));
        seen[axis] = true;
    }
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
    Shape out_shape(rank);
    std::vector<std::size_t> stride(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = s[order[i]];
        stride[i] = in_stride[order[i]];
    }
    const std::size_t n = a.numel();
    std::vector<std::size_t> source(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        source[flat] = offset;
        for (std::size_t i = rank; i-- > 0;) {
            offset += stride[i];
            if (++idx[i] < out_shape[i]) break;
            offset -= stride[i] * out_shape[i];
            idx[i] = 0;
        }
    }
    std::vector<real> out(n);
    auto av = a.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = av[source[i]];
    return make_result("permute", std::move(out_shape), std::move(out), {&a},
                       [source = std::move(source)](detail::Node& o) {
                           const real f = fault_factor("permute");
                           if (real* ga = input_grad(o, 0)) {
                               for (std::size_t i = 0; i < source.size(); ++i) ga[source[i]] += f * o.grad[i];
                           }
                       });
}

Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1) {
    std::vector<std::size_t> order(a.dim());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (axis0 >= order.size() || axis1 >= order.size()) {
        throw DimensionError("transpose: axis out of range for " + shape_str(a.shape()));
    }
    std::swap(order[axis0], order[axis1]);
    return permute(a, order);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const Tensor& p : parts) {
        check_live(p, "concat");
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) throw DimensionError("concat: " + shape_str(s) + " does not match " + shape_str(first));
        extents.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t row = out_shape[axis] * inner;

    std::vector<real> out(outer * row);
    std::size_t col = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::size_t len = extents[p] * inner;
        auto pv = parts[p].values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.begin() + static_cast<long>(o * len), len, out.begin() + static_cast<long>(o * row + col));
        }
        col += len;
    }
    std::vector<const Tensor*> inputs;
    for (const Tensor& p : parts) inputs.push_back(&p);
    return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs),
                       [extents, outer, inner, row](detail::Node& o) {
                           const real f = fault_factor("concat");
                           std::size_t col = 0;
                           for (std::size_t p = 0; p < extents.size(); ++p) {
                               const std::size_t len = extents[p] * inner;
                               if (real* gp = input_grad(o, p)) {
                                   for (std::size_t r = 0; r < outer; ++r) {
                                       for (std::size_t j = 0; j < len; ++j) gp[r * len + j] += f * o.grad[r * row + col + j];
                                   }
                               }
                               col += len;
                           }
                       });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    check_live(x, "softmax");
    const Shape& s = x.shape();
    if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    auto xv = x.values();
    std::vector<real> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            real peak = -std::numeric_limits<real>::infinity();
            for (std::size_t j = 0; j < len; ++j) peak = std::max(peak, xv[base + j * inner]);
            real total = 0;
            for (std::size_t j = 0; j < len; ++j) {
                const real e = std::exp(xv[base + j * inner] - peak);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    return make_result("softmax", s, std::move(out), {&x}, [outer, inner, len](detail::Node& o) {
        const real f = fault_factor("softmax");
        real* gx = input_grad(o, 0);
        if (!gx) return;
        const std::vector<real>& y = o.values;
        const std::vector<real>& g = o.grad;
        for (std::size_t r = 0; r < outer; ++r) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = r * len * inner + in;
                real dot = 0;
                for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t i = base + j * inner;
                    gx[i] += f * y[i] * (g[i] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
    check_live(x, "layer_norm");
    check_live(gamma, "layer_norm");
    check_live(beta, "layer_norm");
    if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
    const Shape& s = x.shape();
    const std::size_t width = s.back();
    if (gamma.numel() != width || beta.numel() != width) {
        throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match last axis of " + shape_str(s));
    }
    const std::size_t rows = x.numel() / width;
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<real> out(x.numel());
    std::vector<real> normed(x.numel());
    std::vector<real> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const real* row = xv.data() + r * width;
        real mu = 0;
        for (std::size_t j = 0; j < width; ++j) mu += row[j];
        mu /= static_cast<real>(width);
        real var = 0;
        for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<real>(width);
        const real rstd = real(1) / std::sqrt(var + eps);
        inv_std[r] = rstd;
        for (std::size_t j = 0; j < width; ++j) {
            const real h = (row[j] - mu) * rstd;
            normed[r * width + j] = h;
            out[r * width + j] = h * gv[j] + bv[j];
        }
    }
    return make_result("layer_norm", s, std::move(out), {&x, &gamma, &beta},
                       [rows, width, normed = std::move(normed), inv_std = std::move(inv_std)](detail::Node& o) {
                           const real f = fault_factor("layer_norm");
                           const std::vector<real>& g = o.grad;
                           const std::vector<real>& gamma_v = o.inputs[1]->values;
                           real* gx = input_grad(o, 0);
                           real* ggamma = input_grad(o, 1);
                           real* gbeta = input_grad(o, 2);
                           const real inv_w = real(1) / static_cast<real>(width);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const real* gr = g.data() + r * width;
                               const real* hr = normed.data() + r * width;
                               if (gx) {
                                   real mean_dh = 0, mean_dh_h = 0;
                                   for (std::size_t j = 0; j < width; ++j) {
                                       const real dh = gr[j] * gamma_v[j];
                                       mean_dh += dh;
                                       mean_dh_h += dh * hr[j];
                                   }
                                   mean_dh *= inv_w;
                                   mean_dh_h *= inv_w;
                                   for (std::size_t j = 0; j < width; ++j) {
                                       const real dh = gr[j] * gamma_v[j];
                                       gx[r * width + j] += f * inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                                   }
                               }
                               for (std::size_t j = 0; j < width; ++j) {
                                   if (ggamma) ggamma[j] += f * gr[j] * hr[j];
                                   if (gbeta) gbeta[j] += f * gr[j];
                               }
                           }
                       });
}

Tensor relu(const Tensor& x) {
    check_live(x, "relu");
    std::vector<real> out(x.values().begin(), x.values().end());
    for (real& v : out) v = v < 0 ? real(0) : v;  // NaN propagates to the finiteness check
    return make_result("relu", x.shape(), std::move(out), {&x}, [](detail::Node& o) {
        const real f = fault_factor("relu");
        real* gx = input_grad(o, 0);
        if (!gx) return;
        const std::vector<real>& xv = o.inputs[0]->values;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            if (xv[i] > 0) gx[i] += f * o.grad[i];
        }
    });
}

Tensor gelu(const Tensor& x) {
    check_live(x, "gelu");
    constexpr real inv_sqrt2 = real(0.70710678118654752440);
    std::vector<real> out(x.values().begin(), x.values().end());
    for (real& v : out) v = v * real(0.5) * (real(1) + std::erf(v * inv_sqrt2));
    return make_result("gelu", x.shape(), std::move(out), {&x}, [](detail::Node& o) {
        constexpr real inv_sqrt2 = real(0.70710678118654752440);
        constexpr real inv_sqrt_2pi = real(0.39894228040143267794);
        const real f = fault_factor("gelu");
        real* gx = input_grad(o, 0);
        if (!gx) return;
        const std::vector<real>& xv = o.inputs[0]->values;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const real v = xv[i];
            const real cdf = real(0.5) * (real(1) + std::erf(v * inv_sqrt2));
            const real pdf = inv_sqrt_2pi * std::exp(real(-0.5) * v * v);
            gx[i] += f * o.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t dilation) {
    check_live(x, "causal_dilated_conv1d");
    check_live(kernel, "causal_dilated_conv1d");
    check_live(bias, "causal_dilated_conv1d");
    if (dilation < 1) throw ConfigError("causal_dilated_conv1d: dilation must be >= 1");
    const Shape& ks = kernel.shape();
    if (ks.size() != 3 || ks[2] < 1) throw ConfigError("causal_dilated_conv1d: kernel must be (c_out, c_in, K) with K >= 1");
    const Shape& xs = x.shape();
    if (xs.size() < 2 || xs[xs.size() - 2] != ks[1]) {
        throw DimensionError("causal_dilated_conv1d: input " + shape_str(xs) + " does not match kernel " + shape_str(ks));
    }
    if (bias.numel() != ks[0]) {
        throw DimensionError("causal_dilated_conv1d: bias " + shape_str(bias.shape()) + " does not match kernel " + shape_str(ks));
    }
    const std::size_t c_out = ks[0];
    const std::size_t c_in = ks[1];
    const std::size_t taps = ks[2];
    const std::size_t time = xs.back();
    const std::size_t batch = x.numel() / (c_in * time);
    const std::size_t rows = batch * time;
    const std::size_t width = c_in * taps;

    // im2col: one row per (batch, t), columns (c_in, k).
    std::vector<real> cols(rows * width, real(0));
    auto xv = x.values();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            const real* xrow = xv.data() + (b * c_in + ci) * time;
            for (std::size_t k = 0; k < taps; ++k) {
                const std::size_t shift = dilation * k;
                for (std::size_t t = shift; t < time; ++t) cols[(b * time + t) * width + ci * taps + k] = xrow[t - shift];
            }
        }
    }
    // tmp(rows, c_out) = cols * kernel^T
    std::vector<real> tmp(rows * c_out, real(0));
    gemm_nt(cols.data(), kernel.values().data(), tmp.data(), rows, width, c_out);

    Shape out_shape = xs;
    out_shape[out_shape.size() - 2] = c_out;
    std::vector<real> out(batch * c_out * time);
    auto bv = bias.values();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < c_out; ++c) {
            for (std::size_t t = 0; t < time; ++t) out[(b * c_out + c) * time + t] = tmp[(b * time + t) * c_out + c] + bv[c];
        }
    }
    return make_result(
        "causal_dilated_conv1d", std::move(out_shape), std::move(out), {&x, &kernel, &bias},
        [batch, c_in, c_out, taps, time, dilation, rows, width, cols = std::move(cols)](detail::Node& o) {
            const real f = fault_factor("causal_dilated_conv1d");
            std::vector<real> gtmp(rows * c_out);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < c_out; ++c) {
                    for (std::size_t t = 0; t < time; ++t) gtmp[(b * time + t) * c_out + c] = f * o.grad[(b * c_out + c) * time + t];
                }
            }
            if (real* gb = input_grad(o, 2)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < c_out; ++c) gb[c] += gtmp[r * c_out + c];
                }
            }
            if (real* gk = input_grad(o, 1)) gemm_tn(gtmp.data(), cols.data(), gk, rows, c_out, width);
            if (real* gx = input_grad(o, 0)) {
                std::vector<real> gcols(rows * width, real(0));
                gemm_nn(gtmp.data(), o.inputs[1]->values.data(), gcols.data(), rows, c_out, width);
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t ci = 0; ci < c_in; ++ci) {
                        real* grow = gx + (b * c_in + ci) * time;
                        for (std::size_t k = 0; k < taps; ++k) {
                            const std::size_t shift = dilation * k;
                            for (std::size_t t = shift; t < time; ++t) grow[t - shift] += gcols[(b * time + t) * width + ci * taps + k];
                        }
                    }
                }
            }
        });
}

Tensor mean_abs(const Tensor& a, const Tensor& b) {
    check_live(a, "mean_abs");
    check_live(b, "mean_abs");
    if (a.shape() != b.shape()) {
        throw DimensionError("mean_abs: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
    }
    auto av = a.values();
    auto bv = b.values();
    real total = 0;
    for (std::size_t i = 0; i < av.size(); ++i) total += std::abs(av[i] - bv[i]);
    const real n = static_cast<real>(av.size());
    return make_result("mean_abs", Shape{1}, {total / n}, {&a, &b}, [n](detail::Node& o) {
        const real f = fault_factor("mean_abs");
        const real g = f * o.grad[0] / n;
        const std::vector<real>& av = o.inputs[0]->values;
        const std::vector<real>& bv = o.inputs[1]->values;
        real* ga = input_grad(o, 0);
        real* gb = input_grad(o, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const real d = av[i] - bv[i];
            const real s = d > 0 ? g : (d < 0 ? -g : real(0));
            if (ga) ga[i] += s;
            if (gb) gb[i] -= s;
        }
    });
}

Tensor sum(const Tensor& a) {
    check_live(a, "sum");
    real total = 0;
    for (real v : a.values()) total += v;
    return make_result("sum", Shape{1}, {total}, {&a}, [](detail::Node& o) {
        const real g = fault_factor("sum") * o.grad[0];
        if (real* ga = input_grad(o, 0)) {
            const std::size_t n = o.inputs[0]->values.size();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g;
        }
    });
}

Tensor mean(const Tensor& a) {
    check_live(a, "mean");
    real total = 0;
    for (real v : a.values()) total += v;
    const real n = static_cast<real>(a.numel());
    return make_result("mean", Shape{1}, {total / n}, {&a}, [n](detail::Node& o) {
        const real g = fault_factor("mean") * o.grad[0] / n;
        if (real* ga = input_grad(o, 0)) {
            const std::size_t count = o.inputs[0]->values.size();
            for (std::size_t i = 0; i < count; ++i) ga[i] += g;
        }
    });
}

}  // namespace toivsf
