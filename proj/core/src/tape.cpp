#include "lpad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace lpad::diff {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    require(a.shape == b.shape, std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

void check_bct(const char* op, const Tensor& x) {
    require(x.rank() == 3, std::string(op) + ": expected rank-3 [batch,channels,time] input, got " +
                               shape_str(x.shape));
}

double stable_softplus(double x) {
    // log(1 + e^x) without overflow
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var Tape::make(const char* op, Tensor value, std::vector<Var> parents, BackwardFn fn) {
    if (backward_done_) {
        throw std::logic_error("Tape: cannot extend the graph after backward");
    }
    if (check_finite_ && !value.all_finite()) {
        throw std::runtime_error(std::string("Tape: non-finite value produced by op '") + op + "'");
    }
    Node n;
    n.op = op;
    n.value = std::move(value);
    bool req = false;
    for (Var p : parents) {
        if (nodes_[check(p)].requires_grad) req = true;
    }
    n.requires_grad = req;
    if (req) {
        n.parents = std::move(parents);
        n.backward_fn = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    return make("constant", std::move(value), {}, nullptr);
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(Var v) {
    Node& n = nodes_[check(v)];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::backward(Var root) {
    if (nodes_.empty()) {
        throw std::logic_error("Tape: backward called before any forward computation");
    }
    if (backward_done_) {
        throw std::logic_error("Tape: backward already run on this tape");
    }
    const std::size_t r = check(root);
    if (nodes_[r].value.numel() != 1) {
        throw std::logic_error("Tape: backward root must be scalar, got shape " +
                               shape_str(nodes_[r].value.shape));
    }
    backward_done_ = true;
    if (!nodes_[r].requires_grad) return;  // nothing tracked upstream
    grad_buf(root)[0] = 1.0;
    for (std::size_t i = r + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward_fn) {
            n.backward_fn(*this, static_cast<Var>(i));
        }
    }
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (!backward_done_) {
        throw std::logic_error("Tape: grad requested before backward");
    }
    if (!n.requires_grad) {
        throw std::logic_error("Tape: grad requested for an untracked variable");
    }
    if (!n.has_grad) {
        static const Tensor empty;
        // zero gradient: node did not influence the root
        const_cast<Node&>(n).grad = Tensor(n.value.shape);
        const_cast<Node&>(n).has_grad = true;
    }
    return n.grad;
}

// ---------------------------------------------------------------------------
// elementwise

Var add(Tape& t, Var a, Var b) {
    check_same_shape("add", t.val(a), t.val(b));
    Tensor out = t.val(a);
    const Tensor& vb = t.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return t.make("add", std::move(out), {a, b}, [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        if (tp.tracked(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    });
}

Var sub(Tape& t, Var a, Var b) {
    check_same_shape("sub", t.val(a), t.val(b));
    Tensor out = t.val(a);
    const Tensor& vb = t.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return t.make("sub", std::move(out), {a, b}, [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        if (tp.tracked(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    check_same_shape("mul", t.val(a), t.val(b));
    Tensor out = t.val(a);
    const Tensor& vb = t.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return t.make("mul", std::move(out), {a, b}, [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& va = tp.val(a);
        const Tensor& vb2 = tp.val(b);
        if (tp.tracked(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

Var add_scalar(Tape& t, Var a, double c) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v += c;
    return t.make("add_scalar", std::move(out), {a}, [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
}

Var scale(Tape& t, Var a, double c) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v *= c;
    return t.make("scale", std::move(out), {a}, [a, c](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    });
}

Var log(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v = std::log(v);
    return t.make("log", std::move(out), {a}, [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& va = tp.val(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / va[i];
    });
}

Var exp(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v = std::exp(v);
    return t.make("exp", std::move(out), {a}, [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& y = tp.val(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    });
}

Var sigmoid(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v = stable_sigmoid(v);
    return t.make("sigmoid", std::move(out), {a}, [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& y = tp.val(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var softplus(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v = stable_softplus(v);
    return t.make("softplus", std::move(out), {a}, [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& va = tp.val(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * stable_sigmoid(va[i]);
    });
}

Var relu(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return t.make("relu", std::move(out), {a}, [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& va = tp.val(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (va[i] > 0.0) ga[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(Tape& t, Var a) {
    double acc = 0.0;
    for (double v : t.val(a).data) acc += v;  // sequential canonical order
    return t.make("sum", Tensor::scalar(acc), {a}, [a](Tape& tp, Var self) {
        const double g = tp.grad_buf(self)[0];
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

Var mean(Tape& t, Var a) {
    const std::int64_t n = t.val(a).numel();
    double acc = 0.0;
    for (double v : t.val(a).data) acc += v;
    return t.make("mean", Tensor::scalar(acc / static_cast<double>(n)), {a},
                  [a, n](Tape& tp, Var self) {
                      const double g = tp.grad_buf(self)[0] / static_cast<double>(n);
                      Tensor& ga = tp.grad_buf(a);
                      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
                  });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    require(va.rank() == 2 && vb.rank() == 2 && va.shape[1] == vb.shape[0],
            "matmul: incompatible shapes " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    const std::int64_t m = va.shape[0], k = va.shape[1], n = vb.shape[1];
    Tensor out(Shape{m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = vb.data.data() + p * n;
            double* orow = out.data.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return t.make("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& va2 = tp.val(a);
        const Tensor& vb2 = tp.val(b);
        if (tp.tracked(a)) {  // dA = g * B^T
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g.data.data() + i * n;
                    const double* brow = vb2.data.data() + p * n;
                    for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
        }
        if (tp.tracked(b)) {  // dB = A^T * g
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    const double aip = va2[i * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = g.data.data() + i * n;
                    double* gbrow = gb.data.data() + p * n;
                    for (std::int64_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
        }
    });
}

Var bias_add_row(Tape& t, Var x, Var b) {
    const Tensor& vx = t.val(x);
    const Tensor& vb = t.val(b);
    require(vx.rank() == 2 && vb.rank() == 1 && vx.shape[1] == vb.shape[0],
            "bias_add_row: incompatible shapes " + shape_str(vx.shape) + " + " + shape_str(vb.shape));
    const std::int64_t r = vx.shape[0], c = vx.shape[1];
    Tensor out = vx;
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[i * c + j] += vb[j];
    return t.make("bias_add_row", std::move(out), {x, b}, [x, b, r, c](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        if (tp.tracked(x)) {
            Tensor& gx = tp.grad_buf(x);
            for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
    });
}

// ---------------------------------------------------------------------------
// structure

Var reshape(Tape& t, Var a, Shape shape) {
    const Tensor& va = t.val(a);
    require(shape_numel(shape) == va.numel(), "reshape: cannot view " + shape_str(va.shape) +
                                                  " as " + shape_str(shape));
    Tensor out(shape, va.data);
    return t.make("reshape", std::move(out), {a}, [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
}

Var concat_channels(Tape& t, const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const Tensor& first = t.val(parts[0]);
    check_bct("concat_channels", first);
    const std::int64_t B = first.shape[0], T = first.shape[2];
    std::int64_t ctot = 0;
    for (Var p : parts) {
        const Tensor& v = t.val(p);
        check_bct("concat_channels", v);
        require(v.shape[0] == B && v.shape[2] == T,
                "concat_channels: mismatched batch/time extents " + shape_str(v.shape) + " vs " +
                    shape_str(first.shape));
        ctot += v.shape[1];
    }
    Tensor out(Shape{B, ctot, T});
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (Var p : parts) {
        offsets.push_back(off);
        const Tensor& v = t.val(p);
        const std::int64_t C = v.shape[1];
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t s = 0; s < T; ++s)
                    out[(b * ctot + off + c) * T + s] = v[(b * C + c) * T + s];
        off += C;
    }
    std::vector<Var> parents = parts;
    return t.make("concat_channels", std::move(out), parents,
                  [parts, offsets, B, ctot, T](Tape& tp, Var self) {
                      const Tensor& g = tp.grad_buf(self);
                      for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                          if (!tp.tracked(parts[pi])) continue;
                          Tensor& gp = tp.grad_buf(parts[pi]);
                          const std::int64_t C = gp.shape[1];
                          const std::int64_t off2 = offsets[pi];
                          for (std::int64_t b = 0; b < B; ++b)
                              for (std::int64_t c = 0; c < C; ++c)
                                  for (std::int64_t s = 0; s < T; ++s)
                                      gp[(b * C + c) * T + s] += g[(b * ctot + off2 + c) * T + s];
                      }
                  });
}

Var slice_channels(Tape& t, Var a, std::int64_t c0, std::int64_t c1) {
    const Tensor& va = t.val(a);
    check_bct("slice_channels", va);
    const std::int64_t B = va.shape[0], C = va.shape[1], T = va.shape[2];
    require(0 <= c0 && c0 < c1 && c1 <= C,
            "slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                ") invalid for " + shape_str(va.shape));
    const std::int64_t Cs = c1 - c0;
    Tensor out(Shape{B, Cs, T});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < Cs; ++c)
            for (std::int64_t s = 0; s < T; ++s)
                out[(b * Cs + c) * T + s] = va[(b * C + c0 + c) * T + s];
    return t.make("slice_channels", std::move(out), {a}, [a, c0, B, C, T, Cs](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < Cs; ++c)
                for (std::int64_t s = 0; s < T; ++s)
                    ga[(b * C + c0 + c) * T + s] += g[(b * Cs + c) * T + s];
    });
}

Var pad_right_edge(Tape& t, Var a, std::int64_t n) {
    const Tensor& va = t.val(a);
    check_bct("pad_right_edge", va);
    require(n >= 0, "pad_right_edge: negative pad");
    if (n == 0) return a;
    const std::int64_t B = va.shape[0], C = va.shape[1], T = va.shape[2];
    Tensor out(Shape{B, C, T + n});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            const double* src = va.data.data() + (b * C + c) * T;
            double* dst = out.data.data() + (b * C + c) * (T + n);
            for (std::int64_t s = 0; s < T; ++s) dst[s] = src[s];
            for (std::int64_t s = T; s < T + n; ++s) dst[s] = src[T - 1];
        }
    return t.make("pad_right_edge", std::move(out), {a}, [a, n, B, C, T](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c) {
                const double* gsrc = g.data.data() + (b * C + c) * (T + n);
                double* gdst = ga.data.data() + (b * C + c) * T;
                for (std::int64_t s = 0; s < T; ++s) gdst[s] += gsrc[s];
                for (std::int64_t s = T; s < T + n; ++s) gdst[T - 1] += gsrc[s];
            }
    });
}

Var crop_right(Tape& t, Var a, std::int64_t n) {
    const Tensor& va = t.val(a);
    check_bct("crop_right", va);
    require(n >= 0 && n < va.shape[2], "crop_right: crop " + std::to_string(n) +
                                           " invalid for " + shape_str(va.shape));
    if (n == 0) return a;
    const std::int64_t B = va.shape[0], C = va.shape[1], T = va.shape[2], To = T - n;
    Tensor out(Shape{B, C, To});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t s = 0; s < To; ++s)
                out[(b * C + c) * To + s] = va[(b * C + c) * T + s];
    return t.make("crop_right", std::move(out), {a}, [a, B, C, T, To](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t s = 0; s < To; ++s)
                    ga[(b * C + c) * T + s] += g[(b * C + c) * To + s];
    });
}

// ---------------------------------------------------------------------------
// network primitives

Var conv1d(Tape& t, Var x, Var w, Var b) {
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(w);
    const Tensor& vb = t.val(b);
    check_bct("conv1d", vx);
    require(vw.rank() == 3, "conv1d: weight must be [filters,channels,kernel], got " +
                                shape_str(vw.shape));
    const std::int64_t B = vx.shape[0], C = vx.shape[1], T = vx.shape[2];
    const std::int64_t F = vw.shape[0], K = vw.shape[2];
    require(vw.shape[1] == C, "conv1d: input channels " + std::to_string(C) +
                                  " != weight channels " + std::to_string(vw.shape[1]));
    require(K % 2 == 1, "conv1d: kernel size must be odd for same padding, got " + std::to_string(K));
    require(vb.rank() == 1 && vb.shape[0] == F,
            "conv1d: bias shape " + shape_str(vb.shape) + " != filters " + std::to_string(F));
    const std::int64_t P = (K - 1) / 2;
    Tensor out(Shape{B, F, T});
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t f = 0; f < F; ++f) {
            double* orow = out.data.data() + (bb * F + f) * T;
            for (std::int64_t s = 0; s < T; ++s) orow[s] = vb[f];
            for (std::int64_t c = 0; c < C; ++c) {
                const double* xrow = vx.data.data() + (bb * C + c) * T;
                const double* wrow = vw.data.data() + (f * C + c) * K;
                for (std::int64_t k = 0; k < K; ++k) {
                    const double wk = wrow[k];
                    const std::int64_t lo = std::max<std::int64_t>(0, P - k);
                    const std::int64_t hi = std::min<std::int64_t>(T, T + P - k);
                    for (std::int64_t s = lo; s < hi; ++s) orow[s] += wk * xrow[s + k - P];
                }
            }
        }
    return t.make("conv1d", std::move(out), {x, w, b}, [x, w, b, B, C, T, F, K, P](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& vx2 = tp.val(x);
        const Tensor& vw2 = tp.val(w);
        if (tp.tracked(x)) {
            Tensor& gx = tp.grad_buf(x);
            for (std::int64_t bb = 0; bb < B; ++bb)
                for (std::int64_t f = 0; f < F; ++f) {
                    const double* grow = g.data.data() + (bb * F + f) * T;
                    for (std::int64_t c = 0; c < C; ++c) {
                        double* gxrow = gx.data.data() + (bb * C + c) * T;
                        const double* wrow = vw2.data.data() + (f * C + c) * K;
                        for (std::int64_t k = 0; k < K; ++k) {
                            const double wk = wrow[k];
                            const std::int64_t lo = std::max<std::int64_t>(0, P - k);
                            const std::int64_t hi = std::min<std::int64_t>(T, T + P - k);
                            for (std::int64_t s = lo; s < hi; ++s) gxrow[s + k - P] += wk * grow[s];
                        }
                    }
                }
        }
        if (tp.tracked(w)) {
            Tensor& gw = tp.grad_buf(w);
            for (std::int64_t bb = 0; bb < B; ++bb)
                for (std::int64_t f = 0; f < F; ++f) {
                    const double* grow = g.data.data() + (bb * F + f) * T;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double* xrow = vx2.data.data() + (bb * C + c) * T;
                        double* gwrow = gw.data.data() + (f * C + c) * K;
                        for (std::int64_t k = 0; k < K; ++k) {
                            double acc = 0.0;
                            const std::int64_t lo = std::max<std::int64_t>(0, P - k);
                            const std::int64_t hi = std::min<std::int64_t>(T, T + P - k);
                            for (std::int64_t s = lo; s < hi; ++s) acc += grow[s] * xrow[s + k - P];
                            gwrow[k] += acc;
                        }
                    }
                }
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t bb = 0; bb < B; ++bb)
                for (std::int64_t f = 0; f < F; ++f) {
                    const double* grow = g.data.data() + (bb * F + f) * T;
                    double acc = 0.0;
                    for (std::int64_t s = 0; s < T; ++s) acc += grow[s];
                    gb[f] += acc;
                }
        }
    });
}

Var tconv1d(Tape& t, Var x, Var w, Var b) {
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(w);
    const Tensor& vb = t.val(b);
    check_bct("tconv1d", vx);
    require(vw.rank() == 3, "tconv1d: weight must be [in_channels,out_channels,kernel], got " +
                                shape_str(vw.shape));
    const std::int64_t B = vx.shape[0], C = vx.shape[1], T = vx.shape[2];
    const std::int64_t F = vw.shape[1], K = vw.shape[2];
    require(vw.shape[0] == C, "tconv1d: input channels " + std::to_string(C) +
                                  " != weight channels " + std::to_string(vw.shape[0]));
    require(K % 2 == 1, "tconv1d: kernel size must be odd for same padding, got " + std::to_string(K));
    require(vb.rank() == 1 && vb.shape[0] == F,
            "tconv1d: bias shape " + shape_str(vb.shape) + " != out channels " + std::to_string(F));
    const std::int64_t P = (K - 1) / 2;
    // out[b,f,s] = bias[f] + sum_{c,k, 0<=s+P-k<T} x[b,c,s+P-k] * w[c,f,k]
    Tensor out(Shape{B, F, T});
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t f = 0; f < F; ++f) {
            double* orow = out.data.data() + (bb * F + f) * T;
            for (std::int64_t s = 0; s < T; ++s) orow[s] = vb[f];
            for (std::int64_t c = 0; c < C; ++c) {
                const double* xrow = vx.data.data() + (bb * C + c) * T;
                const double* wrow = vw.data.data() + (c * F + f) * K;
                for (std::int64_t k = 0; k < K; ++k) {
                    const double wk = wrow[k];
                    const std::int64_t lo = std::max<std::int64_t>(0, k - P);
                    const std::int64_t hi = std::min<std::int64_t>(T, T + k - P);
                    for (std::int64_t s = lo; s < hi; ++s) orow[s] += wk * xrow[s + P - k];
                }
            }
        }
    return t.make("tconv1d", std::move(out), {x, w, b}, [x, w, b, B, C, T, F, K, P](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& vx2 = tp.val(x);
        const Tensor& vw2 = tp.val(w);
        if (tp.tracked(x)) {
            Tensor& gx = tp.grad_buf(x);
            for (std::int64_t bb = 0; bb < B; ++bb)
                for (std::int64_t f = 0; f < F; ++f) {
                    const double* grow = g.data.data() + (bb * F + f) * T;
                    for (std::int64_t c = 0; c < C; ++c) {
                        double* gxrow = gx.data.data() + (bb * C + c) * T;
                        const double* wrow = vw2.data.data() + (c * F + f) * K;
                        for (std::int64_t k = 0; k < K; ++k) {
                            const double wk = wrow[k];
                            const std::int64_t lo = std::max<std::int64_t>(0, k - P);
                            const std::int64_t hi = std::min<std::int64_t>(T, T + k - P);
                            for (std::int64_t s = lo; s < hi; ++s) gxrow[s + P - k] += wk * grow[s];
                        }
                    }
                }
        }
        if (tp.tracked(w)) {
            Tensor& gw = tp.grad_buf(w);
            for (std::int64_t bb = 0; bb < B; ++bb)
                for (std::int64_t f = 0; f < F; ++f) {
                    const double* grow = g.data.data() + (bb * F + f) * T;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double* xrow = vx2.data.data() + (bb * C + c) * T;
                        double* gwrow = gw.data.data() + (c * F + f) * K;
                        for (std::int64_t k = 0; k < K; ++k) {
                            double acc = 0.0;
                            const std::int64_t lo = std::max<std::int64_t>(0, k - P);
                            const std::int64_t hi = std::min<std::int64_t>(T, T + k - P);
                            for (std::int64_t s = lo; s < hi; ++s) acc += grow[s] * xrow[s + P - k];
                            gwrow[k] += acc;
                        }
                    }
                }
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t bb = 0; bb < B; ++bb)
                for (std::int64_t f = 0; f < F; ++f) {
                    const double* grow = g.data.data() + (bb * F + f) * T;
                    double acc = 0.0;
                    for (std::int64_t s = 0; s < T; ++s) acc += grow[s];
                    gb[f] += acc;
                }
        }
    });
}

Var maxpool2(Tape& t, Var x) {
    const Tensor& vx = t.val(x);
    check_bct("maxpool2", vx);
    const std::int64_t B = vx.shape[0], C = vx.shape[1], T = vx.shape[2];
    require(T % 2 == 0, "maxpool2: time extent must be even, got " + std::to_string(T));
    const std::int64_t To = T / 2;
    Tensor out(Shape{B, C, To});
    std::vector<std::uint8_t> arg(static_cast<std::size_t>(B * C * To));
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const double* xrow = vx.data.data() + bc * T;
        double* orow = out.data.data() + bc * To;
        std::uint8_t* arow = arg.data() + bc * To;
        for (std::int64_t s = 0; s < To; ++s) {
            const double l = xrow[2 * s], r = xrow[2 * s + 1];
            if (l >= r) {  // first-wins tie
                orow[s] = l;
                arow[s] = 0;
            } else {
                orow[s] = r;
                arow[s] = 1;
            }
        }
    }
    return t.make("maxpool2", std::move(out), {x},
                  [x, arg = std::move(arg), B, C, T, To](Tape& tp, Var self) {
                      const Tensor& g = tp.grad_buf(self);
                      Tensor& gx = tp.grad_buf(x);
                      for (std::int64_t bc = 0; bc < B * C; ++bc) {
                          const double* grow = g.data.data() + bc * To;
                          double* gxrow = gx.data.data() + bc * T;
                          const std::uint8_t* arow = arg.data() + bc * To;
                          for (std::int64_t s = 0; s < To; ++s) gxrow[2 * s + arow[s]] += grow[s];
                      }
                  });
}

Var upsample2(Tape& t, Var x, Upsample kind) {
    const Tensor& vx = t.val(x);
    check_bct("upsample2", vx);
    const std::int64_t B = vx.shape[0], C = vx.shape[1], T = vx.shape[2];
    const std::int64_t To = 2 * T;
    Tensor out(Shape{B, C, To});
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const double* xrow = vx.data.data() + bc * T;
        double* orow = out.data.data() + bc * To;
        if (kind == Upsample::nearest) {
            for (std::int64_t s = 0; s < T; ++s) {
                orow[2 * s] = xrow[s];
                orow[2 * s + 1] = xrow[s];
            }
        } else {
            // out[2s] = x[s]; out[2s+1] = (x[s] + x[s+1]) / 2, right edge replicated
            for (std::int64_t s = 0; s < T; ++s) {
                const std::int64_t nxt = std::min(s + 1, T - 1);
                orow[2 * s] = xrow[s];
                orow[2 * s + 1] = 0.5 * (xrow[s] + xrow[nxt]);
            }
        }
    }
    return t.make("upsample2", std::move(out), {x}, [x, kind, B, C, T, To](Tape& tp, Var self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& gx = tp.grad_buf(x);
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
            const double* grow = g.data.data() + bc * To;
            double* gxrow = gx.data.data() + bc * T;
            if (kind == Upsample::nearest) {
                for (std::int64_t s = 0; s < T; ++s) gxrow[s] += grow[2 * s] + grow[2 * s + 1];
            } else {
                for (std::int64_t s = 0; s < T; ++s) {
                    const std::int64_t nxt = std::min(s + 1, T - 1);
                    gxrow[s] += grow[2 * s] + 0.5 * grow[2 * s + 1];
                    gxrow[nxt] += 0.5 * grow[2 * s + 1];
                }
            }
        }
    });
}

Var batchnorm1d(Tape& t, Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                double momentum, bool update_running) {
    const Tensor& vx = t.val(x);
    const Tensor& vg = t.val(gamma);
    const Tensor& vbeta = t.val(beta);
    check_bct("batchnorm1d", vx);
    const std::int64_t B = vx.shape[0], C = vx.shape[1], T = vx.shape[2];
    require(vg.rank() == 1 && vg.shape[0] == C && vbeta.shape == vg.shape,
            "batchnorm1d: gamma/beta shape mismatch with " + std::to_string(C) + " channels");
    require(running_mean.shape == Shape{C} && running_var.shape == Shape{C},
            "batchnorm1d: running stats shape mismatch");
    const double eps = 1e-5;
    const bool batch_stats = t.mode() == Mode::train;

    Tensor mean_c(Shape{C}), var_c(Shape{C});
    if (batch_stats) {
        const double n = static_cast<double>(B * T);
        for (std::int64_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::int64_t bb = 0; bb < B; ++bb) {
                const double* xrow = vx.data.data() + (bb * C + c) * T;
                for (std::int64_t s = 0; s < T; ++s) m += xrow[s];
            }
            m /= n;
            double v = 0.0;
            for (std::int64_t bb = 0; bb < B; ++bb) {
                const double* xrow = vx.data.data() + (bb * C + c) * T;
                for (std::int64_t s = 0; s < T; ++s) {
                    const double d = xrow[s] - m;
                    v += d * d;
                }
            }
            v /= n;  // population variance
            mean_c[c] = m;
            var_c[c] = v;
        }
        if (update_running) {
            for (std::int64_t c = 0; c < C; ++c) {
                running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean_c[c];
                running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var_c[c];
            }
        }
    } else {
        mean_c = running_mean;
        var_c = running_var;
    }

    Tensor out(Shape{B, C, T});
    Tensor xhat(Shape{B, C, T});
    std::vector<double> inv_sd(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) inv_sd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var_c[c] + eps);
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t c = 0; c < C; ++c) {
            const double* xrow = vx.data.data() + (bb * C + c) * T;
            double* hrow = xhat.data.data() + (bb * C + c) * T;
            double* orow = out.data.data() + (bb * C + c) * T;
            const double m = mean_c[c], is = inv_sd[static_cast<std::size_t>(c)];
            const double gc = vg[c], bc2 = vbeta[c];
            for (std::int64_t s = 0; s < T; ++s) {
                const double h = (xrow[s] - m) * is;
                hrow[s] = h;
                orow[s] = gc * h + bc2;
            }
        }

    return t.make("batchnorm1d", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_sd = std::move(inv_sd), batch_stats, B,
                   C, T](Tape& tp, Var self) {
                      const Tensor& g = tp.grad_buf(self);
                      const Tensor& vg2 = tp.val(gamma);
                      const double n = static_cast<double>(B * T);
                      if (tp.tracked(gamma)) {
                          Tensor& gg = tp.grad_buf(gamma);
                          for (std::int64_t c = 0; c < C; ++c) {
                              double acc = 0.0;
                              for (std::int64_t bb = 0; bb < B; ++bb) {
                                  const double* grow = g.data.data() + (bb * C + c) * T;
                                  const double* hrow = xhat.data.data() + (bb * C + c) * T;
                                  for (std::int64_t s = 0; s < T; ++s) acc += grow[s] * hrow[s];
                              }
                              gg[c] += acc;
                          }
                      }
                      if (tp.tracked(beta)) {
                          Tensor& gb = tp.grad_buf(beta);
                          for (std::int64_t c = 0; c < C; ++c) {
                              double acc = 0.0;
                              for (std::int64_t bb = 0; bb < B; ++bb) {
                                  const double* grow = g.data.data() + (bb * C + c) * T;
                                  for (std::int64_t s = 0; s < T; ++s) acc += grow[s];
                              }
                              gb[c] += acc;
                          }
                      }
                      if (tp.tracked(x)) {
                          Tensor& gx = tp.grad_buf(x);
                          for (std::int64_t c = 0; c < C; ++c) {
                              const double is = inv_sd[static_cast<std::size_t>(c)];
                              const double gc = vg2[c];
                              if (batch_stats) {
                                  double sum_g = 0.0, sum_gh = 0.0;
                                  for (std::int64_t bb = 0; bb < B; ++bb) {
                                      const double* grow = g.data.data() + (bb * C + c) * T;
                                      const double* hrow = xhat.data.data() + (bb * C + c) * T;
                                      for (std::int64_t s = 0; s < T; ++s) {
                                          sum_g += grow[s];
                                          sum_gh += grow[s] * hrow[s];
                                      }
                                  }
                                  const double mg = sum_g / n, mgh = sum_gh / n;
                                  for (std::int64_t bb = 0; bb < B; ++bb) {
                                      const double* grow = g.data.data() + (bb * C + c) * T;
                                      const double* hrow = xhat.data.data() + (bb * C + c) * T;
                                      double* gxrow = gx.data.data() + (bb * C + c) * T;
                                      for (std::int64_t s = 0; s < T; ++s)
                                          gxrow[s] += gc * is * (grow[s] - mg - hrow[s] * mgh);
                                  }
                              } else {
                                  for (std::int64_t bb = 0; bb < B; ++bb) {
                                      const double* grow = g.data.data() + (bb * C + c) * T;
                                      double* gxrow = gx.data.data() + (bb * C + c) * T;
                                      for (std::int64_t s = 0; s < T; ++s) gxrow[s] += gc * is * grow[s];
                                  }
                              }
                          }
                      }
                  });
}

}  // namespace lpad::diff
