#include "dhue/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <unordered_set>

#include "dhue/error.hpp"

namespace dhue::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

void require_same(const Var& a, const Var& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, a.shape().str(), b.shape().str()));
    }
}

// Applies `f(i, g)` for each element where `g` is the upstream gradient.
template <class F>
void for_each_grad(const Node& self, F&& f) {
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) f(i, g[i]);
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

void Var::backward() const {
    if (node_->value.size() != 1) throw ShapeError("backward: root must be a scalar");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward || n->grad.empty()) continue;
        for (auto& p : n->parents) {
            if (p->requires_grad) p->grad_buffer();
        }
        n->backward(*n);
    }
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad;
            for_each_grad(self, [&](std::size_t i, double gi) { g[i] += gi; });
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) for_each_grad(self, [&](std::size_t i, double g) { pa->grad[i] += g; });
        if (pb->requires_grad) for_each_grad(self, [&](std::size_t i, double g) { pb->grad[i] -= g; });
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) for_each_grad(self, [&](std::size_t i, double g) { pa->grad[i] += g * pb->value[i]; });
        if (pb->requires_grad) for_each_grad(self, [&](std::size_t i, double g) { pb->grad[i] += g * pa->value[i]; });
    });
}

Var scale(const Var& a, double k) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v *= k;
    return make_op(std::move(out), {a}, [k](Node& self) {
        auto& pa = self.parents[0];
        for_each_grad(self, [&](std::size_t i, double g) { pa->grad[i] += g * k; });
    });
}

Var add_scalar(const Var& a, double k) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v += k;
    return make_op(std::move(out), {a}, [](Node& self) {
        auto& pa = self.parents[0];
        for_each_grad(self, [&](std::size_t i, double g) { pa->grad[i] += g; });
    });
}

Var exp(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::exp(v);
    return make_op(std::move(out), {a}, [](Node& self) {
        auto& pa = self.parents[0];
        for_each_grad(self, [&](std::size_t i, double g) { pa->grad[i] += g * self.value[i]; });
    });
}

Var tanh(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::tanh(v);
    return make_op(std::move(out), {a}, [](Node& self) {
        auto& pa = self.parents[0];
        for_each_grad(self, [&](std::size_t i, double g) {
            const double t = self.value[i];
            pa->grad[i] += g * (1.0 - t * t);
        });
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = v > 0.0 ? v : slope * v;
    return make_op(std::move(out), {a}, [slope](Node& self) {
        auto& pa = self.parents[0];
        for_each_grad(self, [&](std::size_t i, double g) { pa->grad[i] += pa->value[i] > 0.0 ? g : slope * g; });
    });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var max_floor(const Var& a, double floor) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::max(v, floor);
    return make_op(std::move(out), {a}, [floor](Node& self) {
        auto& pa = self.parents[0];
        for_each_grad(self, [&](std::size_t i, double g) {
            if (pa->value[i] > floor) pa->grad[i] += g;
        });
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    Shape s = parts[0].shape();
    int total_c = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w) throw ShapeError("concat_channels: shape mismatch");
        total_c += ps.c;
    }
    Shape os{s.n, total_c, s.h, s.w};
    Tensor out(os);
    const std::size_t plane = s.plane();
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const Shape& ps = p.shape();
        for (int n = 0; n < s.n; ++n) {
            const double* src = p.value().data() + static_cast<std::size_t>(n) * ps.c * plane;
            double* dst = out.data() + (static_cast<std::size_t>(n) * total_c + off) * plane;
            std::copy_n(src, ps.c * plane, dst);
        }
        off += ps.c;
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_op(std::move(out), std::move(parents), [offsets, plane, total_c](Node& self) {
        const int batch = self.value.shape().n;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k];
            if (!p->requires_grad) continue;
            const int pc = p->value.shape().c;
            for (int n = 0; n < batch; ++n) {
                const double* src = self.grad.data() + (static_cast<std::size_t>(n) * total_c + offsets[k]) * plane;
                double* dst = p->grad.data() + static_cast<std::size_t>(n) * pc * plane;
                for (std::size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

Var slice_channels(const Var& a, int begin, int count) {
    const Shape s = a.shape();
    if (begin < 0 || count <= 0 || begin + count > s.c) throw ShapeError("slice_channels: range out of bounds");
    Tensor out(Shape{s.n, count, s.h, s.w});
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        std::copy_n(a.value().data() + (static_cast<std::size_t>(n) * s.c + begin) * plane, count * plane,
                    out.data() + static_cast<std::size_t>(n) * count * plane);
    }
    return make_op(std::move(out), {a}, [begin, count, plane](Node& self) {
        auto& p = self.parents[0];
        const int pc = p->value.shape().c;
        for (int n = 0; n < self.value.shape().n; ++n) {
            const double* src = self.grad.data() + static_cast<std::size_t>(n) * count * plane;
            double* dst = p->grad.data() + (static_cast<std::size_t>(n) * pc + begin) * plane;
            for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
        }
    });
}

namespace {

// cols is (in*k*k) x (n*h*w), column-major; zero padding.
void im2col(const Tensor& x, int k, ColMat& cols) {
    const Shape s = x.shape();
    const int pad = k / 2;
    const int hw = s.h * s.w;
    cols.resize(static_cast<Eigen::Index>(s.c) * k * k, static_cast<Eigen::Index>(s.n) * hw);
    double* out = cols.data();
    const Eigen::Index rows = cols.rows();
    for (int n = 0; n < s.n; ++n) {
        for (int y = 0; y < s.h; ++y) {
            for (int xx = 0; xx < s.w; ++xx) {
                double* col = out + (static_cast<Eigen::Index>(n) * hw + y * s.w + xx) * rows;
                Eigen::Index r = 0;
                for (int c = 0; c < s.c; ++c) {
                    const double* plane = x.data() + (static_cast<std::size_t>(n) * s.c + c) * hw;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y + ky - pad;
                        for (int kx = 0; kx < k; ++kx, ++r) {
                            const int ix = xx + kx - pad;
                            col[r] = (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) ? plane[iy * s.w + ix] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const ColMat& cols, int k, Tensor& dx) {
    const Shape s = dx.shape();
    const int pad = k / 2;
    const int hw = s.h * s.w;
    const Eigen::Index rows = cols.rows();
    for (int n = 0; n < s.n; ++n) {
        for (int y = 0; y < s.h; ++y) {
            for (int xx = 0; xx < s.w; ++xx) {
                const double* col = cols.data() + (static_cast<Eigen::Index>(n) * hw + y * s.w + xx) * rows;
                Eigen::Index r = 0;
                for (int c = 0; c < s.c; ++c) {
                    double* plane = dx.data() + (static_cast<std::size_t>(n) * s.c + c) * hw;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y + ky - pad;
                        for (int kx = 0; kx < k; ++kx, ++r) {
                            const int ix = xx + kx - pad;
                            if (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) plane[iy * s.w + ix] += col[r];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    if (ws.c != xs.c || ws.h != ws.w || ws.h % 2 == 0) {
        throw ShapeError(fmt::format("conv2d: weight {} incompatible with input {}", ws.str(), xs.str()));
    }
    if (b.shape().size() != static_cast<std::size_t>(ws.n)) throw ShapeError("conv2d: bias size mismatch");
    const int k = ws.h;
    const int out_c = ws.n;
    const int hw = xs.h * xs.w;
    const Eigen::Index cols_n = static_cast<Eigen::Index>(xs.n) * hw;

    auto cols = std::make_shared<ColMat>();
    im2col(x.value(), k, *cols);
    Eigen::Map<const RowMat> wm(w.value().data(), out_c, cols->rows());
    RowMat y = wm * (*cols);  // out_c x (n*hw)

    Tensor out(Shape{xs.n, out_c, xs.h, xs.w});
    for (int n = 0; n < xs.n; ++n) {
        for (int co = 0; co < out_c; ++co) {
            const double bias = b.value()[co];
            const double* src = y.data() + static_cast<Eigen::Index>(co) * cols_n + static_cast<Eigen::Index>(n) * hw;
            double* dst = out.data() + (static_cast<std::size_t>(n) * out_c + co) * hw;
            for (int i = 0; i < hw; ++i) dst[i] = src[i] + bias;
        }
    }

    return make_op(std::move(out), {x, w, b}, [cols, k, out_c, hw, cols_n](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        const int batch = self.value.shape().n;
        RowMat gy(out_c, cols_n);
        for (int n = 0; n < batch; ++n) {
            for (int co = 0; co < out_c; ++co) {
                const double* src = self.grad.data() + (static_cast<std::size_t>(n) * out_c + co) * hw;
                std::copy_n(src, hw, gy.data() + static_cast<Eigen::Index>(co) * cols_n + static_cast<Eigen::Index>(n) * hw);
            }
        }
        if (pw->requires_grad) {
            Eigen::Map<RowMat> gw(pw->grad.data(), out_c, cols->rows());
            gw.noalias() += gy * cols->transpose();
        }
        if (pb->requires_grad) {
            for (int co = 0; co < out_c; ++co) pb->grad[co] += gy.row(co).sum();
        }
        if (px->requires_grad) {
            Eigen::Map<const RowMat> wm(pw->value.data(), out_c, cols->rows());
            ColMat gcols = wm.transpose() * gy;
            col2im_add(gcols, k, px->grad);
        }
    });
}

Var avg_pool2(const Var& x) {
    const Shape s = x.shape();
    if (s.h % 2 || s.w % 2) throw ShapeError("avg_pool2: odd spatial size " + s.str());
    Shape os{s.n, s.c, s.h / 2, s.w / 2};
    Tensor out(os);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < os.h; ++y)
                for (int xx = 0; xx < os.w; ++xx) {
                    const auto& v = x.value();
                    out.at(n, c, y, xx) = 0.25 * (v.at(n, c, 2 * y, 2 * xx) + v.at(n, c, 2 * y, 2 * xx + 1) +
                                                  v.at(n, c, 2 * y + 1, 2 * xx) + v.at(n, c, 2 * y + 1, 2 * xx + 1));
                }
    return make_op(std::move(out), {x}, [](Node& self) {
        auto& p = self.parents[0];
        const Shape os = self.value.shape();
        for (int n = 0; n < os.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int y = 0; y < os.h; ++y)
                    for (int xx = 0; xx < os.w; ++xx) {
                        const double g = 0.25 * self.grad.at(n, c, y, xx);
                        p->grad.at(n, c, 2 * y, 2 * xx) += g;
                        p->grad.at(n, c, 2 * y, 2 * xx + 1) += g;
                        p->grad.at(n, c, 2 * y + 1, 2 * xx) += g;
                        p->grad.at(n, c, 2 * y + 1, 2 * xx + 1) += g;
                    }
    });
}

Var global_avg_pool(const Var& x) {
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    Tensor out(Shape{s.n, s.c, 1, 1});
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += x.value()[i * plane + j];
        out[i] = acc / static_cast<double>(plane);
    }
    return make_op(std::move(out), {x}, [plane](Node& self) {
        auto& p = self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double g = self.grad[i] / static_cast<double>(plane);
            for (std::size_t j = 0; j < plane; ++j) p->grad[i * plane + j] += g;
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Shape xs = x.shape();
    const int d = static_cast<int>(xs.sample_size());
    const Shape ws = w.shape();
    if (static_cast<int>(ws.sample_size()) != d) throw ShapeError("linear: weight/input dimension mismatch");
    if (b.shape().size() != static_cast<std::size_t>(ws.n)) throw ShapeError("linear: bias size mismatch");
    const int out_d = ws.n;
    Eigen::Map<const RowMat> xm(x.value().data(), xs.n, d);
    Eigen::Map<const RowMat> wm(w.value().data(), out_d, d);
    Tensor out(Shape{xs.n, out_d, 1, 1});
    Eigen::Map<RowMat> ym(out.data(), xs.n, out_d);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < out_d; ++o) ym(n, o) += b.value()[o];
    return make_op(std::move(out), {x, w, b}, [d, out_d](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        const int batch = self.value.shape().n;
        Eigen::Map<const RowMat> gy(self.grad.data(), batch, out_d);
        if (px->requires_grad) {
            Eigen::Map<const RowMat> wm(pw->value.data(), out_d, d);
            Eigen::Map<RowMat> gx(px->grad.data(), batch, d);
            gx.noalias() += gy * wm;
        }
        if (pw->requires_grad) {
            Eigen::Map<const RowMat> xm(px->value.data(), batch, d);
            Eigen::Map<RowMat> gw(pw->grad.data(), out_d, d);
            gw.noalias() += gy.transpose() * xm;
        }
        if (pb->requires_grad) {
            for (int o = 0; o < out_d; ++o) pb->grad[o] += gy.col(o).sum();
        }
    });
}

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().vec()) acc += v;
    return make_op(Tensor::scalar(acc), {a}, [](Node& self) {
        auto& p = self.parents[0];
        const double g = self.grad[0];
        for (auto& v : p->grad.vec()) v += g;
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sample_mse(const Var& a, const Var& b) {
    require_same(a, b, "sample_mse");
    const Shape s = a.shape();
    const std::size_t len = s.sample_size();
    Tensor out(Shape{s.n, 1, 1, 1});
    for (int n = 0; n < s.n; ++n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double d = a.value()[n * len + i] - b.value()[n * len + i];
            acc += d * d;
        }
        out[n] = acc / static_cast<double>(len);
    }
    return make_op(std::move(out), {a, b}, [len](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (int n = 0; n < self.value.shape().n; ++n) {
            const double g = 2.0 * self.grad[n] / static_cast<double>(len);
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t j = n * len + i;
                const double d = g * (pa->value[j] - pb->value[j]);
                if (pa->requires_grad) pa->grad[j] += d;
                if (pb->requires_grad) pb->grad[j] -= d;
            }
        }
    });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
    const Shape s = logits.shape();
    const int k = static_cast<int>(s.sample_size());
    if (static_cast<int>(labels.size()) != s.n) throw ShapeError("cross_entropy: label count mismatch");
    auto probs = std::make_shared<std::vector<double>>(logits.value().size());
    std::vector<int> lab(labels.begin(), labels.end());
    double loss = 0.0;
    for (int n = 0; n < s.n; ++n) {
        if (lab[n] < 0 || lab[n] >= k) throw ShapeError("cross_entropy: label out of range");
        const double* z = logits.value().data() + static_cast<std::size_t>(n) * k;
        const double zmax = *std::max_element(z, z + k);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
        for (int j = 0; j < k; ++j) (*probs)[n * k + j] = std::exp(z[j] - zmax) / denom;
        loss += std::log(denom) + zmax - z[lab[n]];
    }
    loss /= s.n;
    return make_op(Tensor::scalar(loss), {logits}, [probs, lab, k](Node& self) {
        auto& p = self.parents[0];
        const int batch = static_cast<int>(lab.size());
        const double g = self.grad[0] / batch;
        for (int n = 0; n < batch; ++n)
            for (int j = 0; j < k; ++j) {
                const double target = (j == lab[n]) ? 1.0 : 0.0;
                p->grad[n * k + j] += g * ((*probs)[n * k + j] - target);
            }
    });
}

}  // namespace dhue::ad
