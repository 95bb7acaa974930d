#include "jscc/autograd.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace jscc::ag {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using RowVec = Eigen::Matrix<float, 1, Eigen::Dynamic>;

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_node(Shape shape, std::vector<float> value) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    return node;
}

bool should_record(std::initializer_list<const Var*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Var* v : inputs) {
        if (v && *v && v->requires_grad()) return true;
    }
    return false;
}

void attach(const std::shared_ptr<Node>& node, std::initializer_list<const Var*> inputs,
            std::function<void(Node&)> fn) {
    if (!should_record(inputs)) return;
    node->requires_grad = true;
    for (const Var* v : inputs) {
        node->parents.push_back(v && *v ? v->shared() : nullptr);
    }
    node->backward = std::move(fn);
}

bool wants(const std::shared_ptr<Node>& p) { return p && p->requires_grad; }

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

std::span<float> Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
    return grad;
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Var constant(Shape shape, std::vector<float> values) {
    require(numel(shape) == values.size(), "constant: shape " + to_string(shape) + " does not match value count");
    return Var(make_node(std::move(shape), std::move(values)));
}

Var zeros(Shape shape) {
    std::vector<float> v(numel(shape), 0.0f);
    return Var(make_node(std::move(shape), std::move(v)));
}

Var parameter(Shape shape, std::vector<float> values) {
    require(numel(shape) == values.size(), "parameter: shape " + to_string(shape) + " does not match value count");
    auto node = make_node(std::move(shape), std::move(values));
    node->requires_grad = true;
    return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

// Row-by-row accumulation. Eigen's vectorized column reduction peels
// elements according to the heap address, which makes the float sum vary
// between otherwise identical runs.
void add_column_sums(const float* g, int rows, int cols, float* dst) {
    for (int r = 0; r < rows; ++r) {
        const float* row = g + static_cast<std::size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) dst[j] += row[j];
    }
}

}  // namespace

void backward(const Var& loss) {
    require(static_cast<bool>(loss) && loss.size() == 1, "backward: loss must be a scalar");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

// ---------------------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require(weight.shape().size() == 2, "linear: weight must be 2-D");
    const int in = weight.shape()[0];
    const int out = weight.shape()[1];
    require(x.cols() == in, "linear: input width " + std::to_string(x.cols()) + " != weight rows " +
                                std::to_string(in));
    if (bias) require(static_cast<int>(bias.size()) == out, "linear: bias size mismatch");
    const int rows = x.rows();

    Shape shape = x.shape();
    shape.back() = out;
    std::vector<float> y(static_cast<std::size_t>(rows) * out);
    MatMap Y(y.data(), rows, out);
    Y.noalias() = ConstMatMap(x.value().data(), rows, in) * ConstMatMap(weight.value().data(), in, out);
    if (bias) Y.rowwise() += Eigen::Map<const RowVec>(bias.value().data(), out);

    auto node = make_node(std::move(shape), std::move(y));
    attach(node, {&x, &weight, &bias}, [rows, in, out](Node& self) {
        const auto& px = self.parents[0];
        const auto& pw = self.parents[1];
        const auto& pb = self.parents[2];
        ConstMatMap G(self.grad.data(), rows, out);
        if (wants(px)) {
            MatMap(px->grad_buffer().data(), rows, in).noalias() +=
                G * ConstMatMap(pw->value.data(), in, out).transpose();
        }
        if (wants(pw)) {
            MatMap(pw->grad_buffer().data(), in, out).noalias() +=
                ConstMatMap(px->value.data(), rows, in).transpose() * G;
        }
        if (wants(pb)) {
            add_column_sums(self.grad.data(), rows, out, pb->grad_buffer().data());
        }
    });
    return Var(std::move(node));
}

Var add(const Var& a, const Var& b) {
    require(a.size() == b.size(), "add: size mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    std::vector<float> y(a.size());
    const auto av = a.value();
    const auto bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    auto node = make_node(a.shape(), std::move(y));
    attach(node, {&a, &b}, [](Node& self) {
        for (const auto& p : self.parents) {
            if (!wants(p)) continue;
            auto g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
    return Var(std::move(node));
}

Var scale(const Var& x, float factor) {
    std::vector<float> y(x.value().begin(), x.value().end());
    for (float& v : y) v *= factor;
    auto node = make_node(x.shape(), std::move(y));
    attach(node, {&x}, [factor](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
    return Var(std::move(node));
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
    const int cols = x.cols();
    const int rows = x.rows();
    require(static_cast<int>(gamma.size()) == cols && static_cast<int>(beta.size()) == cols,
            "layer_norm: parameter width mismatch");
    const float* xv = x.value().data();
    const float* gv = gamma.value().data();
    const float* bv = beta.value().data();

    std::vector<float> y(x.size());
    std::vector<float> mean(rows), rstd(rows);
    for (int r = 0; r < rows; ++r) {
        const float* xr = xv + static_cast<std::size_t>(r) * cols;
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += xr[c];
        const float m = static_cast<float>(s / cols);
        double v = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = xr[c] - m;
            v += d * d;
        }
        const float rs = 1.0f / std::sqrt(static_cast<float>(v / cols) + eps);
        mean[r] = m;
        rstd[r] = rs;
        float* yr = y.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - m) * rs * gv[c] + bv[c];
    }

    auto node = make_node(x.shape(), std::move(y));
    if (should_record({&x, &gamma, &beta})) {
        attach(node, {&x, &gamma, &beta},
               [rows, cols, mean = std::move(mean), rstd = std::move(rstd)](Node& self) {
                   const auto& px = self.parents[0];
                   const auto& pg = self.parents[1];
                   const auto& pb = self.parents[2];
                   const float* xv = px->value.data();
                   const float* gv = pg->value.data();
                   float* dx = wants(px) ? px->grad_buffer().data() : nullptr;
                   float* dg = wants(pg) ? pg->grad_buffer().data() : nullptr;
                   float* db = wants(pb) ? pb->grad_buffer().data() : nullptr;
                   std::vector<float> xhat(cols), dxhat(cols);
                   for (int r = 0; r < rows; ++r) {
                       const float* xr = xv + static_cast<std::size_t>(r) * cols;
                       const float* gr = self.grad.data() + static_cast<std::size_t>(r) * cols;
                       float sum_dxhat = 0.0f, sum_dxhat_xhat = 0.0f;
                       for (int c = 0; c < cols; ++c) {
                           xhat[c] = (xr[c] - mean[r]) * rstd[r];
                           dxhat[c] = gr[c] * gv[c];
                           sum_dxhat += dxhat[c];
                           sum_dxhat_xhat += dxhat[c] * xhat[c];
                           if (dg) dg[c] += gr[c] * xhat[c];
                           if (db) db[c] += gr[c];
                       }
                       if (dx) {
                           float* dr = dx + static_cast<std::size_t>(r) * cols;
                           const float inv = 1.0f / static_cast<float>(cols);
                           for (int c = 0; c < cols; ++c) {
                               dr[c] += rstd[r] * (dxhat[c] - sum_dxhat * inv - xhat[c] * sum_dxhat_xhat * inv);
                           }
                       }
                   }
               });
    }
    return Var(std::move(node));
}

Var gelu(const Var& x) {
    // Scalar loops: Eigen's packet erf/exp differ from the scalar versions
    // used on the unaligned head of a buffer, so results would depend on
    // where the allocator placed the data.
    constexpr float inv_sqrt2 = 0.70710678118654752f;
    std::vector<float> y(x.size());
    const auto xv = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5f * xv[i] * (1.0f + std::erf(xv[i] * inv_sqrt2));
    auto node = make_node(x.shape(), std::move(y));
    attach(node, {&x}, [](Node& self) {
        constexpr float inv_sqrt2 = 0.70710678118654752f;
        constexpr float inv_sqrt_2pi = 0.39894228040143268f;
        const auto& px = self.parents[0];
        auto g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float v = px->value[i];
            g[i] += self.grad[i] * (0.5f * (1.0f + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5f * v * v));
        }
    });
    return Var(std::move(node));
}

Var clamp(const Var& x, float lo, float hi) {
    std::vector<float> y(x.value().begin(), x.value().end());
    for (float& v : y) v = std::clamp(v, lo, hi);
    auto node = make_node(x.shape(), std::move(y));
    attach(node, {&x}, [lo, hi](Node& self) {
        const auto& px = self.parents[0];
        auto g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float v = px->value[i];
            if (v >= lo && v <= hi) g[i] += self.grad[i];
        }
    });
    return Var(std::move(node));
}

Var reshape(const Var& x, Shape shape) {
    require(numel(shape) == x.size(), "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    auto node = make_node(std::move(shape), std::vector<float>(x.value().begin(), x.value().end()));
    attach(node, {&x}, [](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    return Var(std::move(node));
}

Var concat_cols(const Var& a, const Var& b) {
    require(a.rows() == b.rows(), "concat_cols: row mismatch");
    const int rows = a.rows();
    const int ca = a.cols();
    const int cb = b.cols();
    std::vector<float> y(static_cast<std::size_t>(rows) * (ca + cb));
    for (int r = 0; r < rows; ++r) {
        std::copy_n(a.value().data() + static_cast<std::size_t>(r) * ca, ca,
                    y.data() + static_cast<std::size_t>(r) * (ca + cb));
        std::copy_n(b.value().data() + static_cast<std::size_t>(r) * cb, cb,
                    y.data() + static_cast<std::size_t>(r) * (ca + cb) + ca);
    }
    Shape shape = a.shape();
    shape.back() = ca + cb;
    auto node = make_node(std::move(shape), std::move(y));
    attach(node, {&a, &b}, [rows, ca, cb](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const int w = ca + cb;
        if (wants(pa)) {
            auto g = pa->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < ca; ++c)
                    g[static_cast<std::size_t>(r) * ca + c] += self.grad[static_cast<std::size_t>(r) * w + c];
        }
        if (wants(pb)) {
            auto g = pb->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cb; ++c)
                    g[static_cast<std::size_t>(r) * cb + c] +=
                        self.grad[static_cast<std::size_t>(r) * w + ca + c];
        }
    });
    return Var(std::move(node));
}

Var gather_rows(const Var& x, int groups, const Index& index) {
    require(groups > 0 && index != nullptr, "gather_rows: invalid arguments");
    const int cols = x.cols();
    const int in_rows = x.rows();
    require(in_rows % groups == 0, "gather_rows: rows not divisible by group count");
    const int per_in = in_rows / groups;
    const int per_out = static_cast<int>(index->size());
    for (std::int32_t src : *index) require(src < per_in, "gather_rows: index out of range");

    std::vector<float> y(static_cast<std::size_t>(groups) * per_out * cols, 0.0f);
    const float* xv = x.value().data();
    for (int g = 0; g < groups; ++g) {
        const float* base = xv + static_cast<std::size_t>(g) * per_in * cols;
        float* out = y.data() + static_cast<std::size_t>(g) * per_out * cols;
        for (int i = 0; i < per_out; ++i) {
            const std::int32_t src = (*index)[i];
            if (src >= 0) std::copy_n(base + static_cast<std::size_t>(src) * cols, cols, out + static_cast<std::size_t>(i) * cols);
        }
    }
    auto node = make_node({groups * per_out, cols}, std::move(y));
    attach(node, {&x}, [index, groups, per_in, per_out, cols](Node& self) {
        float* dx = self.parents[0]->grad_buffer().data();
        for (int g = 0; g < groups; ++g) {
            float* base = dx + static_cast<std::size_t>(g) * per_in * cols;
            const float* gy = self.grad.data() + static_cast<std::size_t>(g) * per_out * cols;
            for (int i = 0; i < per_out; ++i) {
                const std::int32_t src = (*index)[i];
                if (src < 0) continue;
                float* d = base + static_cast<std::size_t>(src) * cols;
                const float* s = gy + static_cast<std::size_t>(i) * cols;
                for (int c = 0; c < cols; ++c) d[c] += s[c];
            }
        }
    });
    return Var(std::move(node));
}

Var gather(const Var& x, int groups, const Index& index, Shape out_shape) {
    require(groups > 0 && index != nullptr, "gather: invalid arguments");
    require(x.size() % static_cast<std::size_t>(groups) == 0, "gather: size not divisible by group count");
    const std::size_t per_in = x.size() / static_cast<std::size_t>(groups);
    const std::size_t per_out = index->size();
    require(numel(out_shape) == per_out * static_cast<std::size_t>(groups),
            "gather: output shape " + to_string(out_shape) + " does not match index");
    for (std::int32_t src : *index) require(src < static_cast<std::int64_t>(per_in), "gather: index out of range");

    std::vector<float> y(per_out * groups, 0.0f);
    const float* xv = x.value().data();
    for (int g = 0; g < groups; ++g) {
        const float* base = xv + g * per_in;
        float* out = y.data() + g * per_out;
        for (std::size_t i = 0; i < per_out; ++i) {
            const std::int32_t src = (*index)[i];
            if (src >= 0) out[i] = base[src];
        }
    }
    auto node = make_node(std::move(out_shape), std::move(y));
    attach(node, {&x}, [index, groups, per_in, per_out](Node& self) {
        float* dx = self.parents[0]->grad_buffer().data();
        for (int g = 0; g < groups; ++g) {
            float* base = dx + g * per_in;
            const float* gy = self.grad.data() + g * per_out;
            for (std::size_t i = 0; i < per_out; ++i) {
                const std::int32_t src = (*index)[i];
                if (src >= 0) base[src] += gy[i];
            }
        }
    });
    return Var(std::move(node));
}

Var window_attention(const Var& qkv, const Var& bias_table, const AttentionLayout& layout) {
    const int three_c = qkv.cols();
    require(three_c % 3 == 0, "window_attention: qkv width must be 3C");
    const int C = three_c / 3;
    const int heads = layout.heads;
    require(heads > 0 && C % heads == 0, "window_attention: channels not divisible by heads");
    const int d = C / heads;
    const int T = layout.tokens;
    require(qkv.rows() % T == 0, "window_attention: rows not divisible by window size");
    const int G = qkv.rows() / T;
    const int nW = layout.windows_per_image;
    require(layout.relative_index && static_cast<int>(layout.relative_index->size()) == T * T,
            "window_attention: relative index size mismatch");
    require(bias_table.cols() == heads, "window_attention: bias table must have one column per head");
    if (layout.mask) {
        require(static_cast<int>(layout.mask->size()) == nW * T * T && G % nW == 0,
                "window_attention: mask shape mismatch");
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    const bool record = should_record({&qkv, &bias_table});
    const std::size_t TT = static_cast<std::size_t>(T) * T;

    // Additive term per (mask period, head): relative bias plus shift mask.
    const int periods = layout.mask ? nW : 1;
    std::vector<float> additive(static_cast<std::size_t>(periods) * heads * TT);
    {
        const float* table = bias_table.value().data();
        const auto& ridx = *layout.relative_index;
        for (int w = 0; w < periods; ++w)
            for (int h = 0; h < heads; ++h) {
                float* dst = additive.data() + (static_cast<std::size_t>(w) * heads + h) * TT;
                const float* mask = layout.mask ? layout.mask->data() + static_cast<std::size_t>(w) * TT : nullptr;
                for (std::size_t ij = 0; ij < TT; ++ij)
                    dst[ij] = table[static_cast<std::size_t>(ridx[ij]) * heads + h] + (mask ? mask[ij] : 0.0f);
            }
    }

    std::vector<float> out(static_cast<std::size_t>(G) * T * C);
    auto probs = std::make_shared<std::vector<float>>(record ? static_cast<std::size_t>(G) * heads * TT : 0);
    RowMat S(T, T);
    Eigen::VectorXf rowvec(T);

    for (int g = 0; g < G; ++g) {
        const float* base = qkv.value().data() + static_cast<std::size_t>(g) * T * three_c;
        const int w = layout.mask ? g % nW : 0;
        for (int h = 0; h < heads; ++h) {
            ConstStridedMap Q(base + h * d, T, d, Eigen::OuterStride<>(three_c));
            ConstStridedMap K(base + C + h * d, T, d, Eigen::OuterStride<>(three_c));
            ConstStridedMap V(base + 2 * C + h * d, T, d, Eigen::OuterStride<>(three_c));
            S.noalias() = Q * K.transpose();
            S = scale * S + ConstMatMap(additive.data() + (static_cast<std::size_t>(w) * heads + h) * TT, T, T);
            rowvec = S.rowwise().maxCoeff();
            S = (S.colwise() - rowvec).array().exp().matrix();
            rowvec = S.rowwise().sum().cwiseInverse();
            S = rowvec.asDiagonal() * S;
            StridedMap O(out.data() + static_cast<std::size_t>(g) * T * C + h * d, T, d, Eigen::OuterStride<>(C));
            O.noalias() = S * V;
            if (record) std::copy_n(S.data(), TT, probs->data() + (static_cast<std::size_t>(g) * heads + h) * TT);
        }
    }

    Shape shape = qkv.shape();
    shape.back() = C;
    auto node = make_node(std::move(shape), std::move(out));
    if (record) {
        attach(node, {&qkv, &bias_table}, [probs, layout, G, T, C, heads, d, scale](Node& self) {
            const auto& pqkv = self.parents[0];
            const auto& ptab = self.parents[1];
            const int three_c = 3 * C;
            const std::size_t TT = static_cast<std::size_t>(T) * T;
            float* dqkv = wants(pqkv) ? pqkv->grad_buffer().data() : nullptr;
            // Bias gradient is accumulated per head over all windows, then scattered once.
            std::vector<float> dbias(wants(ptab) ? static_cast<std::size_t>(heads) * TT : 0, 0.0f);
            RowMat dP(T, T);
            Eigen::VectorXf dot(T);
            for (int g = 0; g < G; ++g) {
                const float* base = pqkv->value.data() + static_cast<std::size_t>(g) * T * three_c;
                for (int h = 0; h < heads; ++h) {
                    ConstMatMap P(probs->data() + (static_cast<std::size_t>(g) * heads + h) * TT, T, T);
                    ConstStridedMap Q(base + h * d, T, d, Eigen::OuterStride<>(three_c));
                    ConstStridedMap K(base + C + h * d, T, d, Eigen::OuterStride<>(three_c));
                    ConstStridedMap V(base + 2 * C + h * d, T, d, Eigen::OuterStride<>(three_c));
                    ConstStridedMap dO(self.grad.data() + static_cast<std::size_t>(g) * T * C + h * d, T, d,
                                       Eigen::OuterStride<>(C));
                    dP.noalias() = dO * V.transpose();
                    // Softmax Jacobian: dS = P * (dP - rowsum(P * dP)).
                    for (int i = 0; i < T; ++i) {
                        float acc = 0.0f;
                        for (int j = 0; j < T; ++j) acc += P(i, j) * dP(i, j);
                        dot[i] = acc;
                    }
                    dP = P.cwiseProduct(dP.colwise() - dot);
                    if (!dbias.empty()) MatMap(dbias.data() + static_cast<std::size_t>(h) * TT, T, T) += dP;
                    if (dqkv) {
                        float* dbase = dqkv + static_cast<std::size_t>(g) * T * three_c;
                        StridedMap dQ(dbase + h * d, T, d, Eigen::OuterStride<>(three_c));
                        StridedMap dK(dbase + C + h * d, T, d, Eigen::OuterStride<>(three_c));
                        StridedMap dV(dbase + 2 * C + h * d, T, d, Eigen::OuterStride<>(three_c));
                        dV.noalias() += P.transpose() * dO;
                        dQ.noalias() += scale * (dP * K);
                        dK.noalias() += scale * (dP.transpose() * Q);
                    }
                }
            }
            if (!dbias.empty()) {
                float* dtab = ptab->grad_buffer().data();
                const auto& ridx = *layout.relative_index;
                for (int h = 0; h < heads; ++h)
                    for (std::size_t ij = 0; ij < TT; ++ij)
                        dtab[static_cast<std::size_t>(ridx[ij]) * heads + h] += dbias[static_cast<std::size_t>(h) * TT + ij];
            }
        });
    }
    return Var(std::move(node));
}

Var conv2d_same(const Var& x, const Var& weight, const Var& bias, int batch, int height, int width, int kernel) {
    require(kernel > 0 && kernel % 2 == 1, "conv2d_same: kernel must be odd");
    const int kk = kernel * kernel;
    const int cin = x.cols();
    require(x.rows() == batch * height * width, "conv2d_same: input rows do not match batch*height*width");
    require(weight.shape().size() == 2 && weight.shape()[0] == kk * cin, "conv2d_same: weight must be {k*k*cin, cout}");
    const int cout = weight.shape()[1];
    if (bias) require(static_cast<int>(bias.size()) == cout, "conv2d_same: bias size mismatch");
    const int rows = x.rows();
    const int r = kernel / 2;

    // Wcat {cin, kk*cout}: tap t occupies columns [t*cout, (t+1)*cout).
    RowMat wcat(cin, kk * cout);
    const float* wv = weight.value().data();
    for (int t = 0; t < kk; ++t)
        wcat.middleCols(t * cout, cout) = ConstMatMap(wv + static_cast<std::size_t>(t) * cin * cout, cin, cout);
    RowMat taps = ConstMatMap(x.value().data(), rows, cin) * wcat;  // per-pixel contribution of each tap

    // out(p) = sum_t taps(p + offset_t, t)
    auto for_each_tap = [=](auto&& fn) {
        for (int b = 0; b < batch; ++b)
            for (int y = 0; y < height; ++y)
                for (int xx = 0; xx < width; ++xx) {
                    const int p = (b * height + y) * width + xx;
                    for (int dy = -r; dy <= r; ++dy) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= height) continue;
                        for (int dx = -r; dx <= r; ++dx) {
                            const int sx = xx + dx;
                            if (sx < 0 || sx >= width) continue;
                            fn(p, (b * height + sy) * width + sx, (dy + r) * kernel + (dx + r));
                        }
                    }
                }
    };
    std::vector<float> y(static_cast<std::size_t>(rows) * cout, 0.0f);
    if (bias) {
        for (int p = 0; p < rows; ++p)
            for (int o = 0; o < cout; ++o) y[static_cast<std::size_t>(p) * cout + o] = bias.value()[static_cast<std::size_t>(o)];
    }
    for_each_tap([&](int p, int src, int t) {
        const float* from = taps.data() + static_cast<std::size_t>(src) * kk * cout + t * cout;
        float* to = y.data() + static_cast<std::size_t>(p) * cout;
        for (int o = 0; o < cout; ++o) to[o] += from[o];
    });

    auto node = make_node({rows, cout}, std::move(y));
    attach(node, {&x, &weight, &bias}, [=, wcat = std::move(wcat)](Node& self) {
        const auto& px = self.parents[0];
        const auto& pw = self.parents[1];
        const auto& pb = self.parents[2];
        RowMat dtaps = RowMat::Zero(rows, kk * cout);
        for_each_tap([&](int p, int src, int t) {
            const float* g = self.grad.data() + static_cast<std::size_t>(p) * cout;
            float* to = dtaps.data() + static_cast<std::size_t>(src) * kk * cout + t * cout;
            for (int o = 0; o < cout; ++o) to[o] += g[o];
        });
        if (wants(px)) MatMap(px->grad_buffer().data(), rows, cin).noalias() += dtaps * wcat.transpose();
        if (wants(pw)) {
            RowMat dw = ConstMatMap(px->value.data(), rows, cin).transpose() * dtaps;
            float* gw = pw->grad_buffer().data();
            for (int t = 0; t < kk; ++t)
                MatMap(gw + static_cast<std::size_t>(t) * cin * cout, cin, cout) += dw.middleCols(t * cout, cout);
        }
        if (wants(pb)) add_column_sums(self.grad.data(), rows, cout, pb->grad_buffer().data());
    });
    return Var(std::move(node));
}

Var power_normalize(const Var& x, int blocks) {
    require(x.shape().size() == 2, "power_normalize: expected {codewords, reals}");
    const int rows = x.shape()[0];
    const int width = x.shape()[1];
    require(blocks > 0 && width % blocks == 0, "power_normalize: width not divisible by block count");
    const int block = width / blocks;
    require(block % 2 == 0, "power_normalize: block must hold whole complex symbols");

    std::vector<float> y(x.size());
    std::vector<float> sq(static_cast<std::size_t>(rows) * blocks), factor(sq.size());
    const float* xv = x.value().data();
    for (int r = 0; r < rows; ++r) {
        for (int b = 0; b < blocks; ++b) {
            const std::size_t off = static_cast<std::size_t>(r) * width + static_cast<std::size_t>(b) * block;
            double ss = 0.0;
            for (int i = 0; i < block; ++i) ss += static_cast<double>(xv[off + i]) * xv[off + i];
            if (ss == 0.0) throw std::domain_error("power_normalize: zero-energy block cannot be normalized");
            const double f = std::sqrt((block / 2) / ss);
            sq[static_cast<std::size_t>(r) * blocks + b] = static_cast<float>(ss);
            factor[static_cast<std::size_t>(r) * blocks + b] = static_cast<float>(f);
            for (int i = 0; i < block; ++i) y[off + i] = static_cast<float>(xv[off + i] * f);
        }
    }
    auto node = make_node(x.shape(), std::move(y));
    if (should_record({&x})) {
        attach(node, {&x}, [rows, blocks, block, width, sq = std::move(sq), factor = std::move(factor)](Node& self) {
            const auto& px = self.parents[0];
            float* dx = px->grad_buffer().data();
            for (int r = 0; r < rows; ++r) {
                for (int b = 0; b < blocks; ++b) {
                    const std::size_t off = static_cast<std::size_t>(r) * width + static_cast<std::size_t>(b) * block;
                    const std::size_t k = static_cast<std::size_t>(r) * blocks + b;
                    double dot = 0.0;
                    for (int i = 0; i < block; ++i) dot += static_cast<double>(px->value[off + i]) * self.grad[off + i];
                    const float ratio = static_cast<float>(dot / sq[k]);
                    for (int i = 0; i < block; ++i) {
                        dx[off + i] += factor[k] * (self.grad[off + i] - px->value[off + i] * ratio);
                    }
                }
            }
        });
    }
    return Var(std::move(node));
}

Var mse(const Var& a, const Var& b) {
    require(a.size() == b.size() && a.size() > 0, "mse: size mismatch");
    double s = 0.0;
    const auto av = a.value();
    const auto bv = b.value();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double diff = static_cast<double>(av[i]) - bv[i];
        s += diff * diff;
    }
    const std::size_t n = av.size();
    auto node = make_node({1}, {static_cast<float>(s / static_cast<double>(n))});
    attach(node, {&a, &b}, [n](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const float k = 2.0f * self.grad[0] / static_cast<float>(n);
        float* da = wants(pa) ? pa->grad_buffer().data() : nullptr;
        float* db = wants(pb) ? pb->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const float diff = pa->value[i] - pb->value[i];
            if (da) da[i] += k * diff;
            if (db) db[i] -= k * diff;
        }
    });
    return Var(std::move(node));
}

}  // namespace jscc::ag
