#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mimolab/errors.hpp"
#include "mimolab/linalg.hpp"
#include "mimolab/rng.hpp"

namespace mimolab::ndiff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over matrix-valued nodes. The tape evaluates eagerly
// (values are available as soon as a node is created) and is rebuilt per
// optimization step, which keeps the engine small: no taping across steps, no
// graph reuse, no hidden global state.
// ---------------------------------------------------------------------------

enum class Op : std::uint8_t {
    kInput,
    kConstant,
    kAdd,
    kSub,
    kMul,
    kMatMul,
    kAddCol,
    kRowwiseMul,
    kColwiseMul,
    kRelu,
    kTanh,
    kSigmoid,
    kSoftplus,
    kExp,
    kLog,
    kReciprocal,
    kAffine,
    kSumAll,
    kRowSum,
    kMinElem,
    kMaxElem,
    kSelectGe,
    kConcatRows,
    kDetach,
};

struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Mat val;
    Mat grad;
    bool requires_grad = false;
    double mul_scale = 1.0;  // kAffine
    double add_shift = 0.0;  // kAffine
    std::vector<std::uint8_t> mask;  // kSelectGe / kMinElem / kMaxElem branch record
};

class Tape {
public:
    void clear() { nodes_.clear(); }
    int size() const { return static_cast<int>(nodes_.size()); }

    const Mat& val(int i) const { return nodes_[i].val; }
    const Mat& grad(int i) const { return nodes_[i].grad; }

    int input(Mat v) {
        Node n{Op::kInput};
        n.val = std::move(v);
        n.requires_grad = true;
        return push(std::move(n));
    }

    int constant(Mat v) {
        Node n{Op::kConstant};
        n.val = std::move(v);
        return push(std::move(n));
    }

    int constant(const Vec& v) { return constant(Mat::column(v)); }

    int add(int x, int y) {
        check_same_shape(x, y, "add");
        Node n = binary(Op::kAdd, x, y);
        n.val = nodes_[x].val;
        for (std::size_t i = 0; i < n.val.size(); ++i) n.val.a[i] += nodes_[y].val.a[i];
        return push(std::move(n));
    }

    int sub(int x, int y) {
        check_same_shape(x, y, "sub");
        Node n = binary(Op::kSub, x, y);
        n.val = nodes_[x].val;
        for (std::size_t i = 0; i < n.val.size(); ++i) n.val.a[i] -= nodes_[y].val.a[i];
        return push(std::move(n));
    }

    int mul(int x, int y) {
        check_same_shape(x, y, "mul");
        Node n = binary(Op::kMul, x, y);
        n.val = nodes_[x].val;
        for (std::size_t i = 0; i < n.val.size(); ++i) n.val.a[i] *= nodes_[y].val.a[i];
        return push(std::move(n));
    }

    int matmul(int x, int y) {
        Node n = binary(Op::kMatMul, x, y);
        n.val = mimolab::matmul(nodes_[x].val, nodes_[y].val);
        return push(std::move(n));
    }

    // x (m x n) + v (m x 1) broadcast across columns
    int add_col(int x, int v) {
        const Mat& xv = nodes_[x].val;
        const Mat& vv = nodes_[v].val;
        if (vv.cols != 1 || vv.rows != xv.rows) throw ShapeError("add_col: v must be m x 1");
        Node n = binary(Op::kAddCol, x, v);
        n.val = xv;
        for (int i = 0; i < xv.rows; ++i)
            for (int j = 0; j < xv.cols; ++j) n.val(i, j) += vv(i, 0);
        return push(std::move(n));
    }

    // out[i][j] = x[i][j] * v[i]
    int rowwise_mul(int x, int v) {
        const Mat& xv = nodes_[x].val;
        const Mat& vv = nodes_[v].val;
        if (vv.cols != 1 || vv.rows != xv.rows) throw ShapeError("rowwise_mul: v must be m x 1");
        Node n = binary(Op::kRowwiseMul, x, v);
        n.val = xv;
        for (int i = 0; i < xv.rows; ++i)
            for (int j = 0; j < xv.cols; ++j) n.val(i, j) *= vv(i, 0);
        return push(std::move(n));
    }

    // out[i][j] = x[i][j] * v[j]
    int colwise_mul(int x, int v) {
        const Mat& xv = nodes_[x].val;
        const Mat& vv = nodes_[v].val;
        if (vv.cols != 1 || vv.rows != xv.cols) throw ShapeError("colwise_mul: v must be n x 1");
        Node n = binary(Op::kColwiseMul, x, v);
        n.val = xv;
        for (int i = 0; i < xv.rows; ++i)
            for (int j = 0; j < xv.cols; ++j) n.val(i, j) *= vv(j, 0);
        return push(std::move(n));
    }

    int relu(int x) { return unary_map(Op::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; }); }

    int tanh(int x) { return unary_map(Op::kTanh, x, [](double v) { return std::tanh(v); }); }

    int sigmoid(int x) {
        return unary_map(Op::kSigmoid, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    }

    int softplus(int x) {
        return unary_map(Op::kSoftplus, x, [](double v) {
            return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
        });
    }

    int exp(int x) { return unary_map(Op::kExp, x, [](double v) { return std::exp(v); }); }

    int log(int x) { return unary_map(Op::kLog, x, [](double v) { return std::log(v); }); }

    int reciprocal(int x) {
        return unary_map(Op::kReciprocal, x, [](double v) { return 1.0 / v; });
    }

    // out = s * x + c elementwise
    int affine(int x, double s, double c) {
        Node n = unary(Op::kAffine, x);
        n.mul_scale = s;
        n.add_shift = c;
        n.val = nodes_[x].val;
        for (auto& v : n.val.a) v = s * v + c;
        return push(std::move(n));
    }

    int neg(int x) { return affine(x, -1.0, 0.0); }

    int sum_all(int x) {
        Node n = unary(Op::kSumAll, x);
        double s = 0.0;
        for (double v : nodes_[x].val.a) s += v;
        n.val = Mat(1, 1);
        n.val(0, 0) = s;
        return push(std::move(n));
    }

    int row_sum(int x) {
        const Mat& xv = nodes_[x].val;
        Node n = unary(Op::kRowSum, x);
        n.val = Mat(xv.rows, 1);
        for (int i = 0; i < xv.rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < xv.cols; ++j) s += xv(i, j);
            n.val(i, 0) = s;
        }
        return push(std::move(n));
    }

    // Elementwise min/max; ties take x. The branch choice is recorded and the
    // gradient flows to the chosen side only.
    int min_elem(int x, int y) { return extremum(Op::kMinElem, x, y); }
    int max_elem(int x, int y) { return extremum(Op::kMaxElem, x, y); }

    // out = cond >= 0 ? x : y, elementwise. cond is read at build time and
    // gets no gradient: the selection is treated as locally constant.
    int select_ge(int cond, int x, int y) {
        check_same_shape(x, y, "select_ge");
        check_same_shape(cond, x, "select_ge");
        Node n = binary(Op::kSelectGe, x, y);
        const Mat& cv = nodes_[cond].val;
        n.val = nodes_[x].val;
        n.mask.resize(n.val.size());
        for (std::size_t i = 0; i < n.val.size(); ++i) {
            const bool take_x = cv.a[i] >= 0.0;
            n.mask[i] = take_x;
            if (!take_x) n.val.a[i] = nodes_[y].val.a[i];
        }
        return push(std::move(n));
    }

    int concat_rows(int x, int y) {
        const Mat& xv = nodes_[x].val;
        const Mat& yv = nodes_[y].val;
        if (xv.cols != yv.cols) throw ShapeError("concat_rows: column mismatch");
        Node n = binary(Op::kConcatRows, x, y);
        n.val = Mat(xv.rows + yv.rows, xv.cols);
        std::copy(xv.a.begin(), xv.a.end(), n.val.a.begin());
        std::copy(yv.a.begin(), yv.a.end(), n.val.a.begin() + xv.a.size());
        return push(std::move(n));
    }

    int detach(int x) {
        Node n{Op::kDetach};
        n.a = x;
        n.val = nodes_[x].val;
        n.requires_grad = false;
        return push(std::move(n));
    }

    // Reverse pass from a scalar root. Adjoints are zeroed first; nodes that
    // do not lead back to an input are skipped entirely.
    void backward(int root) {
        Node& r = nodes_[root];
        if (r.val.rows != 1 || r.val.cols != 1) throw ShapeError("backward: root must be 1x1");
        for (auto& n : nodes_)
            if (n.requires_grad) {
                n.grad = Mat(n.val.rows, n.val.cols);
            }
        if (!r.requires_grad) return;
        r.grad(0, 0) = 1.0;
        for (int i = root; i >= 0; --i) {
            const Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.size() == 0) continue;
            propagate(i);
        }
    }

private:
    std::vector<Node> nodes_;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node unary(Op op, int x) {
        Node n{op};
        n.a = x;
        n.requires_grad = nodes_[x].requires_grad;
        return n;
    }

    Node binary(Op op, int x, int y) {
        Node n{op};
        n.a = x;
        n.b = y;
        n.requires_grad = nodes_[x].requires_grad || nodes_[y].requires_grad;
        return n;
    }

    template <typename F>
    int unary_map(Op op, int x, F f) {
        Node n = unary(op, x);
        n.val = nodes_[x].val;
        for (auto& v : n.val.a) v = f(v);
        return push(std::move(n));
    }

    int extremum(Op op, int x, int y) {
        check_same_shape(x, y, "min/max");
        Node n = binary(op, x, y);
        const Mat& xv = nodes_[x].val;
        const Mat& yv = nodes_[y].val;
        n.val = xv;
        n.mask.resize(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const bool take_x =
                op == Op::kMinElem ? xv.a[i] <= yv.a[i] : xv.a[i] >= yv.a[i];
            n.mask[i] = take_x;
            if (!take_x) n.val.a[i] = yv.a[i];
        }
        return push(std::move(n));
    }

    void check_same_shape(int x, int y, const char* what) const {
        if (nodes_[x].val.rows != nodes_[y].val.rows ||
            nodes_[x].val.cols != nodes_[y].val.cols)
            throw ShapeError(std::string(what) + ": shape mismatch");
    }

    Mat* grad_of(int i) {
        Node& n = nodes_[i];
        return n.requires_grad ? &n.grad : nullptr;
    }

    void propagate(int i) {
        Node& n = nodes_[i];
        const Mat& g = n.grad;
        Mat* ga = n.a >= 0 ? grad_of(n.a) : nullptr;
        Mat* gb = n.b >= 0 ? grad_of(n.b) : nullptr;
        switch (n.op) {
            case Op::kInput:
            case Op::kConstant:
            case Op::kDetach:
                break;
            case Op::kAdd:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k];
                if (gb)
                    for (std::size_t k = 0; k < g.size(); ++k) gb->a[k] += g.a[k];
                break;
            case Op::kSub:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k];
                if (gb)
                    for (std::size_t k = 0; k < g.size(); ++k) gb->a[k] -= g.a[k];
                break;
            case Op::kMul: {
                const Mat& xv = nodes_[n.a].val;
                const Mat& yv = nodes_[n.b].val;
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k] * yv.a[k];
                if (gb)
                    for (std::size_t k = 0; k < g.size(); ++k) gb->a[k] += g.a[k] * xv.a[k];
                break;
            }
            case Op::kMatMul: {
                const Mat& xv = nodes_[n.a].val;
                const Mat& yv = nodes_[n.b].val;
                if (ga) {  // ga += g * y^T
                    for (int r = 0; r < xv.rows; ++r)
                        for (int c = 0; c < xv.cols; ++c) {
                            double s = 0.0;
                            for (int j = 0; j < yv.cols; ++j) s += g(r, j) * yv(c, j);
                            (*ga)(r, c) += s;
                        }
                }
                if (gb) {  // gb += x^T * g
                    for (int r = 0; r < yv.rows; ++r)
                        for (int c = 0; c < yv.cols; ++c) {
                            double s = 0.0;
                            for (int j = 0; j < xv.rows; ++j) s += xv(j, r) * g(j, c);
                            (*gb)(r, c) += s;
                        }
                }
                break;
            }
            case Op::kAddCol: {
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k];
                if (gb)
                    for (int r = 0; r < g.rows; ++r)
                        for (int c = 0; c < g.cols; ++c) (*gb)(r, 0) += g(r, c);
                break;
            }
            case Op::kRowwiseMul: {
                const Mat& xv = nodes_[n.a].val;
                const Mat& vv = nodes_[n.b].val;
                if (ga)
                    for (int r = 0; r < g.rows; ++r)
                        for (int c = 0; c < g.cols; ++c) (*ga)(r, c) += g(r, c) * vv(r, 0);
                if (gb)
                    for (int r = 0; r < g.rows; ++r)
                        for (int c = 0; c < g.cols; ++c) (*gb)(r, 0) += g(r, c) * xv(r, c);
                break;
            }
            case Op::kColwiseMul: {
                const Mat& xv = nodes_[n.a].val;
                const Mat& vv = nodes_[n.b].val;
                if (ga)
                    for (int r = 0; r < g.rows; ++r)
                        for (int c = 0; c < g.cols; ++c) (*ga)(r, c) += g(r, c) * vv(c, 0);
                if (gb)
                    for (int r = 0; r < g.rows; ++r)
                        for (int c = 0; c < g.cols; ++c) (*gb)(c, 0) += g(r, c) * xv(r, c);
                break;
            }
            case Op::kRelu: {
                const Mat& xv = nodes_[n.a].val;
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k)
                        if (xv.a[k] > 0.0) ga->a[k] += g.a[k];
                break;
            }
            case Op::kTanh:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k)
                        ga->a[k] += g.a[k] * (1.0 - n.val.a[k] * n.val.a[k]);
                break;
            case Op::kSigmoid:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k)
                        ga->a[k] += g.a[k] * n.val.a[k] * (1.0 - n.val.a[k]);
                break;
            case Op::kSoftplus: {
                const Mat& xv = nodes_[n.a].val;
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k)
                        ga->a[k] += g.a[k] / (1.0 + std::exp(-xv.a[k]));
                break;
            }
            case Op::kExp:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k] * n.val.a[k];
                break;
            case Op::kLog: {
                const Mat& xv = nodes_[n.a].val;
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k] / xv.a[k];
                break;
            }
            case Op::kReciprocal:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k)
                        ga->a[k] -= g.a[k] * n.val.a[k] * n.val.a[k];
                break;
            case Op::kAffine:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k] * n.mul_scale;
                break;
            case Op::kSumAll:
                if (ga)
                    for (std::size_t k = 0; k < ga->size(); ++k) ga->a[k] += g(0, 0);
                break;
            case Op::kRowSum:
                if (ga)
                    for (int r = 0; r < ga->rows; ++r)
                        for (int c = 0; c < ga->cols; ++c) (*ga)(r, c) += g(r, 0);
                break;
            case Op::kMinElem:
            case Op::kMaxElem:
            case Op::kSelectGe:
                if (ga)
                    for (std::size_t k = 0; k < g.size(); ++k)
                        if (n.mask[k]) ga->a[k] += g.a[k];
                if (gb)
                    for (std::size_t k = 0; k < g.size(); ++k)
                        if (!n.mask[k]) gb->a[k] += g.a[k];
                break;
            case Op::kConcatRows: {
                const std::size_t na = nodes_[n.a].val.size();
                if (ga)
                    for (std::size_t k = 0; k < na; ++k) ga->a[k] += g.a[k];
                if (gb)
                    for (std::size_t k = 0; k < gb->size(); ++k) gb->a[k] += g.a[k + na];
                break;
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Feed-forward ReLU MLP parameters and plain forward evaluation.
// ---------------------------------------------------------------------------

enum class OutputActivation : std::uint8_t { kIdentity, kSigmoid };

struct MlpParams {
    struct Layer {
        Mat w;  // out x in
        Vec b;  // out
    };
    std::vector<Layer> layers;
    OutputActivation output_activation = OutputActivation::kIdentity;

    int input_dim() const { return layers.front().w.cols; }
    int output_dim() const { return layers.back().w.rows; }

    void validate() const {
        if (layers.empty()) throw ShapeError("mlp: no layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.w.rows != static_cast<int>(l.b.size())) throw ShapeError("mlp: bias dim");
            if (i > 0 && l.w.cols != layers[i - 1].w.rows)
                throw ShapeError("mlp: adjacent layer dims");
            for (double v : l.w.a)
                if (!std::isfinite(v)) throw ConfigError("mlp: non-finite weight");
            for (double v : l.b)
                if (!std::isfinite(v)) throw ConfigError("mlp: non-finite bias");
        }
    }
};

// He-style init for ReLU hidden layers.
inline MlpParams random_mlp(const std::vector<int>& dims, Rng& rng,
                            OutputActivation out_act = OutputActivation::kIdentity) {
    if (dims.size() < 2) throw ConfigError("random_mlp: need at least one layer");
    MlpParams p;
    p.output_activation = out_act;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        MlpParams::Layer l;
        l.w = Mat(dims[i + 1], dims[i]);
        const double scale = std::sqrt(2.0 / dims[i]);
        for (auto& v : l.w.a) v = scale * rng.normal();
        l.b.assign(dims[i + 1], 0.0);
        p.layers.push_back(std::move(l));
    }
    return p;
}

inline Vec forward_mlp(const MlpParams& p, const Vec& x) {
    if (static_cast<int>(x.size()) != p.input_dim()) throw ShapeError("forward_mlp: input dim");
    Vec h = x;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        Vec z(l.w.rows);
        for (int r = 0; r < l.w.rows; ++r) {
            double s = l.b[r];
            const double* wrow = &l.w.a[static_cast<std::size_t>(r) * l.w.cols];
            for (int c = 0; c < l.w.cols; ++c) s += wrow[c] * h[c];
            z[r] = s;
        }
        const bool last = i + 1 == p.layers.size();
        if (!last) {
            for (auto& v : z) v = v > 0.0 ? v : 0.0;
        } else if (p.output_activation == OutputActivation::kSigmoid) {
            for (auto& v : z) v = 1.0 / (1.0 + std::exp(-v));
        }
        h = std::move(z);
    }
    return h;
}

// Handles of the parameter nodes of one MLP on a tape. trainable=true binds
// weights as inputs (gradients flow); false binds them as constants.
struct MlpBinding {
    std::vector<std::pair<int, int>> layers;  // (w, b) node handles
};

inline MlpBinding bind_mlp(Tape& tape, const MlpParams& p, bool trainable) {
    MlpBinding binding;
    for (const auto& l : p.layers) {
        const int w = trainable ? tape.input(l.w) : tape.constant(l.w);
        const int b = trainable ? tape.input(Mat::column(l.b)) : tape.constant(l.b);
        binding.layers.emplace_back(w, b);
    }
    return binding;
}

// x may be a batch: in x B, one sample per column.
inline int mlp_forward_graph(Tape& tape, const MlpParams& p, const MlpBinding& binding, int x) {
    int h = x;
    for (std::size_t i = 0; i < binding.layers.size(); ++i) {
        const auto [w, b] = binding.layers[i];
        h = tape.add_col(tape.matmul(w, h), b);
        const bool last = i + 1 == binding.layers.size();
        if (!last)
            h = tape.relu(h);
        else if (p.output_activation == OutputActivation::kSigmoid)
            h = tape.sigmoid(h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Flat parameter views + Adam.
// ---------------------------------------------------------------------------

inline std::size_t param_count(const MlpParams& p) {
    std::size_t n = 0;
    for (const auto& l : p.layers) n += l.w.size() + l.b.size();
    return n;
}

inline void flatten_into(const MlpParams& p, Vec& out) {
    for (const auto& l : p.layers) {
        out.insert(out.end(), l.w.a.begin(), l.w.a.end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
}

inline Vec flatten(const MlpParams& p) {
    Vec out;
    out.reserve(param_count(p));
    flatten_into(p, out);
    return out;
}

inline std::size_t assign_from_flat(MlpParams& p, const Vec& flat, std::size_t offset = 0) {
    for (auto& l : p.layers) {
        std::copy(flat.begin() + offset, flat.begin() + offset + l.w.size(), l.w.a.begin());
        offset += l.w.size();
        std::copy(flat.begin() + offset, flat.begin() + offset + l.b.size(), l.b.begin());
        offset += l.b.size();
    }
    return offset;
}

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::uint64_t step = 0;
    Vec m;
    Vec v;
    AdamConfig cfg;

    explicit AdamState(std::size_t n = 0, AdamConfig c = {}) : m(n, 0.0), v(n, 0.0), cfg(c) {}
};

// Standard Adam with bias correction, in place on the flat parameter vector.
inline void adam_step(AdamState& st, Vec& params, const Vec& grads) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ShapeError("adam_step: size mismatch");
    ++st.step;
    const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * grads[i];
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * grads[i] * grads[i];
        params[i] -= st.cfg.lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + st.cfg.eps);
    }
}

// ---------------------------------------------------------------------------
// Checkpoint file: "FGGM" magic, u32 version, u32 JSON header length, JSON
// header describing net shapes and the normalizer, then raw little-endian f64
// arrays in declared order. Roundtrips are bit-exact.
// ---------------------------------------------------------------------------

struct NormalizerBlob {
    std::uint64_t count = 0;
    Vec mean;
    Vec m2;
};

struct WeightsFile {
    std::vector<std::pair<std::string, MlpParams>> nets;
    NormalizerBlob normalizer;
    nlohmann::json extra;
};

inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

inline void write_doubles(std::FILE* f, const double* p, std::size_t n) {
    if (std::fwrite(p, sizeof(double), n, f) != n) throw FormatError("short write");
}

inline void read_doubles(std::FILE* f, double* p, std::size_t n) {
    if (std::fread(p, sizeof(double), n, f) != n) throw FormatError("truncated payload");
}

inline const char* activation_name(OutputActivation a) {
    return a == OutputActivation::kSigmoid ? "sigmoid" : "identity";
}

inline OutputActivation activation_from_name(const std::string& s) {
    if (s == "sigmoid") return OutputActivation::kSigmoid;
    if (s == "identity") return OutputActivation::kIdentity;
    throw FormatError("unknown output activation: " + s);
}

}  // namespace detail

inline void save_weights(const WeightsFile& wf, const std::string& path) {
    nlohmann::json header;
    header["nets"] = nlohmann::json::array();
    for (const auto& [name, params] : wf.nets) {
        params.validate();
        nlohmann::json net;
        net["name"] = name;
        std::vector<int> dims{params.input_dim()};
        for (const auto& l : params.layers) dims.push_back(l.w.rows);
        net["dims"] = dims;
        net["output"] = detail::activation_name(params.output_activation);
        header["nets"].push_back(std::move(net));
    }
    header["normalizer"] = {{"count", wf.normalizer.count},
                            {"dim", wf.normalizer.mean.size()}};
    header["extra"] = wf.extra;
    const std::string js = header.dump();

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw FormatError("cannot open for write: " + path);
    const char magic[4] = {'F', 'G', 'G', 'M'};
    const std::uint32_t version = kWeightsVersion;
    const std::uint32_t json_len = static_cast<std::uint32_t>(js.size());
    std::fwrite(magic, 1, 4, f);
    std::fwrite(&version, sizeof version, 1, f);
    std::fwrite(&json_len, sizeof json_len, 1, f);
    std::fwrite(js.data(), 1, js.size(), f);
    for (const auto& [name, params] : wf.nets)
        for (const auto& l : params.layers) {
            detail::write_doubles(f, l.w.a.data(), l.w.size());
            detail::write_doubles(f, l.b.data(), l.b.size());
        }
    detail::write_doubles(f, wf.normalizer.mean.data(), wf.normalizer.mean.size());
    detail::write_doubles(f, wf.normalizer.m2.data(), wf.normalizer.m2.size());
    std::fclose(f);
}

inline WeightsFile load_weights(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open for read: " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::string(magic, 4) != "FGGM")
        throw FormatError("bad magic");
    std::uint32_t version = 0, json_len = 0;
    if (std::fread(&version, sizeof version, 1, f) != 1 || version != kWeightsVersion)
        throw FormatError("unsupported version");
    if (std::fread(&json_len, sizeof json_len, 1, f) != 1) throw FormatError("truncated header");
    std::string js(json_len, '\0');
    if (std::fread(js.data(), 1, json_len, f) != json_len) throw FormatError("truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad header json: ") + e.what());
    }

    WeightsFile wf;
    for (const auto& net : header.at("nets")) {
        MlpParams params;
        params.output_activation =
            detail::activation_from_name(net.at("output").get<std::string>());
        const auto dims = net.at("dims").get<std::vector<int>>();
        if (dims.size() < 2) throw FormatError("net needs at least one layer");
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            MlpParams::Layer l;
            l.w = Mat(dims[i + 1], dims[i]);
            l.b.assign(dims[i + 1], 0.0);
            params.layers.push_back(std::move(l));
        }
        wf.nets.emplace_back(net.at("name").get<std::string>(), std::move(params));
    }
    wf.normalizer.count = header.at("normalizer").at("count").get<std::uint64_t>();
    const auto norm_dim = header.at("normalizer").at("dim").get<std::size_t>();
    wf.normalizer.mean.assign(norm_dim, 0.0);
    wf.normalizer.m2.assign(norm_dim, 0.0);
    wf.extra = header.value("extra", nlohmann::json::object());

    for (auto& [name, params] : wf.nets)
        for (auto& l : params.layers) {
            detail::read_doubles(f, l.w.a.data(), l.w.size());
            detail::read_doubles(f, l.b.data(), l.b.size());
        }
    detail::read_doubles(f, wf.normalizer.mean.data(), wf.normalizer.mean.size());
    detail::read_doubles(f, wf.normalizer.m2.data(), wf.normalizer.m2.size());
    return wf;
}

}  // namespace mimolab::ndiff
