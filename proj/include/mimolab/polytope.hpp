#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mimolab/bounds.hpp"
#include "mimolab/errors.hpp"
#include "mimolab/linalg.hpp"
#include "mimolab/ndiff.hpp"

namespace mimolab::polytope {

using ndiff::MlpParams;
using ndiff::Tape;

// Linear relaxation of one ReLU neuron with pre-activation range [l, u]:
//   lower_slope * h  <=  relu(h)  <=  upper_slope * h + upper_intercept
// Stable neurons pass through exactly. For unstable neurons the upper line is
// the chord u/(u-l) * h - u*l/(u-l); the lower slope is the binary
// area-minimizing choice: 1 when u >= |l|, else 0.
struct ReluRelaxation {
    double lower_slope;
    double upper_slope;
    double upper_intercept;
};

inline ReluRelaxation relu_relaxation(double l, double u) {
    if (l > 0.0) return {1.0, 1.0, 0.0};
    if (u <= 0.0) return {0.0, 0.0, 0.0};
    const double s = u / (u - l);
    return {u >= -l ? 1.0 : 0.0, s, -u * l / (u - l)};
}

// Output relaxation hyperplanes of the pre-activation network:
//   A_lower x + b_lower <= N(x) <= A_upper x + b_upper  for all x in the box.
struct LinearBounds {
    Mat a_lower;
    Mat a_upper;
    Vec b_lower;
    Vec b_upper;
};

struct LayerBounds {
    std::vector<Vec> lower;  // per hidden layer, pre-activation
    std::vector<Vec> upper;
};

struct PropagateOptions {
    // When false, intermediate pre-activation bounds are detached before the
    // relaxation coefficients are formed, so gradients only flow through the
    // final concretization. Kept for comparison runs.
    bool grad_through_bounds = true;
};

struct PropagateResult {
    Vec output_lower;
    Vec output_upper;
    LinearBounds linear;
    LayerBounds layers;
    // Fingerprint of every discrete choice made during propagation (neuron
    // stability classes, alpha bits, coefficient signs, interval-vs-backward
    // winners). Two evaluations in the same relaxation mode share the hash.
    std::uint64_t mode_hash = 0;
};

namespace detail {

struct ModeHasher {
    std::uint64_t h = 14695981039346656037ULL;

    void add_bit(bool b) {
        h ^= static_cast<std::uint64_t>(b) + 0x9e37;
        h *= 1099511628211ULL;
    }

    void add_signs(const Mat& m) {
        for (double v : m.a) add_bit(v >= 0.0);
    }
};

// Per-layer relaxation state on the tape.
struct LayerRelax {
    int upper_slope = -1;      // graph node, n x 1
    int lower_slope = -1;      // constant node (binary alpha)
    int upper_intercept = -1;  // graph node, n x 1
};

struct Builder {
    Tape& tape;
    const MlpParams& params;
    PropagateOptions opts;
    ModeHasher hasher;

    std::vector<int> w_const;     // per layer
    std::vector<int> b_const;     // per layer, column
    std::vector<Mat> w_pos_mat;   // max(W, 0)
    std::vector<Mat> w_neg_mat;   // min(W, 0)
    std::vector<int> w_pos;       // constants
    std::vector<int> w_neg;
    std::vector<LayerRelax> relax;  // per hidden layer

    Builder(Tape& t, const MlpParams& p, PropagateOptions o) : tape(t), params(p), opts(o) {
        p.validate();
        for (const auto& layer : p.layers) {
            w_const.push_back(tape.constant(layer.w));
            b_const.push_back(tape.constant(layer.b));
            Mat pos = layer.w, neg = layer.w;
            for (std::size_t i = 0; i < pos.size(); ++i) {
                if (pos.a[i] < 0.0) pos.a[i] = 0.0;
                if (neg.a[i] > 0.0) neg.a[i] = 0.0;
            }
            w_pos.push_back(tape.constant(pos));
            w_neg.push_back(tape.constant(neg));
            w_pos_mat.push_back(std::move(pos));
            w_neg_mat.push_back(std::move(neg));
        }
    }

    int zeros_like(int x) {
        return tape.constant(Mat(tape.val(x).rows, tape.val(x).cols));
    }

    // Interval image of layer `li`'s affine map given post-activation bounds
    // of the previous layer (or the input box).
    std::pair<int, int> affine_interval(int li, int glo, int gup) {
        const int lo = tape.add_col(
            tape.add(tape.matmul(w_pos[li], glo), tape.matmul(w_neg[li], gup)), b_const[li]);
        const int up = tape.add_col(
            tape.add(tape.matmul(w_pos[li], gup), tape.matmul(w_neg[li], glo)), b_const[li]);
        return {lo, up};
    }

    // Builds the relaxation coefficient nodes for hidden layer `hi` from its
    // pre-activation bound nodes. The stability classification and the alpha
    // bit are read from current values and enter the graph as constants; the
    // unstable slopes and intercepts stay differentiable in (l, u).
    void make_relaxation(int hi, int l_node, int u_node) {
        if (!opts.grad_through_bounds) {
            l_node = tape.detach(l_node);
            u_node = tape.detach(u_node);
        }
        const Mat& lv = tape.val(l_node);
        const Mat& uv = tape.val(u_node);
        const int n = lv.rows;
        Mat pos_mask(n, 1), unstable_mask(n, 1), alpha(n, 1), guard(n, 1);
        for (int i = 0; i < n; ++i) {
            const double l = lv(i, 0), u = uv(i, 0);
            const bool stable_pos = l > 0.0;
            const bool stable_neg = !stable_pos && u <= 0.0;
            const bool unstable = !stable_pos && !stable_neg;
            pos_mask(i, 0) = stable_pos ? 1.0 : 0.0;
            unstable_mask(i, 0) = unstable ? 1.0 : 0.0;
            guard(i, 0) = unstable ? 0.0 : 1.0;  // keeps the divisor away from 0
            alpha(i, 0) = stable_pos ? 1.0 : (unstable && u >= -l ? 1.0 : 0.0);
            hasher.add_bit(stable_pos);
            hasher.add_bit(unstable);
            hasher.add_bit(alpha(i, 0) > 0.0);
        }
        const int un_mask = tape.constant(unstable_mask);
        const int denom = tape.add(tape.sub(u_node, l_node), tape.constant(guard));
        const int inv_denom = tape.reciprocal(denom);
        const int chord = tape.mul(u_node, inv_denom);  // u / (u - l), garbage where stable
        LayerRelax r;
        r.upper_slope = tape.add(tape.constant(pos_mask), tape.mul(un_mask, chord));
        r.lower_slope = tape.constant(alpha);
        r.upper_intercept =
            tape.mul(un_mask, tape.neg(tape.mul(tape.mul(u_node, l_node), inv_denom)));
        if (static_cast<int>(relax.size()) <= hi) relax.resize(hi + 1);
        relax[hi] = r;
    }

    // Backward substitution of the expression A * g_top + c down to the input,
    // applying the per-layer relaxations. `top` is the deepest hidden layer
    // whose post-activation the expression currently refers to; top == -1
    // means the expression is already in input terms.
    std::pair<int, int> backsub(int a, int c, int top, bool is_upper) {
        for (int k = top; k >= 0; --k) {
            hasher.add_signs(tape.val(a));
            const int zero = zeros_like(a);
            const int a_pos = tape.max_elem(a, zero);
            const int a_neg = tape.min_elem(a, zero);
            const LayerRelax& r = relax[k];
            int a_h, c_new;
            if (is_upper) {
                a_h = tape.add(tape.colwise_mul(a_pos, r.upper_slope),
                               tape.colwise_mul(a_neg, r.lower_slope));
                c_new = tape.add(c, tape.matmul(a_pos, r.upper_intercept));
            } else {
                a_h = tape.add(tape.colwise_mul(a_pos, r.lower_slope),
                               tape.colwise_mul(a_neg, r.upper_slope));
                c_new = tape.add(c, tape.matmul(a_neg, r.upper_intercept));
            }
            // substitute h_k = W_k g_{k-1} + b_k
            c = tape.add(c_new, tape.matmul(a_h, b_const[k]));
            a = tape.matmul(a_h, w_const[k]);
        }
        return {a, c};
    }

    // sum_j extremum(A_ij lb_j, A_ij ub_j) + c_i, the sign-split concretization.
    int concretize(int a, int c, int lb, int ub, bool is_upper) {
        hasher.add_signs(tape.val(a));
        const int at_lb = tape.colwise_mul(a, lb);
        const int at_ub = tape.colwise_mul(a, ub);
        const int picked = is_upper ? tape.max_elem(at_ub, at_lb) : tape.min_elem(at_ub, at_lb);
        return tape.add(tape.row_sum(picked), c);
    }
};

}  // namespace detail

// Handles into the tape for one full bound propagation; used directly by the
// attack optimizer, which assembles its own box nodes.
struct BoundGraph {
    int lb = -1;
    int ub = -1;
    std::vector<int> layer_lower;  // hidden pre-activation bounds (intersected)
    std::vector<int> layer_upper;
    int out_lower = -1;  // post output-activation, m x 1
    int out_upper = -1;
    int a_lower = -1;  // input-level hyperplanes of the pre-activation output
    int a_upper = -1;
    int b_lower = -1;
    int b_upper = -1;
    std::uint64_t mode_hash = 0;
};

// Backward linear bound propagation with per-layer recursion. Intermediate
// pre-activation bounds are computed front-to-back, each hidden layer by a
// full backward pass to the input, then tightened against the forward interval
// image; the forward image also caps the final concretization, so the output
// box is never wider than plain interval arithmetic.
inline BoundGraph build_bound_graph(Tape& tape, const MlpParams& params, int lb, int ub,
                                    const PropagateOptions& opts = {}) {
    detail::Builder bld(tape, params, opts);
    const int num_layers = static_cast<int>(params.layers.size());
    const int hidden = num_layers - 1;

    BoundGraph g;
    g.lb = lb;
    g.ub = ub;

    int prev_post_lo = lb, prev_post_up = ub;
    for (int hi = 0; hi < hidden; ++hi) {
        int l_node, u_node;
        auto [ibp_lo, ibp_up] = bld.affine_interval(hi, prev_post_lo, prev_post_up);
        if (hi == 0) {
            // exact for a single affine map over the box
            l_node = ibp_lo;
            u_node = ibp_up;
        } else {
            auto [a_up, c_up] = bld.backsub(bld.w_const[hi], bld.b_const[hi], hi - 1, true);
            auto [a_lo, c_lo] = bld.backsub(bld.w_const[hi], bld.b_const[hi], hi - 1, false);
            const int crown_up = bld.concretize(a_up, c_up, lb, ub, true);
            const int crown_lo = bld.concretize(a_lo, c_lo, lb, ub, false);
            bld.hasher.add_signs(tape.val(crown_up));
            l_node = tape.max_elem(crown_lo, ibp_lo);
            u_node = tape.min_elem(crown_up, ibp_up);
            for (std::size_t i = 0; i < tape.val(l_node).size(); ++i) {
                bld.hasher.add_bit(tape.val(crown_lo).a[i] >= tape.val(ibp_lo).a[i]);
                bld.hasher.add_bit(tape.val(crown_up).a[i] <= tape.val(ibp_up).a[i]);
            }
        }
        g.layer_lower.push_back(l_node);
        g.layer_upper.push_back(u_node);
        bld.make_relaxation(hi, l_node, u_node);
        prev_post_lo = tape.relu(l_node);
        prev_post_up = tape.relu(u_node);
    }

    // output layer
    const int oi = num_layers - 1;
    auto [ibp_lo, ibp_up] = bld.affine_interval(oi, prev_post_lo, prev_post_up);
    int out_lo, out_up;
    if (hidden == 0) {
        g.a_lower = bld.w_const[0];
        g.a_upper = bld.w_const[0];
        g.b_lower = bld.b_const[0];
        g.b_upper = bld.b_const[0];
        out_lo = ibp_lo;
        out_up = ibp_up;
    } else {
        auto [a_up, c_up] = bld.backsub(bld.w_const[oi], bld.b_const[oi], hidden - 1, true);
        auto [a_lo, c_lo] = bld.backsub(bld.w_const[oi], bld.b_const[oi], hidden - 1, false);
        g.a_lower = a_lo;
        g.a_upper = a_up;
        g.b_lower = c_lo;
        g.b_upper = c_up;
        const int crown_up = bld.concretize(a_up, c_up, lb, ub, true);
        const int crown_lo = bld.concretize(a_lo, c_lo, lb, ub, false);
        out_lo = tape.max_elem(crown_lo, ibp_lo);
        out_up = tape.min_elem(crown_up, ibp_up);
        for (std::size_t i = 0; i < tape.val(out_lo).size(); ++i) {
            bld.hasher.add_bit(tape.val(crown_lo).a[i] >= tape.val(ibp_lo).a[i]);
            bld.hasher.add_bit(tape.val(crown_up).a[i] <= tape.val(ibp_up).a[i]);
        }
    }
    if (params.output_activation == ndiff::OutputActivation::kSigmoid) {
        // exact monotone image; the hyperplanes keep pre-activation semantics
        out_lo = tape.sigmoid(out_lo);
        out_up = tape.sigmoid(out_up);
    }
    g.out_lower = out_lo;
    g.out_upper = out_up;
    g.mode_hash = bld.hasher.h;
    return g;
}

inline PropagateResult propagate_bounds(const MlpParams& params, const BoxBounds& box,
                                        const PropagateOptions& opts = {}) {
    box.validate();
    if (box.dim() != params.input_dim()) throw ShapeError("propagate_bounds: box dim");
    Tape tape;
    const int lb = tape.input(Mat::column(box.lower));
    const int ub = tape.input(Mat::column(box.upper));
    const BoundGraph g = build_bound_graph(tape, params, lb, ub, opts);

    PropagateResult res;
    res.output_lower = tape.val(g.out_lower).to_vec();
    res.output_upper = tape.val(g.out_upper).to_vec();
    res.linear.a_lower = tape.val(g.a_lower);
    res.linear.a_upper = tape.val(g.a_upper);
    res.linear.b_lower = tape.val(g.b_lower).to_vec();
    res.linear.b_upper = tape.val(g.b_upper).to_vec();
    for (std::size_t i = 0; i < g.layer_lower.size(); ++i) {
        res.layers.lower.push_back(tape.val(g.layer_lower[i]).to_vec());
        res.layers.upper.push_back(tape.val(g.layer_upper[i]).to_vec());
    }
    res.mode_hash = g.mode_hash;
    return res;
}

// Plain forward interval arithmetic; the diagnostic baseline.
inline std::pair<Vec, Vec> interval_bounds(const MlpParams& params, const BoxBounds& box) {
    box.validate();
    if (box.dim() != params.input_dim()) throw ShapeError("interval_bounds: box dim");
    Vec lo = box.lower, up = box.upper;
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& layer = params.layers[li];
        Vec nlo(layer.w.rows), nup(layer.w.rows);
        for (int r = 0; r < layer.w.rows; ++r) {
            double a = layer.b[r], b = layer.b[r];
            for (int c = 0; c < layer.w.cols; ++c) {
                const double w = layer.w(r, c);
                if (w >= 0.0) {
                    a += w * lo[c];
                    b += w * up[c];
                } else {
                    a += w * up[c];
                    b += w * lo[c];
                }
            }
            nlo[r] = a;
            nup[r] = b;
        }
        const bool last = li + 1 == params.layers.size();
        if (!last) {
            for (auto& v : nlo) v = std::max(v, 0.0);
            for (auto& v : nup) v = std::max(v, 0.0);
        } else if (params.output_activation == ndiff::OutputActivation::kSigmoid) {
            for (auto& v : nlo) v = 1.0 / (1.0 + std::exp(-v));
            for (auto& v : nup) v = 1.0 / (1.0 + std::exp(-v));
        }
        lo = std::move(nlo);
        up = std::move(nup);
    }
    return {lo, up};
}

// Mean over outputs of polytope width / interval width; zero-over-zero counts
// as 1. By construction the propagated box never exceeds the interval image.
inline double compare_with_interval(const MlpParams& params, const BoxBounds& box) {
    const PropagateResult poly = propagate_bounds(params, box);
    const auto [ilo, iup] = interval_bounds(params, box);
    double sum = 0.0;
    const int n = static_cast<int>(poly.output_lower.size());
    for (int i = 0; i < n; ++i) {
        const double pw = poly.output_upper[i] - poly.output_lower[i];
        const double iw = iup[i] - ilo[i];
        sum += iw > 0.0 ? pw / iw : 1.0;
    }
    return sum / n;
}

// Gradient of the concretized upper output bound with respect to the listed
// concrete (zero-width) input dimensions. Differentiates through the whole
// propagation, intermediate bounds included, with the binary alpha and every
// sign-based case split held locally constant.
inline Vec upper_bound_gradient(const MlpParams& params, const BoxBounds& box,
                                const std::vector<int>& concrete_dims, int output_index,
                                const PropagateOptions& opts = {}) {
    box.validate();
    if (box.dim() != params.input_dim()) throw ShapeError("upper_bound_gradient: box dim");
    if (output_index < 0 || output_index >= params.output_dim())
        throw ShapeError("upper_bound_gradient: output index");
    for (int d : concrete_dims)
        if (d < 0 || d >= box.dim() || box.lower[d] != box.upper[d])
            throw ConfigError("upper_bound_gradient: concrete dims must have zero width");

    Tape tape;
    const int lb = tape.input(Mat::column(box.lower));
    const int ub = tape.input(Mat::column(box.upper));
    const BoundGraph g = build_bound_graph(tape, params, lb, ub, opts);

    Mat selector(1, params.output_dim());
    selector(0, output_index) = 1.0;
    const int target = tape.matmul(tape.constant(selector), g.out_upper);
    tape.backward(target);

    const Mat& glb = tape.grad(lb);
    const Mat& gub = tape.grad(ub);
    Vec out(concrete_dims.size());
    for (std::size_t i = 0; i < concrete_dims.size(); ++i)
        out[i] = glb(concrete_dims[i], 0) + gub(concrete_dims[i], 0);
    return out;
}

}  // namespace mimolab::polytope
