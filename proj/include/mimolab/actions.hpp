#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mimolab/errors.hpp"

namespace mimolab::env {

using ActionIndex = int;
using UserSubset = std::vector<int>;  // strictly increasing user indices

inline std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / i;
    return r;
}

inline void validate_subset(const UserSubset& s, int num_users, int max_selected) {
    if (s.empty() || static_cast<int>(s.size()) > max_selected)
        throw CodecError("subset size out of range");
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < 0 || s[i] >= num_users) throw CodecError("user index out of range");
        if (i > 0 && s[i] <= s[i - 1]) throw CodecError("subset not strictly increasing");
    }
}

// |A| = sum_{i=1..max_selected} C(num_users, i)
inline int action_count(int num_users, int max_selected) {
    if (max_selected < 1 || max_selected > num_users)
        throw ConfigError("action_count: need 1 <= max_selected <= num_users");
    std::uint64_t total = 0;
    for (int i = 1; i <= max_selected; ++i) total += binomial(num_users, i);
    return static_cast<int>(total);
}

// Actions are ordered by subset size, then lexicographically within each size:
// all singletons, then all pairs {0,1},{0,2},... and so on.
inline ActionIndex encode_action(const UserSubset& s, int num_users, int max_selected) {
    validate_subset(s, num_users, max_selected);
    const int k = static_cast<int>(s.size());
    std::uint64_t index = 0;
    for (int sz = 1; sz < k; ++sz) index += binomial(num_users, sz);
    int prev = -1;
    for (int i = 0; i < k; ++i) {
        for (int v = prev + 1; v < s[i]; ++v) index += binomial(num_users - 1 - v, k - 1 - i);
        prev = s[i];
    }
    return static_cast<int>(index);
}

inline UserSubset decode_action(ActionIndex a, int num_users, int max_selected) {
    if (a < 0 || a >= action_count(num_users, max_selected))
        throw CodecError("action index out of range");
    std::uint64_t rem = static_cast<std::uint64_t>(a);
    int k = 1;
    while (rem >= binomial(num_users, k)) {
        rem -= binomial(num_users, k);
        ++k;
    }
    UserSubset s(k);
    int v = 0;
    for (int i = 0; i < k; ++i) {
        for (;; ++v) {
            const std::uint64_t block = binomial(num_users - 1 - v, k - 1 - i);
            if (rem < block) break;
            rem -= block;
        }
        s[i] = v++;
    }
    return s;
}

// Equidistant embedding of the discrete action set into [0,1]^D. The first
// |A| lattice points in lexicographic coordinate order carry actions; surplus
// points (n^D > |A|) stay unassigned and are never returned by knn.
struct ProtoLattice {
    int dims = 0;            // D
    int points_per_dim = 0;  // n
    int num_actions = 0;     // assigned lattice points
    std::vector<double> levels;
    std::vector<double> coords;  // num_actions x dims, row per action

    const double* point(ActionIndex a) const {
        return &coords[static_cast<std::size_t>(a) * dims];
    }
};

inline ProtoLattice build_lattice(int num_actions, int dims) {
    if (num_actions < 1 || dims < 1) throw ConfigError("build_lattice: positive sizes required");
    int n = 1;
    while (true) {
        std::uint64_t cap = 1;
        bool enough = false;
        for (int d = 0; d < dims; ++d) {
            cap *= static_cast<std::uint64_t>(n);
            if (cap >= static_cast<std::uint64_t>(num_actions)) {
                enough = true;
                break;
            }
        }
        if (enough) break;
        ++n;
    }
    ProtoLattice lat;
    lat.dims = dims;
    lat.points_per_dim = n;
    lat.num_actions = num_actions;
    if (n == 1) {
        lat.levels = {0.5};
    } else {
        lat.levels.resize(n);
        for (int i = 0; i < n; ++i) lat.levels[i] = static_cast<double>(i) / (n - 1);
    }
    lat.coords.resize(static_cast<std::size_t>(num_actions) * dims);
    for (int a = 0; a < num_actions; ++a) {
        // base-n digits, most significant digit = dim 0, so counting order is
        // lexicographic over coordinate tuples
        int rem = a;
        for (int d = dims - 1; d >= 0; --d) {
            lat.coords[static_cast<std::size_t>(a) * dims + d] = lat.levels[rem % n];
            rem /= n;
        }
    }
    return lat;
}

struct Neighbor {
    ActionIndex action;
    double distance;
};

// k nearest assigned lattice actions by Euclidean distance, ties broken by
// smaller action index.
inline std::vector<Neighbor> knn(const ProtoLattice& lat, const std::vector<double>& u, int k) {
    if (k < 1) throw ConfigError("knn: k must be >= 1");
    if (static_cast<int>(u.size()) != lat.dims) throw ShapeError("knn: proto point dims");
    std::vector<std::pair<double, int>> d2(lat.num_actions);
    for (int a = 0; a < lat.num_actions; ++a) {
        const double* p = lat.point(a);
        double s = 0.0;
        for (int d = 0; d < lat.dims; ++d) {
            const double diff = u[d] - p[d];
            s += diff * diff;
        }
        d2[a] = {s, a};
    }
    const int take = std::min(k, lat.num_actions);
    std::partial_sort(d2.begin(), d2.begin() + take, d2.end());
    std::vector<Neighbor> out(take);
    for (int i = 0; i < take; ++i) out[i] = {d2[i].second, std::sqrt(d2[i].first)};
    return out;
}

}  // namespace mimolab::env
