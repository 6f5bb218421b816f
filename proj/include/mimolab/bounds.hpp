#pragma once

#include <cstddef>

#include "mimolab/errors.hpp"
#include "mimolab/linalg.hpp"

namespace mimolab::polytope {

// Per-dimension interval box. Concrete dimensions carry lower == upper.
struct BoxBounds {
    Vec lower;
    Vec upper;

    int dim() const { return static_cast<int>(lower.size()); }

    void validate() const {
        if (lower.size() != upper.size()) throw ShapeError("box: lower/upper length mismatch");
        for (std::size_t i = 0; i < lower.size(); ++i)
            if (!(lower[i] <= upper[i])) throw ConfigError("box: lower > upper");
    }

    static BoxBounds point(const Vec& x) { return {x, x}; }
};

}  // namespace mimolab::polytope
