#pragma once

#include <functional>
#include <vector>

#include "deblur/autograd.hpp"
#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"

namespace deblur {

// Compares analytic gradients against central finite differences in double
// precision. `build` reconstructs the forward pass on a fresh tape, reading
// every checked tensor through tape.param(); it must be deterministic.
// Coordinates are subsampled (seeded) above max_coords per tensor.
// Returns max over sampled coordinates of
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const std::function<int(DTape&)>& build,
                         std::vector<ParamT<double>*> wrt, double eps = 1e-5,
                         int max_coords = 64, std::uint64_t seed = 99) {
    for (auto* p : wrt) p->zero_grad();
    {
        DTape tape;
        int loss = build(tape);
        if (tape.val(loss).numel() != 1) throw UsageError("grad_check: loss must be scalar");
        tape.backward(loss);
    }
    auto eval = [&]() {
        DTape tape;
        return tape.val(build(tape)).data[0];
    };
    Rng rng(seed);
    double worst = 0.0;
    for (auto* p : wrt) {
        const std::size_t n = p->value.numel();
        std::vector<std::size_t> coords;
        if (int(n) <= max_coords) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_index(n));
        }
        for (std::size_t c : coords) {
            const double orig = p->value.data[c];
            p->value.data[c] = orig + eps;
            const double fp = eval();
            p->value.data[c] = orig - eps;
            const double fm = eval();
            p->value.data[c] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = p->grad.data[c];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

} // namespace deblur
