#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "scl/memory.hpp"
#include "scl/tensor.hpp"

namespace scl::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

inline std::vector<double> random_unit(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(d);
    double n = 0.0;
    for (auto& x : v) {
        x = dist(rng);
        n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

inline std::vector<double> basis(std::size_t d, std::size_t k) {
    std::vector<double> v(d, 0.0);
    v[k] = 1.0;
    return v;
}

// Banks whose mixture rows are exactly `rows`; global and local stay cold.
inline MemoryBanks mixture_banks(const std::vector<std::vector<double>>& rows, std::size_t stripes = 1) {
    const std::size_t n = rows.size(), d = rows.front().size();
    MemoryBanks b(n, d, stripes);
    std::vector<double> mixture;
    for (const auto& r : rows) mixture.insert(mixture.end(), r.begin(), r.end());
    b.restore(std::vector<double>(n * d, 0.0), std::vector<double>(n * d * stripes, 0.0), std::move(mixture),
              std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 1));
    return b;
}

}  // namespace scl::testing
