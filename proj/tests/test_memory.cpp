#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "scl/memory.hpp"
#include "scl/tensor.hpp"
#include "test_support.hpp"

using namespace scl;
using scl::testing::basis;
using scl::testing::random_unit;

namespace {

constexpr double kHalf = 0.70710678118654752;

std::vector<double> repeat(const std::vector<double>& v, std::size_t n) {
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), v.begin(), v.end());
    return out;
}

void check_row(std::span<const double> row, const std::vector<double>& expected, double tol = 1e-12) {
    REQUIRE(row.size() == expected.size());
    for (std::size_t k = 0; k < row.size(); ++k) CHECK(std::abs(row[k] - expected[k]) <= tol);
}

}  // namespace

TEST_CASE("init_banks") {
    const MemoryBanks b = init_banks(4, 2, 8);
    CHECK(b.size() == 4);
    CHECK(b.global_data().size() == 4 * 2);
    CHECK(b.local_data().size() == 4 * 8 * 2);
    CHECK(b.mixture_data().size() == 4 * 2);
    for (std::size_t i = 0; i < 4; ++i) {
        check_row(b.mixture(i), {0.0, 0.0}, 0.0);
        CHECK_FALSE(b.global_initialized(i));
        CHECK_FALSE(b.local_initialized(i));
        CHECK_FALSE(b.mixture_initialized(i));
    }
}

TEST_CASE("update_anchor_global") {
    MemoryBanks b = init_banks(3, 4, 2);
    b.update_anchor_global(1, basis(4, 0));
    check_row(b.global(1), basis(4, 0));
    CHECK(b.global_initialized(1));

    b.update_anchor_global(1, basis(4, 0));
    check_row(b.global(1), basis(4, 0));

    b.update_anchor_global(1, basis(4, 1));
    check_row(b.global(1), {kHalf, kHalf, 0.0, 0.0});

    CHECK_THROWS_AS(b.update_anchor_global(3, basis(4, 0)), std::out_of_range);
}

TEST_CASE("update_anchor_local") {
    MemoryBanks b = init_banks(2, 3, 8);
    b.update_anchor_local(0, repeat(basis(3, 0), 8));
    for (std::size_t j = 0; j < 8; ++j) check_row(b.local(0, j), basis(3, 0));
    CHECK(b.local_initialized(0));

    b.update_anchor_local(0, repeat(basis(3, 0), 8));
    for (std::size_t j = 0; j < 8; ++j) check_row(b.local(0, j), basis(3, 0));

    MemoryBanks two = init_banks(1, 2, 2);
    two.update_anchor_local(0, std::vector<double>{1.0, 0.0, 1.0, 0.0});
    two.update_anchor_local(0, std::vector<double>{0.0, 1.0, 1.0, 0.0});
    check_row(two.local(0, 0), {kHalf, kHalf});
    check_row(two.local(0, 1), {1.0, 0.0});

    CHECK_THROWS_AS(b.update_anchor_local(2, repeat(basis(3, 0), 8)), std::out_of_range);
}

TEST_CASE("update_mixture_positives") {
    MemoryBanks b = init_banks(4, 2, 1);
    const std::vector<std::size_t> k{2};
    b.update_mixture_positives(k, basis(2, 0), {});
    check_row(b.mixture(2), {1.0, 0.0});
    MemoryBanks c = init_banks(4, 2, 1);
    c.update_mixture_positives(k, basis(2, 0), basis(2, 1));
    check_row(c.mixture(2), {kHalf, kHalf});

    MemoryBanks fixed = init_banks(2, 3, 1);
    const auto m = std::vector<double>{0.0, 0.6, 0.8};
    const std::vector<std::size_t> k0{0};
    fixed.update_mixture_positives(k0, m, m);
    fixed.update_mixture_positives(k0, m, m);
    check_row(fixed.mixture(0), m);

    MemoryBanks pair = init_banks(3, 2, 1);
    const std::vector<std::size_t> both{0, 2};
    pair.update_mixture_positives(both, basis(2, 0), basis(2, 1));
    check_row(pair.mixture(0), {kHalf, kHalf});
    check_row(pair.mixture(2), {kHalf, kHalf});
    check_row(pair.mixture(1), {0.0, 0.0}, 0.0);

    const std::vector<std::size_t> bad{1, 5};
    CHECK_THROWS_AS(pair.update_mixture_positives(bad, basis(2, 0), basis(2, 1)), std::out_of_range);
    CHECK_THROWS(pair.update_mixture_positives({}, basis(2, 0), basis(2, 1)));
}

TEST_CASE("random updates keep touched rows unit-norm and leave others bit-unchanged") {
    std::mt19937_64 rng(21);
    const std::size_t n = 30, d = 16, nl = 4;
    MemoryBanks b = init_banks(n, d, nl);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int step = 0; step < 300; ++step) {
        const MemoryBanks before = b;
        const std::size_t anchor = pick(rng);
        std::set<std::size_t> positives{anchor};
        while (positives.size() < 4) positives.insert(pick(rng));
        const std::vector<std::size_t> kplus(positives.begin(), positives.end());
        std::vector<double> stripes;
        for (std::size_t j = 0; j < nl; ++j) {
            const auto s = random_unit(d, rng);
            stripes.insert(stripes.end(), s.begin(), s.end());
        }
        b.update_anchor_global(anchor, random_unit(d, rng));
        b.update_anchor_local(anchor, stripes);
        b.update_mixture_positives(kplus, random_unit(d, rng), random_unit(d, rng));

        for (std::size_t i = 0; i < n; ++i) {
            const bool is_anchor = i == anchor;
            const bool is_positive = positives.count(i) > 0;
            auto eq = [](std::span<const double> x, std::span<const double> y) {
                return std::equal(x.begin(), x.end(), y.begin(), y.end());
            };
            if (is_anchor) {
                CHECK(std::abs(l2_norm(b.global(i)) - 1.0) < 1e-6);
                for (std::size_t j = 0; j < nl; ++j) CHECK(std::abs(l2_norm(b.local(i, j)) - 1.0) < 1e-6);
            } else {
                CHECK(eq(b.global(i), before.global(i)));
                CHECK(eq(b.local(i), before.local(i)));
            }
            if (is_positive) {
                CHECK(std::abs(l2_norm(b.mixture(i)) - 1.0) < 1e-6);
            } else {
                CHECK(eq(b.mixture(i), before.mixture(i)));
            }
        }
    }
}

TEST_CASE("mixture update is order-independent across distinct positives") {
    std::mt19937_64 rng(5);
    MemoryBanks a = init_banks(10, 8, 1);
    const std::vector<std::size_t> warm{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    a.update_mixture_positives(warm, random_unit(8, rng), random_unit(8, rng));
    MemoryBanks b = a;
    const auto vg = random_unit(8, rng);
    const auto vl = random_unit(8, rng);
    const std::vector<std::size_t> fwd{1, 4, 7, 9}, rev{9, 7, 4, 1};
    a.update_mixture_positives(fwd, vg, vl);
    b.update_mixture_positives(rev, vg, vl);
    CHECK(a == b);
}
