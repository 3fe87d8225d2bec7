#include "mfx/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>

#include "mfx/error.hpp"

namespace mfx {

namespace {

void check_lengths(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw InvalidArgument("correlation: series lengths differ (" + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()) + ")");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
            throw NumericError("correlation", "non-finite value at index " + std::to_string(i));
}

// Number of tied pairs within runs of equal values of a sorted range.
template <class It, class Eq>
std::uint64_t tied_pairs(It first, It last, Eq eq) {
    std::uint64_t total = 0, run = 1;
    for (It it = first; it != last; ++it) {
        if (it + 1 != last && eq(*it, *(it + 1))) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total;
}

// Merge sort counting swaps (discordant pairs among pairs untied in x).
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += mid - i;
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

}  // namespace

Coefficient kendall_tau(std::span<const double> x, std::span<const double> y) {
    check_lengths(x, y);
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;

    // Knight's algorithm: sort by (x, y), count ties, then count inversions in y.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x[order[i]];
        ys[i] = y[order[i]];
    }
    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const std::uint64_t n1 = tied_pairs(xs.begin(), xs.end(), [](double a, double b) { return a == b; });
    std::uint64_t n3 = 0;  // tied in both
    {
        std::uint64_t run = 1;
        for (std::size_t i = 0; i < n; ++i) {
            if (i + 1 < n && xs[i] == xs[i + 1] && ys[i] == ys[i + 1]) {
                ++run;
            } else {
                n3 += run * (run - 1) / 2;
                run = 1;
            }
        }
    }
    std::vector<double> buf(n);
    const std::uint64_t swaps = merge_count(ys, buf, 0, n);
    const std::uint64_t n2 = tied_pairs(ys.begin(), ys.end(), [](double a, double b) { return a == b; });
    if (n1 == n0 || n2 == n0) return std::nullopt;

    // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
    const double diff = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                        static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
    return diff / std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

Coefficient pearson(std::span<const double> x, std::span<const double> y) {
    check_lengths(x, y);
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Coefficient spearman(std::span<const double> x, std::span<const double> y) {
    check_lengths(x, y);
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

void validate_series(const PairedSeries& s) {
    if (s.x.size() != s.y.size() || s.x.size() != s.ids.size())
        throw InvalidArgument("paired series: x, y and ids must have equal length");
    if (s.x.size() < 2) throw InvalidArgument("paired series needs at least 2 candidates");
    std::set<std::string> unique(s.ids.begin(), s.ids.end());
    if (unique.size() != s.ids.size()) throw InvalidArgument("paired series: duplicate candidate ids");
}

}  // namespace mfx
