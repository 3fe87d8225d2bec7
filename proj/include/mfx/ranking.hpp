#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mfx {

// Paired metric/gain values over a set of candidates.
struct PairedSeries {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<std::string> ids;
};

// nullopt marks a degenerate series (constant x or y, or fewer than 2 points).
using Coefficient = std::optional<double>;

// Kendall tau-b, (C - D) / sqrt((n0 - n1)(n0 - n2)), in O(n log n).
Coefficient kendall_tau(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average-tie ranks.
Coefficient spearman(std::span<const double> x, std::span<const double> y);
Coefficient pearson(std::span<const double> x, std::span<const double> y);

inline Coefficient kendall_tau(const PairedSeries& s) { return kendall_tau(s.x, s.y); }
inline Coefficient spearman(const PairedSeries& s) { return spearman(s.x, s.y); }
inline Coefficient pearson(const PairedSeries& s) { return pearson(s.x, s.y); }

// 1-based ranks with ties sharing the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

void validate_series(const PairedSeries& s);

}  // namespace mfx
