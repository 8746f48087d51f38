#pragma once

// Rank statistics: Friedman's two-way ANOVA by ranks and the chi-square
// survival function it is referred to.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace tactwin {

// Regularized incomplete gamma functions, absolute accuracy ~1e-14.
double regularized_gamma_p(double a, double x);
double regularized_gamma_q(double a, double x);

// Upper tail P(X >= x) of a chi-square variable with `df` degrees of freedom.
double chi_square_sf(double x, double df);

// Ascending ranks, ties share their average rank (1-based).
std::vector<double> average_ranks(std::span<const double> values);

enum class PValueMethod {
  Auto,       // Exact when enumeration is tractable, otherwise ChiSquare
  ChiSquare,  // asymptotic, df = k - 1
  Exact,      // permutation distribution of the rank sums, conditional on ties
};

std::string_view p_value_method_name(PValueMethod m) noexcept;

// Upper bound on the permutations Exact is allowed to enumerate.
inline constexpr double kExactEnumerationLimit = 2e6;

struct FriedmanResult {
  double chi2 = 0.0;
  int df = 0;
  double p = 1.0;
  std::size_t n_blocks = 0;
  std::size_t k_treatments = 0;
  PValueMethod method = PValueMethod::ChiSquare;  // method actually used
  std::vector<double> rank_sums;
};

// `data` is n_blocks rows x k_treatments columns. Throws Validation when
// n < 2, k < 2, rows are ragged or a value is not finite. Exact requested on
// an intractable problem throws Config.
FriedmanResult friedman(const std::vector<std::vector<double>>& data,
                        PValueMethod method = PValueMethod::Auto, bool tie_correction = false);

// Number of block arrangements Exact would enumerate for this data.
double exact_enumeration_size(const std::vector<std::vector<double>>& data);

}  // namespace tactwin
