#include "stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>

#include "error.hpp"

namespace tactwin {

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 10000;

// P(a, x) by its power series; converges quickly for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the Legendre continued fraction (modified Lentz), for x >= a + 1.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

struct ExactDistribution {
  std::vector<std::int64_t> sorted_stats;  // every enumerated statistic, ascending
};

using DistributionKey = std::vector<std::vector<std::int64_t>>;

std::mutex cache_mutex;
std::map<DistributionKey, std::shared_ptr<const ExactDistribution>> cache;

double distinct_permutations(const std::vector<std::int64_t>& sorted) {
  double count = std::tgamma(static_cast<double>(sorted.size()) + 1.0);
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    count /= std::tgamma(static_cast<double>(j - i) + 1.0);
    i = j;
  }
  return std::round(count);
}

void enumerate(const DistributionKey& blocks, std::size_t b, std::vector<std::int64_t>& sums,
               std::vector<std::int64_t>& out) {
  if (b == blocks.size()) {
    std::int64_t s = 0;
    for (std::int64_t c : sums) s += c * c;
    out.push_back(s);
    return;
  }
  std::vector<std::int64_t> perm = blocks[b];
  do {
    for (std::size_t j = 0; j < perm.size(); ++j) sums[j] += perm[j];
    enumerate(blocks, b + 1, sums, out);
    for (std::size_t j = 0; j < perm.size(); ++j) sums[j] -= perm[j];
  } while (std::next_permutation(perm.begin(), perm.end()));
}

// Distribution of sum_j (sum_b 2*rank_bj)^2 over independent uniform
// permutations within each block. The first block stays fixed: relabelling
// columns leaves the statistic unchanged.
std::shared_ptr<const ExactDistribution> exact_distribution(DistributionKey key) {
  std::sort(key.begin(), key.end());
  {
    std::lock_guard lock(cache_mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto dist = std::make_shared<ExactDistribution>();
  std::vector<std::int64_t> sums = key.front();
  enumerate(key, 1, sums, dist->sorted_stats);
  std::sort(dist->sorted_stats.begin(), dist->sorted_stats.end());
  std::lock_guard lock(cache_mutex);
  if (cache.size() > 64) cache.clear();
  return cache.emplace(std::move(key), std::move(dist)).first->second;
}

void validate_data(const std::vector<std::vector<double>>& data) {
  if (data.size() < 2) throw Error(ErrorCode::Validation, "Friedman test needs at least two blocks");
  const std::size_t k = data.front().size();
  if (k < 2) throw Error(ErrorCode::Validation, "Friedman test needs at least two treatments");
  for (const auto& row : data) {
    if (row.size() != k) throw Error(ErrorCode::Validation, "Friedman data rows have different lengths");
    for (double v : row) {
      if (!std::isfinite(v)) throw Error(ErrorCode::Validation, "Friedman data must be finite");
    }
  }
}

DistributionKey doubled_rank_blocks(const std::vector<std::vector<double>>& data) {
  DistributionKey blocks;
  for (const auto& row : data) {
    const auto ranks = average_ranks(row);
    std::vector<std::int64_t> doubled;
    for (double r : ranks) doubled.push_back(std::llround(2.0 * r));
    std::sort(doubled.begin(), doubled.end());
    blocks.push_back(std::move(doubled));
  }
  return blocks;
}

}  // namespace

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw Error(ErrorCode::InvalidArgument, "incomplete gamma needs a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return x < a + 1.0 ? gamma_p_series(a, x) : 1.0 - gamma_q_fraction(a, x);
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw Error(ErrorCode::InvalidArgument, "incomplete gamma needs a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return x < a + 1.0 ? 1.0 - gamma_p_series(a, x) : gamma_q_fraction(a, x);
}

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw Error(ErrorCode::InvalidArgument, "chi-square needs df > 0");
  if (x <= 0.0) return 1.0;
  return std::clamp(regularized_gamma_q(df / 2.0, x / 2.0), 0.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = avg;
    i = j;
  }
  return ranks;
}

std::string_view p_value_method_name(PValueMethod m) noexcept {
  switch (m) {
    case PValueMethod::Auto: return "auto";
    case PValueMethod::ChiSquare: return "chi-square";
    case PValueMethod::Exact: return "exact";
  }
  return "?";
}

double exact_enumeration_size(const std::vector<std::vector<double>>& data) {
  validate_data(data);
  const auto blocks = doubled_rank_blocks(data);
  double size = 1.0;
  for (std::size_t b = 1; b < blocks.size(); ++b) size *= distinct_permutations(blocks[b]);
  return size;
}

FriedmanResult friedman(const std::vector<std::vector<double>>& data, PValueMethod method, bool tie_correction) {
  validate_data(data);
  const std::size_t n = data.size();
  const std::size_t k = data.front().size();
  const double nd = static_cast<double>(n);
  const double kd = static_cast<double>(k);

  FriedmanResult r;
  r.n_blocks = n;
  r.k_treatments = k;
  r.df = static_cast<int>(k) - 1;
  r.rank_sums.assign(k, 0.0);
  double tie_sum = 0.0;
  for (const auto& row : data) {
    const auto ranks = average_ranks(row);
    for (std::size_t j = 0; j < k; ++j) r.rank_sums[j] += ranks[j];
    std::vector<double> sorted(row);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < k;) {
      std::size_t j = i;
      while (j < k && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_sum += t * t * t - t;
      i = j;
    }
  }
  double sum_sq = 0.0;
  for (double rs : r.rank_sums) sum_sq += rs * rs;
  double chi2 = 12.0 / (nd * kd * (kd + 1.0)) * sum_sq - 3.0 * nd * (kd + 1.0);
  if (tie_correction) {
    const double denom = 1.0 - tie_sum / (nd * (kd * kd * kd - kd));
    chi2 = denom > 0.0 ? chi2 / denom : 0.0;
  }
  // Rounding can leave a tiny negative value when all ranks tie.
  r.chi2 = chi2 < 1e-12 ? 0.0 : chi2;

  PValueMethod use = method;
  if (use != PValueMethod::ChiSquare) {
    const double size = exact_enumeration_size(data);
    if (size > kExactEnumerationLimit) {
      if (use == PValueMethod::Exact) {
        throw Error(ErrorCode::Config, "exact Friedman distribution too large to enumerate");
      }
      use = PValueMethod::ChiSquare;
    } else {
      use = PValueMethod::Exact;
    }
  }
  r.method = use;
  if (use == PValueMethod::ChiSquare) {
    r.p = chi_square_sf(r.chi2, static_cast<double>(r.df));
  } else {
    // Observed statistic in the doubled-rank integer domain: exact compare.
    std::int64_t observed = 0;
    for (double rs : r.rank_sums) {
      const std::int64_t c = std::llround(2.0 * rs);
      observed += c * c;
    }
    const auto dist = exact_distribution(doubled_rank_blocks(data));
    const auto& s = dist->sorted_stats;
    const auto at_least = s.end() - std::lower_bound(s.begin(), s.end(), observed);
    r.p = static_cast<double>(at_least) / static_cast<double>(s.size());
  }
  return r;
}

}  // namespace tactwin
