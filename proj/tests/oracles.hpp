#pragma once

// Reference computations written independently of the library, used as
// ground truth by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

namespace oracle {

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

/// 0.5 KL(P||M) + 0.5 KL(Q||M), M = (P + Q) / 2.
inline double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

inline double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0) h -= p * std::log(p);
  if (p < 1) h -= (1 - p) * std::log(1 - p);
  return h;
}

/// Smoothed NLL of one row: target puts (1 - eps) on gold and eps/V on
/// every class.
inline double smoothed_nll(const std::vector<double>& logits, int gold, double eps) {
  const auto p = softmax(logits);
  const double V = static_cast<double>(logits.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double q = eps / V + (static_cast<int>(j) == gold ? 1 - eps : 0.0);
    loss -= q * std::log(p[j]);
  }
  return loss;
}

/// Counts n-grams by hand and combines them into corpus BLEU-4.
inline double bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
  double match[4] = {}, total[4] = {}, c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    c += hyps[s].size();
    r += refs[s].size();
    for (int n = 1; n <= 4; ++n) {
      std::map<std::vector<int>, int> hc, rc;
      for (int i = 0; i + n <= static_cast<int>(hyps[s].size()); ++i)
        hc[std::vector<int>(hyps[s].begin() + i, hyps[s].begin() + i + n)]++;
      for (int i = 0; i + n <= static_cast<int>(refs[s].size()); ++i)
        rc[std::vector<int>(refs[s].begin() + i, refs[s].begin() + i + n)]++;
      for (auto& [g, k] : hc) {
        match[n - 1] += std::min(k, rc.count(g) ? rc[g] : 0);
        total[n - 1] += k;
      }
    }
  }
  double lp = 0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0) return 0.0;
    lp += std::log(match[n] / total[n]) / 4;
  }
  const double bp = c > r ? 1.0 : std::exp(1 - r / c);
  return 100 * bp * std::exp(lp);
}

/// Leading eigenpairs of a symmetric matrix by power iteration with
/// deflation.
inline std::vector<std::pair<double, std::vector<double>>> top_eigen(std::vector<std::vector<double>> a,
                                                                     std::size_t k, int iters = 5000) {
  const std::size_t d = a.size();
  std::vector<std::pair<double, std::vector<double>>> out;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i * (c + 1) % 7);
    double lambda = 0;
    for (int it = 0; it < iters; ++it) {
      std::vector<double> w(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) w[i] += a[i][j] * v[j];
      double norm = 0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0) break;
      for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / norm;
      lambda = norm;
    }
    out.push_back({lambda, v});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) a[i][j] -= lambda * v[i] * v[j];
  }
  return out;
}

}  // namespace oracle
