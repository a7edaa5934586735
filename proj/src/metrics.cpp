#include "t2i/metrics.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace t2i {

namespace {
constexpr double kKlFloor = 1e-12;

using Mat = Eigen::MatrixXd;

Mat to_mat(const std::vector<double>& v, int f) {
  Mat m(f, f);
  for (int i = 0; i < f; ++i)
    for (int j = 0; j < f; ++j) m(i, j) = v[i * f + j];
  return m;
}

// Symmetric PSD square root (and optional pseudo-inverse root) via
// eigendecomposition; small negative eigenvalues are clamped to zero.
void psd_sqrt(const Mat& a, Mat* root, Mat* inv_root) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  double scale = std::max(ev.cwiseAbs().maxCoeff(), 1.0);
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-6 * scale)
      throw InputError("matrix_sqrt_product: input is not PSD (eigenvalue " +
                       std::to_string(ev(i)) + ")");
    ev(i) = std::max(ev(i), 0.0);
  }
  Eigen::VectorXd sq = ev.cwiseSqrt();
  *root = es.eigenvectors() * sq.asDiagonal() * es.eigenvectors().transpose();
  if (inv_root) {
    Eigen::VectorXd inv(sq.size());
    double tol = 1e-12 * std::max(sq.maxCoeff(), 1.0);
    for (int i = 0; i < sq.size(); ++i)
      inv(i) = sq(i) > tol ? 1.0 / sq(i) : 0.0;
    *inv_root =
        es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  }
}

}  // namespace

std::pair<double, double> inception_score(
    const std::vector<std::vector<float>>& probs, int splits) {
  if (splits < 1) throw InputError("inception_score: splits must be >= 1");
  int n = static_cast<int>(probs.size());
  if (n < splits)
    throw InputError("inception_score: need at least one sample per split");
  int c = static_cast<int>(probs[0].size());
  for (const auto& p : probs)
    if (static_cast<int>(p.size()) != c)
      throw DimensionError("inception_score: inconsistent class count");
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    int lo = s * n / splits, hi = (s + 1) * n / splits;
    std::vector<double> marginal(c, 0.0);
    for (int i = lo; i < hi; ++i)
      for (int j = 0; j < c; ++j) marginal[j] += probs[i][j];
    for (auto& v : marginal) v /= (hi - lo);
    double mean_kl = 0.0;
    for (int i = lo; i < hi; ++i) {
      double kl = 0.0;
      for (int j = 0; j < c; ++j) {
        double p = probs[i][j];
        if (p <= 0.0) continue;
        kl += p * (std::log(std::max(p, kKlFloor)) -
                   std::log(std::max(marginal[j], kKlFloor)));
      }
      mean_kl += kl;
    }
    mean_kl /= (hi - lo);
    scores.push_back(std::exp(mean_kl));
  }
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= scores.size();
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  double stddev = scores.size() > 1 ? std::sqrt(var / scores.size()) : 0.0;
  return {mean, stddev};
}

GaussianStats gaussian_stats(const std::vector<std::vector<float>>& features) {
  int n = static_cast<int>(features.size());
  if (n < 2) throw InputError("gaussian_stats: need at least 2 samples");
  int f = static_cast<int>(features[0].size());
  GaussianStats st;
  st.mean.assign(f, 0.0f);
  st.cov.assign(static_cast<size_t>(f) * f, 0.0f);
  std::vector<double> mean(f, 0.0);
  for (const auto& x : features) {
    if (static_cast<int>(x.size()) != f)
      throw DimensionError("gaussian_stats: inconsistent feature dims");
    for (int i = 0; i < f; ++i) mean[i] += x[i];
  }
  for (int i = 0; i < f; ++i) {
    mean[i] /= n;
    st.mean[i] = static_cast<float>(mean[i]);
  }
  std::vector<double> cov(static_cast<size_t>(f) * f, 0.0);
  for (const auto& x : features)
    for (int i = 0; i < f; ++i)
      for (int j = 0; j < f; ++j)
        cov[i * f + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
  for (int i = 0; i < f; ++i)
    for (int j = 0; j < f; ++j) {
      double v = cov[i * f + j] / (n - 1);
      double vt = cov[j * f + i] / (n - 1);
      st.cov[i * f + j] = static_cast<float>(0.5 * (v + vt));
    }
  return st;
}

std::vector<double> matrix_sqrt_product(const std::vector<double>& a,
                                        const std::vector<double>& b, int f) {
  if (static_cast<int>(a.size()) != f * f ||
      static_cast<int>(b.size()) != f * f)
    throw DimensionError("matrix_sqrt_product: size mismatch");
  Mat A = to_mat(a, f), B = to_mat(b, f);
  Mat ra, ira;
  psd_sqrt(A, &ra, &ira);
  Mat inner = ra * B * ra;
  Mat rinner;
  psd_sqrt(inner, &rinner, nullptr);
  Mat S = ra * rinner * ira;
  std::vector<double> out(static_cast<size_t>(f) * f);
  for (int i = 0; i < f; ++i)
    for (int j = 0; j < f; ++j) out[i * f + j] = S(i, j);
  return out;
}

double fid(const GaussianStats& real, const GaussianStats& gen) {
  int f = real.dim();
  if (gen.dim() != f) throw DimensionError("fid: feature dims differ");
  double mean_term = 0.0;
  for (int i = 0; i < f; ++i) {
    double d = static_cast<double>(real.mean[i]) - gen.mean[i];
    mean_term += d * d;
  }
  std::vector<double> a(real.cov.begin(), real.cov.end());
  std::vector<double> b(gen.cov.begin(), gen.cov.end());
  auto s = matrix_sqrt_product(a, b, f);
  double trace = 0.0;
  for (int i = 0; i < f; ++i)
    trace += a[i * f + i] + b[i * f + i] - 2.0 * s[i * f + i];
  double val = mean_term + trace;
  return val < 0.0 ? 0.0 : val;
}

}  // namespace t2i
