#pragma once

#include <utility>
#include <vector>

#include "t2i/tensor.h"

namespace t2i {

// Pluggable scorer standing in for a pretrained classification backbone:
// class probabilities for the score metric, penultimate features for the
// distribution distance.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::vector<float> class_probs(const Tensor& image) const = 0;
  virtual std::vector<float> features(const Tensor& image) const = 0;
};

struct GaussianStats {
  std::vector<float> mean;
  std::vector<float> cov;  // F x F row-major, symmetrized
  int dim() const { return static_cast<int>(mean.size()); }
};

// exp(mean KL(conditional || marginal)) per split; returns (mean, std)
// over splits.
std::pair<double, double> inception_score(
    const std::vector<std::vector<float>>& probs, int splits = 10);

// Sample mean and 1/(N-1) covariance, symmetrized.
GaussianStats gaussian_stats(const std::vector<std::vector<float>>& features);

// S with S*S ~= A*B for symmetric PSD A, B, via the symmetric reduction
// A^{1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}.
std::vector<double> matrix_sqrt_product(const std::vector<double>& a,
                                        const std::vector<double>& b, int f);

// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), clamped at 0.
double fid(const GaussianStats& real, const GaussianStats& gen);

}  // namespace t2i
