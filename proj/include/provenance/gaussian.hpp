#pragma once

#include <vector>

#include "provenance/image.hpp"

namespace provenance {

// Closed-form isotropic Gaussian density (1 / 2*pi*sigma^2) * exp(-(x^2+y^2) / 2*sigma^2).
double gaussian_density(double x, double y, double sigma);

// Smallest admissible kernel radius for `sigma`: ceil(3 * sigma), at least 1.
int min_kernel_radius(double sigma);

// Discrete 2-D kernel over offsets [-radius, radius]^2, renormalized to unit sum.
struct GaussianKernel {
  double sigma = 0.0;
  int radius = 0;
  std::vector<double> weights;  // (2r+1)^2, row-major, (dx, dy) = (-r, -r) first

  int side() const { return 2 * radius + 1; }
  double at(int dx, int dy) const {
    return weights[static_cast<std::size_t>((dy + radius) * side() + (dx + radius))];
  }
};

GaussianKernel gaussian_kernel(double sigma, int radius);

// Normalized 1-D factor of the kernel; the 2-D kernel is its outer product.
std::vector<double> gaussian_kernel_1d(double sigma, int radius);

// Ratio between the two blur scales of the difference-of-Gaussians edge map.
inline constexpr double kDogScaleRatio = 1.6;
inline constexpr double kDefaultEdgeSigma = 1.0;

enum class Convolution { separable, direct };

// Gaussian blur with symmetric (edge-duplicating) reflection at the border.
ImageTensor gaussian_blur(const ImageTensor& image, double sigma, Convolution mode = Convolution::separable);

// |blur(sigma) - blur(1.6 sigma)| divided by its maximum. One-channel input only.
ImageTensor edge_map(const ImageTensor& image, double sigma, Convolution mode = Convolution::separable);

}  // namespace provenance
