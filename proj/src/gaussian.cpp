#include "provenance/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "provenance/errors.hpp"

namespace provenance {

namespace {

// Maps any integer coordinate into [0, n) by mirroring about the outer
// pixel edges: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
int reflect(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) {
    m += period;
  }
  return m < n ? m : period - 1 - m;
}

void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("gaussian sigma must be positive, got " + std::to_string(sigma));
  }
}

ImageTensor blur_separable(const ImageTensor& image, double sigma) {
  const int radius = min_kernel_radius(sigma);
  const auto taps = gaussian_kernel_1d(sigma, radius);
  const int ch = image.channels;
  ImageTensor horizontal(image.width, image.height, ch);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          acc += taps[static_cast<std::size_t>(d + radius)] * image.at(reflect(x + d, image.width), y, c);
        }
        horizontal.at(x, y, c) = acc;
      }
    }
  }
  ImageTensor out(image.width, image.height, ch);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          acc += taps[static_cast<std::size_t>(d + radius)] * horizontal.at(x, reflect(y + d, image.height), c);
        }
        out.at(x, y, c) = acc;
      }
    }
  }
  return out;
}

ImageTensor blur_direct(const ImageTensor& image, double sigma) {
  const auto kernel = gaussian_kernel(sigma, min_kernel_radius(sigma));
  const int r = kernel.radius;
  ImageTensor out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          const int sy = reflect(y + dy, image.height);
          for (int dx = -r; dx <= r; ++dx) {
            acc += kernel.at(dx, dy) * image.at(reflect(x + dx, image.width), sy, c);
          }
        }
        out.at(x, y, c) = acc;
      }
    }
  }
  return out;
}

}  // namespace

double gaussian_density(double x, double y, double sigma) {
  check_sigma(sigma);
  const double two_sigma_sq = 2.0 * sigma * sigma;
  return std::exp(-(x * x + y * y) / two_sigma_sq) / (std::numbers::pi * two_sigma_sq);
}

int min_kernel_radius(double sigma) {
  check_sigma(sigma);
  return std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
}

GaussianKernel gaussian_kernel(double sigma, int radius) {
  check_sigma(sigma);
  if (radius < min_kernel_radius(sigma)) {
    throw InvalidArgument("kernel radius " + std::to_string(radius) + " is below 3*sigma for sigma " +
                          std::to_string(sigma));
  }
  GaussianKernel k;
  k.sigma = sigma;
  k.radius = radius;
  k.weights.resize(static_cast<std::size_t>(k.side()) * static_cast<std::size_t>(k.side()));
  double total = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double w = gaussian_density(dx, dy, sigma);
      k.weights[static_cast<std::size_t>((dy + radius) * k.side() + (dx + radius))] = w;
      total += w;
    }
  }
  for (auto& w : k.weights) {
    w /= total;
  }
  return k;
}

std::vector<double> gaussian_kernel_1d(double sigma, int radius) {
  check_sigma(sigma);
  if (radius < min_kernel_radius(sigma)) {
    throw InvalidArgument("kernel radius is below 3*sigma");
  }
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int d = -radius; d <= radius; ++d) {
    const double w = std::exp(-(static_cast<double>(d) * d) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(d + radius)] = w;
    total += w;
  }
  for (auto& w : taps) {
    w /= total;
  }
  return taps;
}

ImageTensor gaussian_blur(const ImageTensor& image, double sigma, Convolution mode) {
  return mode == Convolution::separable ? blur_separable(image, sigma) : blur_direct(image, sigma);
}

ImageTensor edge_map(const ImageTensor& image, double sigma, Convolution mode) {
  if (image.channels != 1) {
    throw InvalidArgument("edge map requires a one-channel image, got " + std::to_string(image.channels));
  }
  const auto fine = gaussian_blur(image, sigma, mode);
  const auto coarse = gaussian_blur(image, kDogScaleRatio * sigma, mode);
  ImageTensor out(image.width, image.height, 1);
  double peak = 0.0;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = std::abs(fine.values[i] - coarse.values[i]);
    peak = std::max(peak, out.values[i]);
  }
  // Below this the difference is rounding noise from the two blurs, e.g. on a
  // constant image, and rescaling would amplify it to full range.
  constexpr double kFlatThreshold = 1e-12;
  if (peak < kFlatThreshold) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (auto& v : out.values) {
    v /= peak;
  }
  return out;
}

}  // namespace provenance
