#include "provenance/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string_view>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "provenance/errors.hpp"

namespace provenance {

namespace {

struct FilterTaps {
  int first = 0;
  std::vector<double> weights;
};

// One output sample's contributing source range and normalized weights.
std::vector<FilterTaps> triangle_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double support = std::max(scale, 1.0);
  std::vector<FilterTaps> taps(static_cast<std::size_t>(out_size));
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - support)));
    const int hi = std::min(in_size, static_cast<int>(std::ceil(center + support)));
    auto& t = taps[static_cast<std::size_t>(o)];
    double total = 0.0;
    for (int i = lo; i < hi; ++i) {
      const double w = std::max(0.0, 1.0 - std::abs(i + 0.5 - center) / support);
      if (t.weights.empty() && w == 0.0) {
        continue;
      }
      if (t.weights.empty()) {
        t.first = i;
      }
      t.weights.push_back(w);
      total += w;
    }
    while (!t.weights.empty() && t.weights.back() == 0.0) {
      t.weights.pop_back();
    }
    if (t.weights.empty()) {
      // Degenerate upscale edge: nearest source sample.
      t.first = std::clamp(static_cast<int>(center), 0, in_size - 1);
      t.weights.push_back(1.0);
      total = 1.0;
    }
    for (auto& w : t.weights) {
      w /= total;
    }
  }
  return taps;
}

}  // namespace

ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) {
    throw DecodeError("empty image byte stream");
  }
  cv::Mat mat;
  try {
    const cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    mat = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("image decode failed: ") + e.what());
  }
  if (mat.empty()) {
    throw DecodeError("image bytes could not be decoded");
  }
  if (mat.cols <= 0 || mat.rows <= 0) {
    throw DecodeError("zero-area image");
  }
  double max_level = 255.0;
  switch (mat.depth()) {
    case CV_8U:
      break;
    case CV_16U:
      max_level = 65535.0;
      break;
    default:
      throw DecodeError("unsupported sample depth");
  }
  const int src_channels = mat.channels();
  const int out_channels = src_channels <= 2 ? 1 : 3;
  ImageTensor out(mat.cols, mat.rows, out_channels);
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      for (int c = 0; c < out_channels; ++c) {
        // OpenCV stores BGR(A); flip to RGB.
        const int src_c = out_channels == 3 ? 2 - c : 0;
        double v = 0.0;
        if (mat.depth() == CV_8U) {
          v = mat.ptr<std::uint8_t>(y)[x * src_channels + src_c];
        } else {
          v = mat.ptr<std::uint16_t>(y)[x * src_channels + src_c];
        }
        out.at(x, y, c) = v / max_level;
      }
    }
  }
  return out;
}

ImageTensor to_grayscale(const ImageTensor& image) {
  if (image.channels == 1) {
    return image;
  }
  ImageTensor out(image.width, image.height, 1);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      out.at(x, y) = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
    }
  }
  return out;
}

ImageTensor resize(const ImageTensor& image, int width, int height) {
  if (width <= 0 || height <= 0 || image.width <= 0 || image.height <= 0) {
    throw InvalidArgument("resize requires positive dimensions");
  }
  if (width == image.width && height == image.height) {
    return image;
  }
  const auto xtaps = triangle_taps(image.width, width);
  const auto ytaps = triangle_taps(image.height, height);
  const int ch = image.channels;

  ImageTensor horizontal(width, image.height, ch);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto& t = xtaps[static_cast<std::size_t>(x)];
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < t.weights.size(); ++i) {
          acc += t.weights[i] * image.at(t.first + static_cast<int>(i), y, c);
        }
        horizontal.at(x, y, c) = acc;
      }
    }
  }
  ImageTensor out(width, height, ch);
  for (int y = 0; y < height; ++y) {
    const auto& t = ytaps[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < t.weights.size(); ++i) {
          acc += t.weights[i] * horizontal.at(x, t.first + static_cast<int>(i), c);
        }
        out.at(x, y, c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

ImageTensor center_crop(const ImageTensor& image, int width, int height) {
  if (width > image.width || height > image.height || width <= 0 || height <= 0) {
    throw InvalidArgument("crop window does not fit the image");
  }
  const int x0 = (image.width - width) / 2;
  const int y0 = (image.height - height) / 2;
  ImageTensor out(width, height, image.channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        out.at(x, y, c) = image.at(x0 + x, y0 + y, c);
      }
    }
  }
  return out;
}

ImageTensor preprocess(const ImageTensor& decoded, int target_side, bool gray) {
  if (target_side <= 0) {
    throw InvalidArgument("target side must be positive");
  }
  if (decoded.width <= 0 || decoded.height <= 0) {
    throw DecodeError("zero-area image");
  }
  const ImageTensor source = gray ? to_grayscale(decoded) : decoded;
  const int shorter = std::min(source.width, source.height);
  const auto scaled = [&](int side) {
    return std::max(target_side,
                    static_cast<int>(std::lround(static_cast<double>(side) * target_side / shorter)));
  };
  const int w = source.width == shorter ? target_side : scaled(source.width);
  const int h = source.height == shorter ? target_side : scaled(source.height);
  return center_crop(resize(source, w, h), target_side, target_side);
}

ImageTensor preprocess(std::span<const std::uint8_t> raw_bytes, int target_side, bool gray) {
  return preprocess(decode_image(raw_bytes), target_side, gray);
}

namespace {

cv::Mat to_mat8(const ImageTensor& image) {
  cv::Mat mat(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const int dst_c = image.channels == 3 ? 2 - c : 0;
        row[x * image.channels + dst_c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(image.at(x, y, c), 0.0, 1.0) * 255.0));
      }
    }
  }
  return mat;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_mat8(image), out)) {
    throw Error("png encoding failed");
  }
  return out;
}

std::vector<std::uint8_t> encode_pnm(const ImageTensor& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw InvalidArgument("pnm encoding needs 1 or 3 channels");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.values.size());
  for (const double v : image.values) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

std::string sniff_media_type(std::span<const std::uint8_t> bytes) {
  auto starts = [&](std::string_view magic) {
    return bytes.size() >= magic.size() && std::memcmp(bytes.data(), magic.data(), magic.size()) == 0;
  };
  if (starts("\x89PNG\r\n\x1a\n")) return "image/png";
  if (starts("\xff\xd8\xff")) return "image/jpeg";
  if (starts("BM")) return "image/bmp";
  if (starts("P5")) return "image/x-portable-graymap";
  if (starts("P6")) return "image/x-portable-pixmap";
  return {};
}

}  // namespace provenance
