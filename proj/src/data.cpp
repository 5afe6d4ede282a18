#include "swwae/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace swwae {

namespace {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzFile = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

/// Whole (decompressed) file contents; gzread passes plain files through.
std::vector<unsigned char> slurp(const std::string& path) {
  GzFile f(gzopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f.get(), buf, sizeof buf)) > 0) bytes.insert(bytes.end(), buf, buf + n);
  if (n < 0) throw std::runtime_error("read error in " + path);
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

std::vector<unsigned char> read_idx(const std::string& path, std::uint32_t magic,
                                    std::vector<std::size_t>& dims) {
  const auto bytes = slurp(path);
  const std::size_t rank = magic & 0xff;
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < 4 || be32(bytes, 0) != magic) {
    char want[16];
    std::snprintf(want, sizeof want, "0x%08x", magic);
    throw std::runtime_error(path + ": bad magic, expected " + want);
  }
  if (bytes.size() < header) throw std::runtime_error(path + ": truncated header");
  std::size_t payload = 1;
  dims.clear();
  for (std::size_t i = 0; i < rank; ++i) {
    dims.push_back(be32(bytes, 4 + 4 * i));
    payload *= dims.back();
  }
  if (bytes.size() - header != payload) {
    throw std::runtime_error(path + ": expected " + std::to_string(header + payload) +
                             " bytes, got " + std::to_string(bytes.size()));
  }
  return {bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end()};
}

void put_be32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::vector<std::size_t> dims;
  const auto pixels = read_idx(images_path, 0x00000803, dims);
  Dataset ds;
  ds.name = images_path;
  ds.images = Tensor({dims[0], 1, dims[1], dims[2]});
  for (std::size_t i = 0; i < pixels.size(); ++i) ds.images[i] = pixels[i] / 255.0;
  if (labels_path.empty()) return ds;

  std::vector<std::size_t> label_dims;
  const auto labels = read_idx(labels_path, 0x00000801, label_dims);
  if (label_dims[0] != dims[0]) {
    throw std::runtime_error("count mismatch: " + std::to_string(dims[0]) + " images but " +
                             std::to_string(label_dims[0]) + " labels");
  }
  ds.labels.assign(labels.begin(), labels.end());
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.images.rank() != 4 || ds.images.dim(1) != 1) {
    throw std::invalid_argument("write_idx: expected N x 1 x H x W images");
  }
  std::ofstream im(images_path, std::ios::binary);
  if (!im) throw std::runtime_error("cannot open " + images_path);
  put_be32(im, 0x00000803);
  put_be32(im, static_cast<std::uint32_t>(ds.images.dim(0)));
  put_be32(im, static_cast<std::uint32_t>(ds.images.dim(2)));
  put_be32(im, static_cast<std::uint32_t>(ds.images.dim(3)));
  for (double v : ds.images.values()) {
    im.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  if (labels_path.empty()) return;
  std::ofstream lb(labels_path, std::ios::binary);
  if (!lb) throw std::runtime_error("cannot open " + labels_path);
  put_be32(lb, 0x00000801);
  put_be32(lb, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) lb.put(static_cast<char>(l));
}

double pixel_mean(const Dataset& ds) {
  if (ds.images.empty()) throw std::invalid_argument("pixel_mean: empty dataset");
  return sum(ds.images) / static_cast<double>(ds.images.size());
}

void center(Dataset& ds, double mean) {
  for (double& v : ds.images.values()) v -= mean;
}

Tensor gather(const Tensor& images, const std::vector<std::size_t>& indices) {
  Shape shape = images.shape();
  const std::size_t row = images.size() / shape[0];
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= images.dim(0)) throw std::out_of_range("gather: index out of range");
    std::copy_n(images.data() + indices[i] * row, row, out.data() + i * row);
  }
  return out;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("subset: no indices");
  Dataset out;
  out.name = ds.name;
  out.images = gather(ds.images, indices);
  if (ds.has_labels()) {
    for (std::size_t i : indices) out.labels.push_back(ds.labels[i]);
  }
  return out;
}

Dataset head(const Dataset& ds, std::size_t n) {
  if (n == 0 || n >= ds.size()) return ds;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return subset(ds, idx);
}

Dataset pad_to_multiple(const Dataset& ds, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("pad_to_multiple: factor must be positive");
  const std::size_t h = ds.images.dim(2), w = ds.images.dim(3);
  const std::size_t ph = (h + factor - 1) / factor * factor - h;
  const std::size_t pw = (w + factor - 1) / factor * factor - w;
  if (ph == 0 && pw == 0) return ds;
  const std::size_t n = ds.images.dim(0), c = ds.images.dim(1);
  Dataset out = ds;
  out.images = Tensor({n, c, h + ph, w + pw});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(ds.images.data() + ds.images.offset(i, ch, y, 0), w,
                    out.images.data() + out.images.offset(i, ch, y + ph / 2, pw / 2));
      }
    }
  }
  return out;
}

LabeledSubset sample_labeled_subset(const Dataset& ds, std::size_t n, std::uint64_t seed,
                                    std::size_t classes) {
  if (!ds.has_labels()) throw std::invalid_argument("sample_labeled_subset: dataset has no labels");
  if (classes == 0 || n % classes != 0) {
    throw std::invalid_argument("labeled count " + std::to_string(n) + " is not divisible by " +
                                std::to_string(classes) + " classes");
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    const int l = ds.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw std::invalid_argument("label " + std::to_string(l) + " outside 0.." +
                                  std::to_string(classes - 1));
    }
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  const std::size_t per = n / classes;
  Rng rng = make_rng(seed, 11);
  LabeledSubset out;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& pool = by_class[c];
    if (pool.size() < per) {
      throw std::invalid_argument("class " + std::to_string(c) + " has " +
                                  std::to_string(pool.size()) + " samples, need " +
                                  std::to_string(per));
    }
    // Partial Fisher-Yates: the first `per` slots are a uniform sample.
    for (std::size_t i = 0; i < per; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    }
    out.indices.insert(out.indices.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per));
    out.per_class.push_back(per);
  }
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

namespace {

void shift_sample(const double* in, double* out, std::size_t channels, std::size_t h,
                  std::size_t w, int dx, int dy) {
  std::fill_n(out, channels * h * w, 0.0);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (long y = std::max(0L, static_cast<long>(dy)); y < std::min(H, H + dy); ++y) {
      for (long x = std::max(0L, static_cast<long>(dx)); x < std::min(W, W + dx); ++x) {
        out[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] =
            in[(c * h + static_cast<std::size_t>(y - dy)) * w + static_cast<std::size_t>(x - dx)];
      }
    }
  }
}

void check_images(const Tensor& images, const char* who) {
  if (images.rank() != 4) throw std::invalid_argument(std::string(who) + ": expected N x C x H x W");
}

}  // namespace

Tensor translate(const Tensor& images, int dx, int dy) {
  check_images(images, "translate");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (static_cast<std::size_t>(std::abs(dx)) >= w || static_cast<std::size_t>(std::abs(dy)) >= h) {
    throw std::invalid_argument("translate: shift exceeds image extent");
  }
  Tensor out(images.shape());
  const std::size_t plane = c * h * w;
  for (std::size_t i = 0; i < n; ++i) {
    shift_sample(images.data() + i * plane, out.data() + i * plane, c, h, w, dx, dy);
  }
  return out;
}

Tensor random_translate(const Tensor& images, int max_shift, Rng& rng) {
  check_images(images, "random_translate");
  if (max_shift < 0) throw std::invalid_argument("random_translate: max_shift must be >= 0");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (static_cast<std::size_t>(max_shift) >= std::min(h, w)) {
    throw std::invalid_argument("random_translate: max_shift exceeds image extent");
  }
  Tensor out(images.shape());
  const std::size_t plane = c * h * w;
  const auto span = static_cast<std::uint64_t>(2 * max_shift + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const int dx = static_cast<int>(uniform_index(rng, span)) - max_shift;
    const int dy = static_cast<int>(uniform_index(rng, span)) - max_shift;
    shift_sample(images.data() + i * plane, out.data() + i * plane, c, h, w, dx, dy);
  }
  return out;
}

void to_pgm(const Tensor& images, const std::string& path, std::size_t cols) {
  check_images(images, "to_pgm");
  if (images.dim(1) != 1) throw std::invalid_argument("to_pgm: images must be single-channel");
  if (cols == 0) throw std::invalid_argument("to_pgm: cols must be positive");
  const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  cols = std::min(cols, n);
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t width = cols * (w + 1), height = rows * (h + 1);
  std::vector<unsigned char> pixels(width * height, 255);
  for (std::size_t i = 0; i < n; ++i) {
    const double* img = images.data() + i * h * w;
    const auto [lo, hi] = std::minmax_element(img, img + h * w);
    const double range = *hi - *lo;
    const std::size_t top = (i / cols) * (h + 1), left = (i % cols) * (w + 1);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = img[y * w + x];
        pixels[(top + y) * width + left + x] =
            range > 0 ? static_cast<unsigned char>(std::lround((v - *lo) / range * 255.0)) : 128;
      }
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw std::runtime_error("write failed for " + path);
}

Dataset synthetic_digits(std::size_t n, std::size_t size, std::size_t classes, std::uint64_t seed) {
  if (size < 8) throw std::invalid_argument("synthetic_digits: size must be at least 8");
  Rng rng = make_rng(seed, 21);
  Dataset ds;
  ds.name = "synthetic";
  ds.images = Tensor({n, 1, size, size});
  const std::size_t lanes = size - 4;
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<int>(i % classes);
    ds.labels.push_back(label);
    double* img = ds.images.data() + i * size * size;
    for (std::size_t p = 0; p < size * size; ++p) img[p] = 0.05 * uniform01(rng);
    // A horizontal and a vertical stroke whose positions encode the class.
    const std::size_t jitter = uniform_index(rng, 3);
    const std::size_t row = 1 + jitter + (static_cast<std::size_t>(label) * 7 % classes) * lanes / classes;
    const std::size_t col = 1 + jitter + static_cast<std::size_t>(label) * lanes / classes;
    for (std::size_t t = 2; t + 2 < size; ++t) {
      img[std::min(row, size - 1) * size + t] = 0.9 + 0.1 * uniform01(rng);
      img[t * size + std::min(col, size - 1)] = 0.9 + 0.1 * uniform01(rng);
    }
  }
  return ds;
}

}  // namespace swwae
