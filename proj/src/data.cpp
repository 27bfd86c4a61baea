#include "xdistill/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "xdistill/error.hpp"
#include "xdistill/model_io.hpp"

namespace xdistill {

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

enum StreamTag : std::uint64_t { kTemplates = 1, kSamples = 2, kMixup = 3, kNoise = 4, kCrop = 5, kBeta = 6 };

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

void Dataset::validate() const {
  if (images.shape().n != labels.size()) {
    throw ShapeError("dataset holds " + std::to_string(images.shape().n) + " images but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= num_classes) throw InvalidArgument("label " + std::to_string(y) + " exceeds class count");
  }
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.images = gather_samples(ds.images, indices);
  out.num_classes = ds.num_classes;
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(ds.labels.at(i));
  return out;
}

std::vector<std::size_t> class_histogram(const Dataset& ds) {
  std::vector<std::size_t> h(ds.num_classes, 0);
  for (std::size_t y : ds.labels) ++h.at(y);
  return h;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Tensor t({labels.size(), num_classes, 1, 1});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw InvalidArgument("one_hot: label out of range");
    t[i * num_classes + labels[i]] = 1.0;
  }
  return t;
}

Dataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels,
                  std::size_t num_classes) {
  if (images.size() < 4) throw FormatError(FormatErrc::Truncated, "IDX image file shorter than its magic");
  const std::uint32_t magic = read_be32(images, 0);
  if (magic != 0x00000803u && magic != 0x00000804u) {
    throw FormatError(FormatErrc::BadMagic, "bad IDX image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }());
  }
  const std::size_t ndims = magic & 0xffu;
  if (images.size() < 4 + 4 * ndims) throw FormatError(FormatErrc::Truncated, "IDX image header truncated");
  std::vector<std::uint64_t> dims(ndims);
  std::uint64_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    dims[d] = read_be32(images, 4 + 4 * d);
    if (dims[d] == 0) throw FormatError(FormatErrc::DimensionOverflow, "IDX image dimension is zero");
    if (count > (std::uint64_t{1} << 32) / dims[d]) {
      throw FormatError(FormatErrc::DimensionOverflow, "IDX image dimensions overflow the element count");
    }
    count *= dims[d];
  }
  const std::size_t data_off = 4 + 4 * ndims;
  if (images.size() - data_off < count) {
    throw FormatError(FormatErrc::DimensionOverflow, "IDX image dimensions declare " + std::to_string(count) +
                                                         " pixels but the file holds " +
                                                         std::to_string(images.size() - data_off));
  }

  if (labels.size() < 8) throw FormatError(FormatErrc::Truncated, "IDX label file truncated");
  if (read_be32(labels, 0) != 0x00000801u) throw FormatError(FormatErrc::BadMagic, "bad IDX label magic");
  const std::uint64_t nlabels = read_be32(labels, 4);
  if (labels.size() - 8 < nlabels) {
    throw FormatError(FormatErrc::DimensionOverflow, "IDX label count exceeds the file");
  }
  if (nlabels != dims[0]) {
    throw FormatError(FormatErrc::CountMismatch, "IDX image count " + std::to_string(dims[0]) +
                                                     " differs from label count " + std::to_string(nlabels));
  }

  Shape shape = ndims == 3 ? Shape{dims[0], 1, dims[1], dims[2]} : Shape{dims[0], dims[1], dims[2], dims[3]};
  Dataset ds;
  ds.images = Tensor(shape);
  for (std::size_t i = 0; i < count; ++i) ds.images[i] = images[data_off + i] / 255.0;
  ds.labels.resize(nlabels);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < nlabels; ++i) {
    ds.labels[i] = labels[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = num_classes ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t num_classes) {
  return parse_idx(read_file_bytes(images_path), read_file_bytes(labels_path), num_classes);
}

std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const Dataset& ds) {
  ds.validate();
  const Shape& s = ds.images.shape();
  std::vector<std::uint8_t> img, lab;
  if (s.c == 1) {
    put_be32(img, 0x00000803u);
  } else {
    put_be32(img, 0x00000804u);
  }
  put_be32(img, static_cast<std::uint32_t>(s.n));
  if (s.c != 1) put_be32(img, static_cast<std::uint32_t>(s.c));
  put_be32(img, static_cast<std::uint32_t>(s.h));
  put_be32(img, static_cast<std::uint32_t>(s.w));
  for (double v : ds.images.data()) {
    img.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  put_be32(lab, 0x00000801u);
  put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t y : ds.labels) {
    if (y > 255) throw InvalidArgument("IDX labels are single bytes");
    lab.push_back(static_cast<std::uint8_t>(y));
  }
  return {std::move(img), std::move(lab)};
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  auto [img, lab] = encode_idx(ds);
  write_file_bytes(images_path, img);
  write_file_bytes(labels_path, lab);
}

Tensor synth_templates(const SynthSpec& spec) {
  auto rng = make_engine(spec.seed, 0, kTemplates);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Tensor t({spec.num_classes, spec.c, spec.h, spec.w});
  constexpr int kBumps = 4;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    for (std::size_t ch = 0; ch < spec.c; ++ch) {
      double cy[kBumps], cx[kBumps], width[kBumps], amp[kBumps];
      for (int b = 0; b < kBumps; ++b) {
        cy[b] = u01(rng) * static_cast<double>(spec.h);
        cx[b] = u01(rng) * static_cast<double>(spec.w);
        width[b] = 1.5 + 2.5 * u01(rng);
        amp[b] = 2.0 * u01(rng) - 1.0;
      }
      double lo = 1e300, hi = -1e300;
      for (std::size_t y = 0; y < spec.h; ++y) {
        for (std::size_t x = 0; x < spec.w; ++x) {
          double v = 0.0;
          for (int b = 0; b < kBumps; ++b) {
            const double dy = static_cast<double>(y) - cy[b], dx = static_cast<double>(x) - cx[b];
            v += amp[b] * std::exp(-(dy * dy + dx * dx) / (2.0 * width[b] * width[b]));
          }
          t.at(k, ch, y, x) = v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      const double span = hi > lo ? hi - lo : 1.0;
      for (std::size_t y = 0; y < spec.h; ++y) {
        for (std::size_t x = 0; x < spec.w; ++x) {
          t.at(k, ch, y, x) = 0.15 + 0.7 * (t.at(k, ch, y, x) - lo) / span;
        }
      }
    }
  }
  return t;
}

Dataset synth_blobs(const SynthSpec& spec) {
  if (spec.num_classes == 0 || spec.c == 0 || spec.h == 0 || spec.w == 0) {
    throw InvalidArgument("synth_blobs: zero extent");
  }
  const Tensor templates = synth_templates(spec);
  auto rng = make_engine(spec.seed, spec.draw, kSamples);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.images = Tensor({spec.num_classes * spec.per_class, spec.c, spec.h, spec.w});
  const std::size_t ss = spec.c * spec.h * spec.w;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    auto tmpl = templates.sample(k);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      auto dst = ds.images.sample(k * spec.per_class + i);
      for (std::size_t p = 0; p < ss; ++p) {
        dst[p] = std::clamp(tmpl[p] + spec.noise * gauss(rng), 0.0, 1.0);
      }
      ds.labels.push_back(k);
    }
  }
  return ds;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t c, std::size_t h,
                    std::size_t w, std::uint64_t seed) {
  SynthSpec spec;
  spec.num_classes = num_classes;
  spec.per_class = per_class;
  spec.c = c;
  spec.h = h;
  spec.w = w;
  spec.seed = seed;
  return synth_blobs(spec);
}

Dataset kshot_sample(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  ds.validate();
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(k * ds.num_classes);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto& list = by_class[c];
    if (list.size() < k) {
      throw InvalidArgument("class " + std::to_string(c) + " has " + std::to_string(list.size()) +
                            " instances, fewer than K=" + std::to_string(k));
    }
    std::shuffle(list.begin(), list.end(), rng);
    chosen.insert(chosen.end(), list.begin(), list.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return subset(ds, chosen);
}

SoftBatch to_soft_batch(const Dataset& ds) {
  ds.validate();
  return SoftBatch{ds.images, one_hot(ds.labels, ds.num_classes)};
}

SoftBatch mixup(const SoftBatch& batch, double lambda, std::uint64_t seed) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("mixup lambda must lie in [0, 1]");
  const std::size_t n = batch.x.shape().n;
  if (batch.targets.shape().n != n) throw ShapeError("mixup: inputs and targets differ in sample count");
  // Sattolo's algorithm: a uniformly random single cycle, hence no fixed points.
  std::vector<std::size_t> partner(n);
  for (std::size_t i = 0; i < n; ++i) partner[i] = i;
  auto rng = make_engine(seed, 0, kMixup);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 2);
    std::swap(partner[i - 1], partner[pick(rng)]);
  }
  SoftBatch out{Tensor(batch.x.shape()), Tensor(batch.targets.shape())};
  auto mix = [&](const Tensor& src, Tensor& dst) {
    for (std::size_t i = 0; i < n; ++i) {
      auto a = src.sample(i);
      auto b = src.sample(partner[i]);
      auto d = dst.sample(i);
      for (std::size_t p = 0; p < a.size(); ++p) d[p] = lambda * a[p] + (1.0 - lambda) * b[p];
    }
  };
  mix(batch.x, out.x);
  mix(batch.targets, out.targets);
  return out;
}

double draw_mixup_lambda(std::uint64_t seed) {
  auto rng = make_engine(seed, 0, kBeta);
  std::gamma_distribution<double> g(0.2, 1.0);
  const double a = g(rng);
  const double b = g(rng);
  return a + b > 0.0 ? a / (a + b) : 0.5;
}

Tensor gaussian_feature_noise(const Tensor& h, double scale, std::uint64_t seed) {
  if (scale < 0.0) throw InvalidArgument("noise scale must be non-negative");
  if (scale == 0.0 || h.empty()) return h;
  const double peak = *std::max_element(h.data().begin(), h.data().end());
  const double sigma = scale * peak;
  if (sigma <= 0.0) return h;
  auto rng = make_engine(seed, 0, kNoise);
  std::normal_distribution<double> gauss(0.0, sigma);
  Tensor out = h;
  for (double& v : out.data()) v += gauss(rng);
  return out;
}

Tensor random_crop(const Tensor& x, std::size_t pad, std::uint64_t seed) {
  if (pad == 0) return x;
  const Shape& s = x.shape();
  auto rng = make_engine(seed, 0, kCrop);
  std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t dy = off(rng), dx = off(rng);
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(s.h)) continue;
        for (std::size_t xx = 0; xx < s.w; ++xx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - static_cast<std::ptrdiff_t>(pad);
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(s.w)) continue;
          out.at(n, c, y, xx) = x.at(n, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        }
      }
    }
  }
  return out;
}

}  // namespace xdistill
