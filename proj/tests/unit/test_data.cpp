#include <doctest.h>

#include <algorithm>
#include <random>

#include "../support/fixtures.hpp"
#include "xdistill/data.hpp"
#include "xdistill/error.hpp"
#include "xdistill/model_io.hpp"

using namespace xdistill;

namespace {

void be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w,
                                     const std::vector<std::uint8_t>& px) {
  std::vector<std::uint8_t> out;
  be32(out, 0x00000803u);
  be32(out, n);
  be32(out, h);
  be32(out, w);
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  be32(out, 0x00000801u);
  be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

FormatErrc code_of(const std::vector<std::uint8_t>& im, const std::vector<std::uint8_t>& lb) {
  try {
    parse_idx(im, lb);
  } catch (const FormatError& e) {
    return e.code();
  }
  FAIL("no error");
  return FormatErrc::Io;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("IDX: hand-built pair") {
  const auto im = idx_images(2, 2, 2, {0, 51, 102, 255, 1, 2, 3, 4});
  const auto lb = idx_labels({1, 0});
  const Dataset ds = parse_idx(im, lb);
  CHECK(ds.images.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.images[1] == 51.0 / 255.0);
  CHECK(ds.images[3] == 1.0);
  CHECK(ds.images[7] == 4.0 / 255.0);
  CHECK(ds.labels == std::vector<std::size_t>{1, 0});
  CHECK(ds.num_classes == 2);
  CHECK(parse_idx(im, lb, 10).num_classes == 10);
  CHECK_THROWS_AS(parse_idx(im, lb, 1), InvalidArgument);
}

TEST_CASE("IDX: corruption classes") {
  const auto im = idx_images(2, 2, 2, {0, 1, 2, 3, 4, 5, 6, 7});
  const auto lb = idx_labels({1, 0});
  auto bad = im;
  bad[3] = 0x02;
  CHECK(code_of(bad, lb) == FormatErrc::BadMagic);
  auto badl = lb;
  badl[3] = 0x03;
  CHECK(code_of(im, badl) == FormatErrc::BadMagic);
  // Dimensions claiming more pixels than the file holds, or overflowing size_t.
  CHECK(code_of(idx_images(3, 2, 2, {0, 1, 2, 3, 4, 5, 6, 7}), lb) == FormatErrc::DimensionOverflow);
  CHECK(code_of(idx_images(0xffffffffu, 0xffffffffu, 0xffffffffu, {}), lb) == FormatErrc::DimensionOverflow);
  CHECK(code_of(im, idx_labels({1, 0, 1})) == FormatErrc::CountMismatch);
}

TEST_CASE("IDX: 4-D images, write/read round trip") {
  Dataset ds = synth_blobs(SynthSpec{3, 4, 3, 5, 4, 0.3, 2, 0});
  fixture::TempDir dir("idx");
  write_idx(ds, dir.path / "im.idx", dir.path / "lb.idx");
  const Dataset back = load_idx(dir.path / "im.idx", dir.path / "lb.idx");
  CHECK(back.images.shape() == ds.images.shape());
  CHECK(back.labels == ds.labels);
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    CHECK(back.images[i] == std::round(ds.images[i] * 255.0) / 255.0);
  CHECK_THROWS_AS(load_idx(dir.path / "missing", dir.path / "lb.idx"), FormatError);
}

TEST_CASE("synth_blobs") {
  const SynthSpec spec{10, 5, 1, 16, 16, 0.45, 7, 0};
  const Dataset a = synth_blobs(spec), b = synth_blobs(spec);
  CHECK(a.size() == 50);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  for (double v : a.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(class_histogram(a) == std::vector<std::size_t>(10, 5));
  SynthSpec other = spec;
  other.draw = 1;
  CHECK_FALSE(synth_blobs(other).images == a.images);
  CHECK(synth_blobs(10, 5, 1, 16, 16, 7).size() == 50);

  const Tensor tpl = synth_templates(spec);
  CHECK(tpl.shape() == Shape{10, 1, 16, 16});
  for (double v : tpl.data()) {
    CHECK(v >= 0.15 - 1e-12);
    CHECK(v <= 0.85 + 1e-12);
  }
}

TEST_CASE("synth_blobs is learnable by nearest template") {
  SynthSpec spec{10, 100, 1, 16, 16, 0.45, 1, 3};
  const Tensor tpl = synth_templates(spec);
  const Dataset fresh = synth_blobs(spec);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < 10; ++c) {
      double d = 0.0;
      for (std::size_t p = 0; p < 256; ++p) {
        const double e = fresh.images.sample(i)[p] - tpl.sample(c)[p];
        d += e * e;
      }
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    hit += best == fresh.labels[i] ? 1 : 0;
  }
  CHECK(static_cast<double>(hit) / fresh.size() >= 0.95);
}

TEST_CASE("kshot_sample") {
  const Dataset ds = synth_blobs(SynthSpec{10, 20, 1, 8, 8, 0.3, 3, 0});
  const Dataset one = kshot_sample(ds, 1, 5);
  CHECK(one.size() == 10);
  CHECK(class_histogram(one) == std::vector<std::size_t>(10, 1));

  const Dataset a = kshot_sample(ds, 5, 9), b = kshot_sample(ds, 5, 9);
  CHECK(a.images == b.images);
  CHECK(class_histogram(a) == std::vector<std::size_t>(10, 5));
  CHECK_FALSE(kshot_sample(ds, 5, 10).images == a.images);

  // Oracle: per class, shuffle the index list with one shared engine, take the first K.
  std::mt19937_64 rng(9);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < 10; ++c) {
    std::vector<std::size_t> list;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == c) list.push_back(i);
    std::shuffle(list.begin(), list.end(), rng);
    chosen.insert(chosen.end(), list.begin(), list.begin() + 5);
  }
  CHECK(a.images == gather_samples(ds.images, chosen));
  CHECK_THROWS_AS(kshot_sample(ds, 21, 1), InvalidArgument);
}

TEST_CASE("augmentations") {
  const Dataset ds = synth_blobs(SynthSpec{2, 3, 1, 6, 6, 0.3, 4, 0});
  const SoftBatch batch = to_soft_batch(ds);
  const SoftBatch same = mixup(batch, 1.0, 3);
  CHECK(same.x == batch.x);
  CHECK(same.targets == batch.targets);

  // Two samples of different classes: each is paired with the other.
  const std::vector<std::size_t> pick{0, 3};
  const SoftBatch two{gather_samples(batch.x, pick), gather_samples(batch.targets, pick)};
  const SoftBatch half = mixup(two, 0.5, 8);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(half.targets[i * 2] == 0.5);
    CHECK(half.targets[i * 2 + 1] == 0.5);
  }
  CHECK(mixup(batch, 0.3, 5).x == mixup(batch, 0.3, 5).x);
  const double lam = draw_mixup_lambda(4);
  CHECK(lam >= 0.0);
  CHECK(lam <= 1.0);
  CHECK(draw_mixup_lambda(4) == lam);

  CHECK(gaussian_feature_noise(batch.x, 0.0, 1) == batch.x);
  const Tensor n1 = gaussian_feature_noise(batch.x, 0.2, 1);
  CHECK(n1 == gaussian_feature_noise(batch.x, 0.2, 1));
  CHECK_FALSE(n1 == batch.x);

  CHECK(random_crop(batch.x, 0, 1) == batch.x);
  const Tensor c = random_crop(batch.x, 2, 6);
  CHECK(c.shape() == batch.x.shape());
  CHECK(c == random_crop(batch.x, 2, 6));
  // Every crop is a shifted copy: each nonzero crop pixel exists in the source sample.
  for (std::size_t n = 0; n < c.shape().n; ++n) {
    const auto src = batch.x.sample(n);
    for (double v : c.sample(n))
      if (v != 0.0) CHECK(std::find(src.begin(), src.end(), v) != src.end());
  }
}

TEST_CASE("one_hot and subset") {
  const std::vector<std::size_t> labels{2, 0};
  const Tensor oh = one_hot(labels, 3);
  CHECK(oh.vec() == std::vector<double>{0, 0, 1, 1, 0, 0});
  CHECK_THROWS_AS(one_hot(labels, 2), InvalidArgument);
  Dataset ds;
  ds.num_classes = 2;
  ds.images = Tensor({2, 1, 1, 1});
  ds.labels = {0, 5};
  CHECK_THROWS_AS(ds.validate(), InvalidArgument);
}

}  // TEST_SUITE
