#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "qad/error.hpp"
#include "qad/quality.hpp"
#include "qad/rng.hpp"

using namespace qad;
using namespace qad::quality;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected qad::Error");
  return ErrorKind::io;
}

std::vector<double> random_image(std::size_t numel, Rng& rng) {
  std::vector<double> img(numel);
  for (double& v : img) v = static_cast<float>(rng.uniform());
  return img;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

SynthTaskConfig small_config() {
  SynthTaskConfig cfg;
  cfg.train_size = 40;
  cfg.val_size = 12;
  cfg.test_size = 16;
  return cfg;
}

// Textbook 2-D DCT-II of an 8x8 block written as the double sum.
double dct_coefficient(const std::vector<double>& img, std::size_t width, std::size_t u, std::size_t v) {
  const double pi = std::acos(-1.0);
  const double au = u == 0 ? std::sqrt(0.125) : 0.5;
  const double av = v == 0 ? std::sqrt(0.125) : 0.5;
  double s = 0.0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      s += img[y * width + x] * std::cos(pi * (2 * y + 1) * u / 16.0) * std::cos(pi * (2 * x + 1) * v / 16.0);
  return au * av * s;
}

}  // namespace

TEST_CASE("level zero is the identity") {
  Rng rng(1);
  const auto img = random_image(2 * 16 * 8, rng);
  CHECK(degrade(img, 2, 16, 8, 0.0) == img);
}

TEST_CASE("constant images stay constant") {
  for (double value : {0.0, 0.25, 0.5, 1.0}) {
    const std::vector<double> img(16 * 16, value);
    for (double q : {0.5, 2.0, 6.0, 50.0}) {
      const auto out = degrade(img, 1, 16, 16, q);
      for (double v : out) CHECK(std::abs(v - value) <= 1e-7);
      CHECK(std::all_of(out.begin(), out.end(), [&](double v) { return v == out[0]; }));
    }
  }
}

TEST_CASE("distortion grows with the level") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(16 * 16, rng);
    CHECK(mse(img, degrade(img, 1, 16, 16, 4.0)) > mse(img, degrade(img, 1, 16, 16, 1.0)));
  }
}

TEST_CASE("degraded blocks keep DC and quantize AC to the step grid") {
  Rng rng(3);
  auto img = random_image(8 * 8, rng);
  for (double& v : img) v = 0.25 + 0.5 * v;  // avoid clipping
  const double q = 2.0;
  const auto out = degrade(img, 1, 8, 8, q);
  CHECK(dct_coefficient(out, 8, 0, 0) == doctest::Approx(dct_coefficient(img, 8, 0, 0)).epsilon(1e-6));
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) {
      if (u + v == 0) continue;
      const double step = q * kQuantBase * quant_weight(u, v);
      const double ratio = dct_coefficient(out, 8, u, v) / step;
      CHECK(std::abs(ratio - std::round(ratio)) <= 1e-4);  // float rounding of pixels
    }
}

TEST_CASE("degrade argument errors") {
  const std::vector<double> img(64, 0.5);
  CHECK(kind_of([&] { degrade(img, 1, 8, 8, -1.0); }) == ErrorKind::invalid_config);
  CHECK(kind_of([&] { degrade(img, 1, 4, 16, 1.0); }) == ErrorKind::invalid_input);
  CHECK(kind_of([&] { degrade(img, 1, 8, 7, 1.0); }) == ErrorKind::invalid_input);
}

TEST_CASE("modalities") {
  CHECK(default_modalities() == std::vector<Modality>{{0.0}, {2.0}, {6.0}});
  CHECK(Modality{0.0}.name() == "raw");
  CHECK(Modality{6.0}.name() == "q6");
  CHECK(Modality{0.5}.name() == "q0.5");
  CHECK(parse_modality("q2.5") == Modality{2.5});
  CHECK(parse_modality("raw") == Modality{0.0});
  CHECK(kind_of([] { parse_modality("q"); }) == ErrorKind::invalid_config);
  CHECK(kind_of([] { parse_modality("q-1"); }) == ErrorKind::invalid_config);
  CHECK(kind_of([] { parse_modality("q2x"); }) == ErrorKind::invalid_config);
  const std::vector<Modality> unordered{{0.0}, {6.0}, {2.0}};
  CHECK(kind_of([&] { validate_modalities(unordered); }) == ErrorKind::invalid_config);
  const std::vector<Modality> no_raw{{2.0}};
  CHECK(kind_of([&] { validate_modalities(no_raw); }) == ErrorKind::invalid_config);
  const std::vector<Modality> twice_raw{{0.0}, {0.0}};
  CHECK(kind_of([&] { validate_modalities(twice_raw); }) == ErrorKind::invalid_config);
}

TEST_CASE("dataset generation is deterministic and thread independent") {
  const auto cfg = small_config();
  const auto a = generate_dataset(cfg, default_modalities());
  const auto b = generate_dataset(cfg, default_modalities(), 3);
  for (const char* name : {"train", "val", "test"}) {
    CHECK(a.split(name).images == b.split(name).images);
    CHECK(a.split(name).labels == b.split(name).labels);
  }
  auto other = cfg;
  other.seed = 8;
  CHECK(generate_dataset(other, default_modalities()).train.images != a.train.images);
  CHECK(a.train.images != a.test.images);
}

TEST_CASE("raw-only dataset") {
  const auto data = generate_dataset(small_config(), {{0.0}});
  CHECK(data.modalities.size() == 1);
  CHECK(data.train.images.size() == 1);
  CHECK(data.train.images[0].size() == 40 * 256);
}

TEST_CASE("modalities are aligned degradations of raw") {
  const auto data = generate_dataset(small_config(), default_modalities());
  const std::size_t numel = data.image_numel();
  for (std::size_t i = 0; i < data.train.count; ++i) {
    std::vector<double> raw(data.train.images[0].begin() + i * numel, data.train.images[0].begin() + (i + 1) * numel);
    int label = -1;
    CHECK(render_sample(data.config, SplitKind::train, i, label) == raw);
    CHECK(label == data.train.labels[i]);
    for (std::size_t m = 1; m < data.modalities.size(); ++m) {
      const auto expected = degrade(raw, 1, 16, 16, data.modalities[m].level);
      CHECK(std::equal(expected.begin(), expected.end(), data.train.images[m].begin() + i * numel));
    }
  }
  for (double v : data.train.images[2]) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("labels are roughly balanced and distortion increases with level") {
  auto cfg = small_config();
  cfg.train_size = 1000;
  const auto data = generate_dataset(cfg, default_modalities());
  const auto ones = std::count(data.train.labels.begin(), data.train.labels.end(), 1);
  CHECK(ones > 430);
  CHECK(ones < 570);
  CHECK(mean_distortion(data, data.train, 0) == 0.0);
  CHECK(mean_distortion(data, data.train, 1) > 0.0);
  CHECK(mean_distortion(data, data.train, 2) > mean_distortion(data, data.train, 1));
}

TEST_CASE("batch iteration") {
  const auto data = generate_dataset(small_config(), default_modalities());
  SUBCASE("full batch holds every sample once") {
    BatchIterator it(data, data.train, data.train.count, 5, true);
    MultiQualityBatch batch;
    REQUIRE(it.next(batch));
    CHECK(std::set<std::uint64_t>(batch.sample_ids.begin(), batch.sample_ids.end()).size() == data.train.count);
    CHECK_FALSE(it.next(batch));
  }
  SUBCASE("epoch covers the index set and batches are aligned") {
    BatchIterator it(data, data.train, 16, 5, true);
    CHECK(it.batches_per_epoch() == 3);
    std::multiset<std::uint64_t> seen;
    MultiQualityBatch batch;
    std::vector<std::size_t> sizes;
    while (it.next(batch)) {
      sizes.push_back(batch.size());
      REQUIRE(batch.inputs.size() == 3);
      for (std::size_t r = 0; r < batch.size(); ++r) {
        seen.insert(batch.sample_ids[r]);
        CHECK(batch.labels[r] == data.train.labels[batch.sample_ids[r]]);
        for (std::size_t m = 0; m < 3; ++m) {
          CHECK(batch.inputs[m].shape == nn::Shape{batch.size(), 1, 16, 16});
          CHECK(std::equal(batch.inputs[m].values.begin() + r * 256, batch.inputs[m].values.begin() + (r + 1) * 256,
                           data.train.images[m].begin() + batch.sample_ids[r] * 256));
        }
      }
    }
    CHECK(sizes == std::vector<std::size_t>{16, 16, 8});
    CHECK(seen.size() == data.train.count);
    CHECK(std::set<std::uint64_t>(seen.begin(), seen.end()).size() == data.train.count);
  }
  SUBCASE("same seed gives the same sequence, epochs differ") {
    auto collect = [&](std::size_t epoch) {
      BatchIterator it(data, data.train, 16, 9, true);
      it.start_epoch(epoch);
      std::vector<std::uint64_t> ids;
      MultiQualityBatch batch;
      while (it.next(batch)) ids.insert(ids.end(), batch.sample_ids.begin(), batch.sample_ids.end());
      return ids;
    };
    CHECK(collect(0) == collect(0));
    CHECK(collect(1) == collect(1));
    CHECK(collect(0) != collect(1));
  }
  SUBCASE("unshuffled order is sequential") {
    BatchIterator it(data, data.val, 5, 1, false);
    MultiQualityBatch batch;
    REQUIRE(it.next(batch));
    CHECK(batch.sample_ids == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  }
  CHECK(kind_of([&] { BatchIterator(data, data.train, 41, 1, true); }) == ErrorKind::invalid_config);
  CHECK(kind_of([&] { BatchIterator(data, data.train, 0, 1, true); }) == ErrorKind::invalid_config);
}

TEST_CASE("random quality images") {
  const auto data = generate_dataset(small_config(), default_modalities());
  std::vector<double> levels;
  const auto imgs = random_quality_images(data, data.test, 1.0, 6.0, 4, &levels);
  CHECK(imgs == random_quality_images(data, data.test, 1.0, 6.0, 4));
  for (std::size_t i = 0; i < data.test.count; ++i) {
    CHECK(levels[i] >= 1.0);
    CHECK(levels[i] <= 6.0);
    std::vector<double> raw(data.test.images[0].begin() + i * 256, data.test.images[0].begin() + (i + 1) * 256);
    const auto expected = degrade(raw, 1, 16, 16, levels[i]);
    CHECK(std::equal(expected.begin(), expected.end(), imgs.begin() + i * 256));
  }
  CHECK(kind_of([&] { random_quality_images(data, data.test, 3.0, 1.0, 4); }) == ErrorKind::invalid_config);
}

TEST_CASE("dataset export and import round trip") {
  const auto data = generate_dataset(small_config(), default_modalities());
  const auto dir = std::filesystem::temp_directory_path() / "qad_quality_export_test";
  std::filesystem::remove_all(dir);
  export_dataset(data, dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "test.q6.bin"));
  const auto back = import_dataset(dir);
  CHECK(back.config == data.config);
  CHECK(back.modalities == data.modalities);
  for (const char* name : {"train", "val", "test"}) {
    CHECK(back.split(name).images == data.split(name).images);
    CHECK(back.split(name).labels == data.split(name).labels);
    CHECK(back.split(name).sample_ids == data.split(name).sample_ids);
  }
  std::filesystem::resize_file(dir / "val.q2.bin", 100);
  CHECK(kind_of([&] { import_dataset(dir); }) == ErrorKind::format);
  CHECK(kind_of([&] { import_dataset(dir / "missing"); }) == ErrorKind::io);
  std::filesystem::remove_all(dir);
}
