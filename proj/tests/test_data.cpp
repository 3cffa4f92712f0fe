#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "vamp/config.hpp"
#include "vamp/container.hpp"
#include "vamp/data.hpp"

using namespace vamp;

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Bytes for one tensor entry: name, rank, dims, float32 payload.
std::size_t tensor_bytes(const std::string& name, const Shape& shape) {
  return 8 + name.size() + 8 + 8 * shape.size() + 4 * shape_numel(shape);
}

}  // namespace

TEST(Spec, ValidationRejectsDegenerateSpecs) {
  SyntheticSpec s;
  s.base_classes = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = SyntheticSpec{};
  s.novel_classes = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = SyntheticSpec{};
  s.noise = -0.1;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_NO_THROW(SyntheticSpec{}.validate());
}

TEST(Generate, SeparationFailureIsInfeasible) {
  SyntheticSpec s;
  s.concept_dim = 1;
  s.noise = 50.0;
  EXPECT_THROW(generate_task(s), InfeasibleSpecError);
}

TEST(Generate, ConceptsRespectMinimumSeparation) {
  const GeneratedTask g = generate_task(SyntheticSpec{});
  const std::size_t c = g.task.concepts.rows(), d = g.task.concepts.cols();
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i + 1; j < c; ++j) {
      const auto a = g.task.concepts.data().subspan(i * d, d), b = g.task.concepts.data().subspan(j * d, d);
      EXPECT_GE(std::sqrt(sq_dist(a, b)), 2.0 * g.task.spec.noise);
    }
  }
}

TEST(Generate, ZeroNoiseMakesClassExamplesIdentical) {
  SyntheticSpec s;
  s.noise = 0.0;
  const GeneratedTask g = generate_task(s);
  std::map<std::size_t, std::vector<double>> first;
  for (const auto& e : g.pool) {
    auto [it, inserted] = first.emplace(e.label, e.patches.to_vector());
    if (!inserted) EXPECT_EQ(it->second, e.patches.to_vector());
  }
  EXPECT_EQ(first.size(), s.total_classes());
}

TEST(Generate, SameSeedSameData) {
  EXPECT_TRUE(make_dataset(SyntheticSpec{}) == make_dataset(SyntheticSpec{}));
  SyntheticSpec other;
  other.seed = 8;
  EXPECT_FALSE(make_dataset(SyntheticSpec{}) == make_dataset(other));
}

TEST(Generate, NearestCentroidOnRawPatchesIsAccurate) {
  const Dataset d = make_dataset(SyntheticSpec{});
  std::map<std::size_t, std::vector<double>> centroid;
  std::map<std::size_t, std::size_t> count;
  for (const auto& e : d.base_train) {
    auto& c = centroid[e.label];
    c.resize(e.patches.size(), 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += e.patches.data()[i];
    ++count[e.label];
  }
  for (auto& [label, c] : centroid)
    for (double& v : c) v /= double(count[label]);
  std::size_t hits = 0;
  for (const auto& e : d.base_test) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (const auto& [label, c] : centroid) {
      const double dd = sq_dist(e.patches.data(), c);
      if (dd < best_d) best_d = dd, best = label;
    }
    hits += best == e.label;
  }
  EXPECT_GE(double(hits) / double(d.base_test.size()), 0.95);
}

TEST(Generate, ClassEmbeddingsShareTheLatentStructure) {
  const GeneratedTask g = generate_task(SyntheticSpec{});
  const Tensor emb = g.task.class_text_embeddings();
  EXPECT_EQ(emb.shape(), (Shape{g.task.spec.total_classes(), g.task.spec.text_width}));
  Tensor expect = matmul(nullptr, g.task.concepts, g.task.text_projection);
  round_tensor_f32(expect);  // stored tables are float32
  EXPECT_EQ(emb.to_vector(), expect.to_vector());
}

TEST(Split, SixteenShotsPerBaseClassAndNoNovelInTraining) {
  const Dataset d = make_dataset(SyntheticSpec{});
  std::map<std::size_t, std::size_t> per_class;
  for (const auto& e : d.base_train) {
    ++per_class[e.label];
    EXPECT_LT(e.label, d.task.spec.base_classes);
    EXPECT_EQ(e.split, Split::kBaseTrain);
  }
  EXPECT_EQ(per_class.size(), d.task.spec.base_classes);
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 16u);
  EXPECT_EQ(d.base_train.size(), 96u);
  for (const auto& e : d.base_test) EXPECT_LT(e.label, d.task.spec.base_classes);
  for (const auto& e : d.novel_test) EXPECT_GE(e.label, d.task.spec.base_classes);
  EXPECT_EQ(d.base_test.size(), d.task.spec.base_classes * d.task.spec.test_per_class);
  EXPECT_EQ(d.novel_test.size(), d.task.spec.novel_classes * d.task.spec.test_per_class);
}

TEST(Split, IdsAreDisjointAcrossSplits) {
  const Dataset d = make_dataset(SyntheticSpec{});
  std::set<std::uint64_t> ids;
  std::size_t total = 0;
  for (const auto* split : {&d.base_train, &d.base_test, &d.novel_test}) {
    for (const auto& e : *split) {
      ids.insert(e.id);
      ++total;
    }
  }
  EXPECT_EQ(ids.size(), total);
}

TEST(Split, RepeatedSplitHasSameMembership) {
  const GeneratedTask g = generate_task(SyntheticSpec{});
  EXPECT_TRUE(split_base_novel(g, 8) == split_base_novel(g, 8));
  EXPECT_EQ(split_base_novel(g, 8).base_train.size(), 6u * 8u);
}

TEST(Split, ShotsBeyondThePoolAreRejected) {
  const GeneratedTask g = generate_task(SyntheticSpec{});
  EXPECT_THROW(split_base_novel(g, g.task.spec.pool_per_class() + 1), ConfigError);
}

TEST(DatasetFile, RoundTripIsExact) {
  const Dataset d = make_dataset(SyntheticSpec{});
  const auto path = std::filesystem::temp_directory_path() / "vamp_data_roundtrip.bin";
  save_dataset(d, path.string());
  const Dataset back = load_dataset(path.string());
  std::filesystem::remove(path);
  EXPECT_TRUE(back == d);
}

TEST(DatasetFile, BadMagicAndTruncationAreFormatErrors) {
  std::string bytes = encode_dataset(make_dataset(SyntheticSpec{}));
  try {
    decode_dataset(bytes.substr(0, bytes.size() - 3));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kTruncated);
  }
  std::string version = bytes;
  version[4] = 9;
  try {
    decode_dataset(version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kVersion);
  }
  bytes[1] = 'X';
  try {
    decode_dataset(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::kBadMagic);
  }
  EXPECT_THROW(load_dataset("/nonexistent/dir/file.bin"), FormatError);
}

TEST(DatasetFile, SizeMatchesTheFormatArithmetic) {
  SyntheticSpec s;
  s.base_classes = 6;
  s.novel_classes = 4;
  const Dataset d = make_dataset(s);
  const std::string header = canonical_text(Json{{"kind", "dataset"}, {"spec", to_json(s)}});
  std::size_t expect = 4 + 4 + 8 + header.size() + 8;
  const std::size_t dc = s.concept_dim, b = s.patches, pd = s.patch_dim, C = s.total_classes();
  expect += tensor_bytes("task.concepts", {C, dc});
  expect += tensor_bytes("task.patch_maps", {b, dc, pd});
  expect += tensor_bytes("task.patch_offsets", {b, pd});
  expect += tensor_bytes("task.text_projection", {dc, s.text_width});
  const std::pair<const char*, std::size_t> splits[] = {{"base_train", s.base_classes * s.shots},
                                                        {"base_test", s.base_classes * s.test_per_class},
                                                        {"novel_test", s.novel_classes * s.test_per_class}};
  for (const auto& [key, n] : splits) {
    expect += tensor_bytes(std::string(key) + ".patches", {n, b, pd});
    expect += tensor_bytes(std::string(key) + ".labels", {n});
    expect += tensor_bytes(std::string(key) + ".ids", {n});
  }
  EXPECT_EQ(encode_dataset(d).size(), expect);
}
