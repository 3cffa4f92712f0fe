#include "vamp/data.hpp"

#include <algorithm>
#include <cmath>

#include "vamp/config.hpp"
#include "vamp/container.hpp"

namespace vamp {

namespace {

constexpr int kMaxSeparationAttempts = 10000;

Tensor quantized_gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t = gaussian_tensor(std::move(shape), stddev, rng);
  round_tensor_f32(t);
  return t;
}

const char* split_key(Split s) {
  switch (s) {
    case Split::kBaseTrain: return "base_train";
    case Split::kBaseTest: return "base_test";
    case Split::kNovelTest: return "novel_test";
    case Split::kPool: return "pool";
  }
  return "pool";
}

void append_split(ContainerContents& c, const std::vector<Example>& examples, Split split, const SyntheticSpec& spec) {
  const std::size_t n = examples.size(), per = spec.patches * spec.patch_dim;
  std::vector<double> patches(n * per), labels(n), ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = examples[i].patches.data();
    std::copy(src.begin(), src.end(), patches.begin() + static_cast<std::ptrdiff_t>(i * per));
    labels[i] = static_cast<double>(examples[i].label);
    ids[i] = static_cast<double>(examples[i].id);
  }
  const std::string key = split_key(split);
  c.tensors.push_back({key + ".patches", Tensor({n, spec.patches, spec.patch_dim}, std::move(patches))});
  c.tensors.push_back({key + ".labels", Tensor({n}, std::move(labels))});
  c.tensors.push_back({key + ".ids", Tensor({n}, std::move(ids))});
}

std::vector<Example> read_split(const ContainerContents& c, Split split, const SyntheticSpec& spec) {
  const std::string key = split_key(split);
  const Tensor& patches = c.find(key + ".patches");
  const Tensor& labels = c.find(key + ".labels");
  const Tensor& ids = c.find(key + ".ids");
  const std::size_t n = labels.size(), per = spec.patches * spec.patch_dim;
  if (ids.size() != n || patches.size() != n * per) {
    throw FormatError(FormatError::Kind::kSchema, "inconsistent tensor sizes in split " + key);
  }
  std::vector<Example> out(n);
  const auto p = patches.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = static_cast<std::uint64_t>(ids.data()[i]);
    out[i].label = static_cast<std::size_t>(labels.data()[i]);
    out[i].split = split;
    out[i].patches = Tensor({spec.patches, spec.patch_dim},
                            std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(i * per),
                                                p.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
    if (out[i].label >= spec.total_classes()) {
      throw FormatError(FormatError::Kind::kSchema, "label out of range in split " + key);
    }
  }
  return out;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  return std::equal(x.begin(), x.end(), y.begin());
}

bool same_examples(const std::vector<Example>& a, const std::vector<Example>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].label != b[i].label || a[i].split != b[i].split ||
        !same_values(a[i].patches, b[i].patches)) {
      return false;
    }
  }
  return true;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (base_classes < 2) throw ConfigError("data spec: need at least 2 base classes");
  if (novel_classes < 1) throw ConfigError("data spec: need at least 1 novel class");
  if (concept_dim == 0 || patches == 0 || patch_dim == 0 || text_width == 0) {
    throw ConfigError("data spec: dimensions must be positive");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("data spec: noise must be finite and >= 0");
  if (shots == 0) throw ConfigError("data spec: shots must be positive");
  if (pool_per_class() * total_classes() >= (1u << 24)) throw ConfigError("data spec: too many examples");
}

std::string to_string(Split split) { return split_key(split); }

Tensor SyntheticTask::render(std::span<const double> latent, double noise, Rng& rng) const {
  const std::size_t b_count = spec.patches, dc = spec.concept_dim, pd = spec.patch_dim;
  if (latent.size() != dc) throw DimensionError("render: concept width mismatch");
  std::normal_distribution<double> normal;
  std::vector<double> out(b_count * pd);
  const auto maps = patch_maps.data(), off = patch_offsets.data();
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t j = 0; j < pd; ++j) {
      double v = off[b * pd + j];
      for (std::size_t k = 0; k < dc; ++k) v += latent[k] * maps[(b * dc + k) * pd + j];
      out[b * pd + j] = v;
    }
  }
  for (auto& v : out) v = round_f32(v + noise * normal(rng));
  return Tensor({b_count, pd}, std::move(out));
}

Tensor SyntheticTask::class_text_embeddings() const {
  Tensor t = matmul(nullptr, concepts, text_projection);
  round_tensor_f32(t);
  return t;
}

std::vector<std::size_t> SyntheticTask::base_class_ids() const {
  std::vector<std::size_t> ids(spec.base_classes);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

std::vector<std::size_t> SyntheticTask::novel_class_ids() const {
  std::vector<std::size_t> ids(spec.novel_classes);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = spec.base_classes + i;
  return ids;
}

GeneratedTask generate_task(const SyntheticSpec& spec) {
  spec.validate();
  GeneratedTask out;
  SyntheticTask& task = out.task;
  task.spec = spec;
  const std::size_t classes = spec.total_classes(), dc = spec.concept_dim;

  Rng rng(derive_seed({spec.seed, 1}));
  std::normal_distribution<double> normal;
  const double min_sep = 2.0 * spec.noise;
  std::vector<double> concepts;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> u(dc);
    int attempts = 0;
    for (;;) {
      for (auto& x : u) x = round_f32(normal(rng));
      double closest = INFINITY;
      for (std::size_t o = 0; o < c; ++o) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < dc; ++k) d2 += (u[k] - concepts[o * dc + k]) * (u[k] - concepts[o * dc + k]);
        closest = std::min(closest, std::sqrt(d2));
      }
      if (closest >= min_sep) break;
      if (++attempts >= kMaxSeparationAttempts) {
        throw InfeasibleSpecError("cannot place class " + std::to_string(c) + " at separation " +
                                  std::to_string(min_sep) + " after " + std::to_string(kMaxSeparationAttempts) +
                                  " attempts");
      }
    }
    concepts.insert(concepts.end(), u.begin(), u.end());
  }
  task.concepts = Tensor({classes, dc}, std::move(concepts));
  const double map_std = 1.0 / std::sqrt(static_cast<double>(dc));
  task.patch_maps = quantized_gaussian({spec.patches, dc, spec.patch_dim}, map_std, rng);
  task.patch_offsets = quantized_gaussian({spec.patches, spec.patch_dim}, 0.5, rng);
  task.text_projection = quantized_gaussian({dc, spec.text_width}, map_std, rng);

  const std::size_t pool = spec.pool_per_class();
  out.pool.reserve(classes * pool);
  for (std::size_t c = 0; c < classes; ++c) {
    Rng class_rng(derive_seed({spec.seed, 2, c}));
    const auto u = task.concepts.data().subspan(c * dc, dc);
    for (std::size_t k = 0; k < pool; ++k) {
      Example e;
      e.id = c * pool + k;
      e.label = c;
      e.patches = task.render(u, spec.noise, class_rng);
      out.pool.push_back(std::move(e));
    }
  }
  return out;
}

Dataset split_base_novel(const GeneratedTask& generated, std::size_t shot_count) {
  const auto& spec = generated.task.spec;
  const std::size_t pool = spec.pool_per_class();
  if (shot_count > pool) {
    throw ConfigError("insufficient pool: " + std::to_string(shot_count) + " shots requested from " +
                      std::to_string(pool) + " examples per class");
  }
  if (generated.pool.size() != pool * spec.total_classes()) throw ConfigError("pool size does not match spec");
  Dataset d;
  d.task = generated.task;
  for (std::size_t c = 0; c < spec.total_classes(); ++c) {
    std::vector<std::size_t> order(pool);
    for (std::size_t k = 0; k < pool; ++k) order[k] = c * pool + k;
    Rng rng(derive_seed({spec.seed, 3, c}));
    std::shuffle(order.begin(), order.end(), rng);
    const bool base = c < spec.base_classes;
    for (std::size_t k = 0; k < pool; ++k) {
      Example e = generated.pool[order[k]];
      if (base && k < shot_count) {
        e.split = Split::kBaseTrain;
        d.base_train.push_back(std::move(e));
      } else if (base) {
        e.split = Split::kBaseTest;
        d.base_test.push_back(std::move(e));
      } else if (k >= shot_count) {
        e.split = Split::kNovelTest;
        d.novel_test.push_back(std::move(e));
      }
    }
  }
  return d;
}

Dataset make_dataset(const SyntheticSpec& spec) { return split_base_novel(generate_task(spec), spec.shots); }

bool Dataset::operator==(const Dataset& o) const {
  return spec_to_text(task.spec) == spec_to_text(o.task.spec) && same_values(task.concepts, o.task.concepts) &&
         same_values(task.patch_maps, o.task.patch_maps) && same_values(task.patch_offsets, o.task.patch_offsets) &&
         same_values(task.text_projection, o.task.text_projection) && same_examples(base_train, o.base_train) &&
         same_examples(base_test, o.base_test) && same_examples(novel_test, o.novel_test);
}

std::string spec_to_text(const SyntheticSpec& spec) { return canonical_text(to_json(spec)); }

std::string encode_dataset(const Dataset& data) {
  ContainerContents c;
  c.config_text = canonical_text(Json{{"kind", "dataset"}, {"spec", to_json(data.task.spec)}});
  c.tensors.push_back({"task.concepts", data.task.concepts});
  c.tensors.push_back({"task.patch_maps", data.task.patch_maps});
  c.tensors.push_back({"task.patch_offsets", data.task.patch_offsets});
  c.tensors.push_back({"task.text_projection", data.task.text_projection});
  append_split(c, data.base_train, Split::kBaseTrain, data.task.spec);
  append_split(c, data.base_test, Split::kBaseTest, data.task.spec);
  append_split(c, data.novel_test, Split::kNovelTest, data.task.spec);
  return encode_container(c);
}

Dataset decode_dataset(const std::string& bytes) {
  const ContainerContents c = decode_container(bytes, false);
  Json header;
  try {
    header = parse_json_text(c.config_text);
  } catch (const std::exception& e) {
    throw FormatError(FormatError::Kind::kSchema, std::string("dataset header: ") + e.what());
  }
  if (!header.is_object() || header.value("kind", "") != "dataset" || !header.contains("spec")) {
    throw FormatError(FormatError::Kind::kSchema, "container is not a dataset");
  }
  Dataset d;
  d.task.spec = synthetic_spec_from_json(header.at("spec"));
  d.task.concepts = c.find("task.concepts");
  d.task.patch_maps = c.find("task.patch_maps");
  d.task.patch_offsets = c.find("task.patch_offsets");
  d.task.text_projection = c.find("task.text_projection");
  d.base_train = read_split(c, Split::kBaseTrain, d.task.spec);
  d.base_test = read_split(c, Split::kBaseTest, d.task.spec);
  d.novel_test = read_split(c, Split::kNovelTest, d.task.spec);
  return d;
}

void save_dataset(const Dataset& data, const std::string& path) { write_file(path, encode_dataset(data)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace vamp
