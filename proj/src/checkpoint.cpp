#include "vamp/checkpoint.hpp"

#include <set>

#include "vamp/container.hpp"

namespace vamp {

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ModelBundle model = ckpt.model;
  ContainerContents c;
  c.config_text = canonical_text(Json{{"kind", "checkpoint"},
                                      {"run", ckpt.config.to_json()},
                                      {"classes", model.num_classes()},
                                      {"base_classes", model.base_classes},
                                      {"mode", to_string(model.mode)}});
  for (auto& [name, t] : model.named_parameters()) c.tensors.push_back({name, *t});
  c.has_trailer = true;
  c.rng_state = ckpt.rng_state;
  const auto& pt = ckpt.prototypes;
  for (std::size_t k = 0; k < pt.num_classes(); ++k) {
    c.prototypes.support.push_back(pt.support[k]);
    c.prototypes.vectors.push_back(pt.has(k) ? pt.vectors[k].to_vector()
                                             : std::vector<double>(model.config.embed_dim, 0.0));
  }
  return encode_container(c);
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const ContainerContents c = decode_container(bytes, true);
  auto schema = [](const std::string& msg) { return FormatError(FormatError::Kind::kSchema, "checkpoint: " + msg); };
  Json header;
  try {
    header = parse_json_text(c.config_text);
  } catch (const std::exception& e) {
    throw schema(e.what());
  }
  if (!header.is_object() || header.value("kind", "") != "checkpoint") throw schema("container is not a checkpoint");
  Checkpoint ck;
  try {
    ck.config = RunConfig::from_json(header.at("run"));
    const auto classes = header.at("classes").get<std::size_t>();
    const auto base = header.at("base_classes").get<std::size_t>();
    const auto mode = ablation_mode_from_string(header.at("mode").get<std::string>());
    ck.model = model_skeleton(ck.config.encoder, classes, base, mode);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw schema(std::string("bad header: ") + e.what());
  }
  std::set<std::string> expected;
  for (auto& [name, t] : ck.model.named_parameters()) {
    expected.insert(name);
    const Tensor& stored = c.find(name);
    if (stored.shape() != t->shape()) {
      throw schema("tensor " + name + " has shape " + shape_str(stored.shape()) + ", expected " +
                   shape_str(t->shape()));
    }
    const bool grad = t->requires_grad();
    *t = stored.detach();
    if (grad) t->set_requires_grad(true);
  }
  for (const auto& nt : c.tensors) {
    if (!expected.count(nt.name)) throw schema("unexpected tensor " + nt.name);
  }
  ck.model.refresh_caches();
  ck.rng_state = c.rng_state;
  const auto& pb = c.prototypes;
  if (!pb.support.empty() && pb.support.size() != ck.model.num_classes()) {
    throw schema("prototype block does not cover every class");
  }
  ck.prototypes.support = pb.support;
  ck.prototypes.vectors.resize(pb.support.size());
  for (std::size_t k = 0; k < pb.support.size(); ++k) {
    if (pb.vectors[k].size() != ck.model.config.embed_dim) throw schema("prototype width mismatch");
    if (pb.support[k] > 0) ck.prototypes.vectors[k] = Tensor({1, pb.vectors[k].size()}, pb.vectors[k]);
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace vamp
