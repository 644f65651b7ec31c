#include "placekd/checkpoint.h"

#include "placekd/container.h"
#include "placekd/errors.h"

namespace placekd {
namespace fs = std::filesystem;

void save_checkpoint(const Model<float>& model, const fs::path& path) {
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& n : model.nets) nets.push_back(n.config().to_json());
  nlohmann::json desc = {{"kind", to_string(model.kind)},
                         {"levels", model.levels},
                         {"input", model.input.to_json()},
                         {"nets", nets},
                         {"transform", nullptr}};
  if (model.transform) {
    desc["transform"] = {{"in_dim", model.transform->in_dim()},
                         {"out_dim", model.transform->out_dim()},
                         {"bias", model.transform->use_bias()},
                         {"renormalize", model.transform->renormalize()}};
  }

  std::vector<std::string> names;
  for (std::size_t i = 0; i < model.nets.size(); ++i) {
    for (const auto& n : Backbone<float>::param_names()) names.push_back("net" + std::to_string(i) + "." + n);
  }
  if (model.transform) {
    names.push_back("transform.weight");
    names.push_back("transform.bias");
  }

  nlohmann::json index = nlohmann::json::array();
  std::vector<float> body;
  const auto tensors = model.param_tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    index.push_back({{"name", names[i]}, {"offset", body.size()}, {"count", tensors[i]->size()}});
    body.insert(body.end(), tensors[i]->begin(), tensors[i]->end());
  }
  nlohmann::json header = {{"format", "placekd-checkpoint"},
                           {"format_version", kCheckpointFormatVersion},
                           {"model", desc},
                           {"tensors", index}};
  write_container(path, header, body);
}

Model<float> load_checkpoint(const fs::path& path, const std::optional<BackboneConfig>& expected) {
  Container c = read_container(path);
  const auto& h = c.header;
  if (h.value("format", std::string()) != "placekd-checkpoint") {
    throw LoadError(path.string() + " is not a checkpoint");
  }
  const int version = h.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw LoadError(path.string() + ": checkpoint format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointFormatVersion));
  }
  Model<float> m;
  try {
    const auto& desc = h.at("model");
    m.kind = parse_model_kind(desc.at("kind").get<std::string>());
    m.levels = desc.at("levels").get<std::vector<int>>();
    m.input = InputSpec::from_json(desc.at("input"));
    for (const auto& nc : desc.at("nets")) m.nets.emplace_back(BackboneConfig::from_json(nc));
    if (!desc.at("transform").is_null()) {
      const auto& t = desc.at("transform");
      m.transform = Transformation<float>(t.at("in_dim").get<int>(), t.at("out_dim").get<int>(), t.at("bias").get<bool>(),
                                           t.value("renormalize", false));
    }
    auto tensors = m.param_tensors();
    const auto& index = h.at("tensors");
    if (index.size() != tensors.size()) throw LoadError(path.string() + ": tensor count does not match model");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const std::size_t offset = index[i].at("offset").get<std::size_t>();
      const std::size_t count = index[i].at("count").get<std::size_t>();
      if (count != tensors[i]->size() || offset + count > c.body.size()) {
        throw LoadError(path.string() + ": tensor '" + index[i].at("name").get<std::string>() + "' has wrong size");
      }
      std::copy(c.body.begin() + static_cast<std::ptrdiff_t>(offset),
                c.body.begin() + static_cast<std::ptrdiff_t>(offset + count), tensors[i]->begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  if (m.nets.empty()) throw LoadError(path.string() + ": checkpoint has no backbone");
  if (expected && !(m.nets.front().config() == *expected)) {
    throw LoadError(path.string() + ": backbone config mismatch (checkpoint input_channels " +
                    std::to_string(m.nets.front().config().input_channels) + ", expected " +
                    std::to_string(expected->input_channels) + ")");
  }
  return m;
}

}  // namespace placekd
