#pragma once

// Model checkpoints: a directory holding manifest.json plus one tensor file
// per named parameter.

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "json.hpp"
#include "sonic/error.hpp"
#include "sonic/fusion.hpp"
#include "sonic/tensor_file.hpp"

namespace sonic::checkpoint {

inline constexpr const char* kManifestName = "manifest.json";

template <typename T>
void save(const std::filesystem::path& dir, fusion::Classifier<T>& model, const nlohmann::json& extra = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  for (auto& [name, p] : model.named_parameters()) {
    const std::string file = name + ".spt";
    io::write_tensor_file(dir / file, p->value);
    params.push_back({{"name", name}, {"file", file}, {"shape", p->value.shape}});
  }
  nlohmann::json manifest = {{"model", model.spec().to_json()},
                             {"layers", model.layer_descriptions()},
                             {"parameters", params}};
  if (!extra.is_null()) manifest["extra"] = extra;
  std::ofstream out(dir / kManifestName, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

template <typename T>
std::unique_ptr<fusion::Classifier<T>> load(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName, std::ios::binary);
  if (!in) throw DataError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  std::unique_ptr<fusion::Classifier<T>> model;
  try {
    model = fusion::make_classifier<T>(fusion::ModelSpec::from_json(manifest.at("model")));
    auto params = model->named_parameters();
    const auto& entries = manifest.at("parameters");
    if (entries.size() != params.size()) throw DataError("checkpoint parameter count mismatch in " + dir.string());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, p] = params[i];
      if (entries[i].at("name").get<std::string>() != name) {
        throw DataError("checkpoint parameter " + std::to_string(i) + " is not " + name);
      }
      auto value = io::read_tensor_file_as<T>(dir / entries[i].at("file").get<std::string>());
      if (value.shape != p->value.shape) throw DataError("checkpoint parameter " + name + " has the wrong shape");
      p->value = std::move(value);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  return model;
}

}  // namespace sonic::checkpoint
