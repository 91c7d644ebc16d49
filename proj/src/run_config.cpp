#include "iagn/run_config.hpp"

#include <fstream>
#include <set>

#include "iagn/errors.hpp"

namespace iagn::config {

namespace {
const std::set<std::string> kSections = {"profile", "data_dir", "output_dir", "model", "optim", "schedule", "augment"};
}

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = c.train;
  j["profile"] = c.profile;
  j["data_dir"] = c.data_dir;
  j["output_dir"] = c.output_dir;
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  c.profile = j.value("profile", c.profile);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.output_dir = j.value("output_dir", c.output_dir);
  j.get_to(c.train);
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value, got '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);

  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }

  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (!kSections.contains(parts.front())) throw ConfigError("unknown config section in override: '" + key + "'");

  nlohmann::json* node = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    auto& next = (*node)[parts[i]];
    if (next.is_null()) next = nlohmann::json::object();
    if (!next.is_object()) throw ConfigError("override path '" + key + "' crosses a non-object field");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

RunConfig resolve(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : doc.items()) {
    if (!kSections.contains(k)) throw ConfigError("unknown config field '" + k + "'");
  }
  const nlohmann::json defaults = training::TrainConfig{};
  for (const char* section : {"model", "optim", "augment"}) {
    if (!doc.contains(section)) continue;
    if (!doc.at(section).is_object()) throw ConfigError(std::string("config field '") + section + "' must be an object");
    for (const auto& [k, v] : doc.at(section).items()) {
      if (!defaults.at(section).contains(k)) throw ConfigError("unknown config field '" + std::string(section) + "." + k + "'");
    }
  }
  RunConfig c;
  for (const char* section : {"model", "optim", "augment", "schedule"}) {
    if (!doc.contains(section)) continue;
    try {
      nlohmann::json partial = {{section, doc.at(section)}};
      partial.get_to(c.train);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid field in '") + section + "': " + e.what());
    } catch (const SpecError& e) {
      throw ConfigError(std::string("invalid field in '") + section + "': " + e.what());
    }
  }
  try {
    c.profile = doc.value("profile", c.profile);
    c.data_dir = doc.value("data_dir", c.data_dir);
    c.output_dir = doc.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid top-level field: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace iagn::config
