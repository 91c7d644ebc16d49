#include "iagn/checkpoint.hpp"

#include <fstream>
#include <iomanip>
#include <memory>
#include <span>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "iagn/errors.hpp"

namespace iagn::checkpoint {

std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx.get(), header.data(), header.size());
  EVP_DigestUpdate(ctx.get(), content.data(), content.size());
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned char b : std::span(digest, len)) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return hex.str();
}

std::string git_blob_sha1_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return git_blob_sha1(buf.str());
}

nlohmann::json metrics_to_json(const training::EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch},
                      {"learning_rate", m.learning_rate},
                      {"step_ce", m.step_ce},
                      {"step_kd", m.step_kd},
                      {"step_total", m.step_total}};
  if (m.eval) {
    j["accuracy"] = {{"s3", m.eval->head_accuracy[0]},
                     {"s4", m.eval->head_accuracy[1]},
                     {"s5", m.eval->head_accuracy[2]},
                     {"concat", m.eval->head_accuracy[3]},
                     {"combined", m.eval->combined_accuracy}};
  }
  return j;
}

fs::path save(const fs::path& dir, const std::string& stem, model::IagnNet& net, torch::optim::Optimizer* optimizer,
              const training::TrainConfig& config, const CheckpointInfo& info) {
  fs::create_directories(dir);
  const auto weights = dir / (stem + ".pt");
  torch::save(net, weights.string());

  nlohmann::json optimizer_file = nullptr;
  if (optimizer != nullptr) {
    const auto opt_path = dir / (stem + ".optim.pt");
    torch::save(*optimizer, opt_path.string());
    optimizer_file = opt_path.filename().string();
  }

  nlohmann::json history = nlohmann::json::array();
  for (const auto& m : info.history) history.push_back(metrics_to_json(m));

  const nlohmann::json sidecar = {{"format", "iagn-checkpoint"},
                                  {"format_version", kFormatVersion},
                                  {"weights_file", weights.filename().string()},
                                  {"weights_sha1", git_blob_sha1_file(weights)},
                                  {"optimizer_file", optimizer_file},
                                  {"epoch", info.epoch},
                                  {"seed", config.optim.seed},
                                  {"config", config},
                                  {"class_names", info.class_names},
                                  {"metric_history", history}};
  const auto sidecar_path = dir / (stem + ".json");
  std::ofstream(sidecar_path) << sidecar.dump(2) << '\n';
  return sidecar_path;
}

Loaded load(const fs::path& path) {
  fs::path sidecar_path = path;
  if (path.extension() == ".pt") sidecar_path.replace_extension(".json");
  if (!fs::is_regular_file(sidecar_path)) throw ConfigError("checkpoint sidecar not found: " + sidecar_path.string());

  Loaded out;
  {
    std::ifstream in(sidecar_path);
    try {
      out.sidecar = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("checkpoint sidecar " + sidecar_path.string() + " is not valid JSON: " + e.what());
    }
  }
  if (out.sidecar.value("format", "") != "iagn-checkpoint") {
    throw ConfigError("not an iagn checkpoint sidecar: " + sidecar_path.string());
  }
  if (out.sidecar.value("format_version", 0) != kFormatVersion) {
    throw ConfigError(fmt::format("unsupported checkpoint format_version {}", out.sidecar.value("format_version", 0)));
  }
  try {
    out.sidecar.at("config").get_to(out.config);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint config: ") + e.what());
  }
  out.weights_path = sidecar_path.parent_path() / out.sidecar.at("weights_file").get<std::string>();
  if (!fs::is_regular_file(out.weights_path)) throw ConfigError("checkpoint weights not found: " + out.weights_path.string());
  const auto expected = out.sidecar.value("weights_sha1", "");
  if (git_blob_sha1_file(out.weights_path) != expected) {
    throw ConfigError("checkpoint weights hash mismatch for " + out.weights_path.string());
  }
  out.net = model::IagnNet(out.config.model);
  torch::load(out.net, out.weights_path.string());
  out.net->eval();
  return out;
}

}  // namespace iagn::checkpoint
