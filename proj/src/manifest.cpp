#include "tlab/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace tlab {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("sha256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw std::runtime_error("sha256 final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 0xf]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["args"] = args;
  j["config_hash"] = config_hash ? nlohmann::ordered_json(*config_hash) : nlohmann::ordered_json(nullptr);
  j["dataset_hash"] = dataset_hash ? nlohmann::ordered_json(*dataset_hash) : nlohmann::ordered_json(nullptr);
  j["seed"] = seed;
  j["tool_version"] = tool_version;
  j["wall_clock_s"] = wall_clock_s;
  auto outs = nlohmann::ordered_json::array();
  for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"sha256", o.sha256}});
  j["outputs"] = std::move(outs);
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    if (!j.at("config_hash").is_null()) m.config_hash = j.at("config_hash").get<std::string>();
    if (!j.at("dataset_hash").is_null()) m.dataset_hash = j.at("dataset_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.wall_clock_s = j.at("wall_clock_s").get<double>();
    for (const auto& o : j.at("outputs")) m.outputs.push_back({o.at("path").get<std::string>(), o.at("sha256").get<std::string>()});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
}

std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

void write_manifest(const std::string& output, const RunManifest& manifest) {
  std::ofstream out(manifest_path(output), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + manifest_path(output));
  out << manifest.to_json();
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return RunManifest::from_json(buf.str());
}

}  // namespace tlab
