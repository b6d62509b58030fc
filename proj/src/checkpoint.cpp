#include "ldalign/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "ldalign/errors.hpp"

namespace ldalign {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kData = "params.bin";

json read_manifest(const std::string& dir) {
  const fs::path path = fs::path(dir) / kManifest;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint manifest: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace

void write_checkpoint(const std::string& dir, const std::string& kind, const json& config,
                      const ParamTable& table, std::span<const float> values) {
  if (values.size() != table.total()) throw ConfigError("checkpoint: value count mismatch");
  if (!all_finite(values)) throw NonFiniteError("checkpoint: refusing to save non-finite values");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir + ": " + ec.message());

  const fs::path data_path = fs::path(dir) / kData;
  {
    std::ofstream out(data_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + data_path.string());
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + data_path.string());
  }

  json arrays = json::array();
  for (const auto& e : table.entries()) {
    arrays.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
  }
  const json manifest = {{"format_version", kCheckpointFormatVersion},
                         {"kind", kind},
                         {"config", config},
                         {"dtype", "float32"},
                         {"byte_order", "little"},
                         {"parameter_count", table.total()},
                         {"arrays", arrays},
                         {"data_file", kData},
                         {"content_hash", content_hash(values)}};
  const fs::path man_path = fs::path(dir) / kManifest;
  const fs::path tmp = man_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, man_path, ec);
  if (ec) throw IoError("cannot finalize manifest " + man_path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::string& dir) {
  const json manifest = read_manifest(dir);
  Checkpoint ck;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw IoError("unsupported checkpoint format version in " + dir);
    }
    if (manifest.at("dtype").get<std::string>() != "float32") {
      throw IoError("unsupported checkpoint dtype in " + dir);
    }
    ck.kind = manifest.at("kind").get<std::string>();
    ck.config = manifest.at("config");
    ck.content_hash = manifest.at("content_hash").get<std::string>();
    std::size_t expected_offset = 0;
    for (const auto& a : manifest.at("arrays")) {
      ParamEntry e;
      e.name = a.at("name").get<std::string>();
      e.shape = a.at("shape").get<std::vector<std::size_t>>();
      e.offset = a.at("offset").get<std::size_t>();
      e.size = 1;
      for (auto s : e.shape) e.size *= s;
      if (e.offset != expected_offset) throw IoError("checkpoint arrays are not contiguous: " + dir);
      expected_offset += e.size;
      ck.arrays.push_back(std::move(e));
    }
    if (expected_offset != manifest.at("parameter_count").get<std::size_t>()) {
      throw IoError("checkpoint parameter count mismatch: " + dir);
    }
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir + ": " + e.what());
  }

  const std::size_t n = ck.arrays.empty() ? 0 : ck.arrays.back().offset + ck.arrays.back().size;
  const fs::path data_path = fs::path(dir) / kData;
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + data_path.string());
  ck.values.resize(n);
  in.read(reinterpret_cast<char*>(ck.values.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float) || in.peek() != EOF) {
    throw IoError("checkpoint data size mismatch: " + data_path.string());
  }
  if (content_hash(ck.values) != ck.content_hash) {
    throw IoError("checkpoint content hash mismatch: " + dir);
  }
  return ck;
}

std::string checkpoint_hash(const std::string& dir) {
  const json manifest = read_manifest(dir);
  return manifest.value("content_hash", std::string());
}

void check_layout(const std::vector<ParamEntry>& arrays, const ParamTable& table) {
  const auto& want = table.entries();
  if (arrays.size() != want.size()) throw ConfigError("checkpoint array count does not match model");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (arrays[i].name != want[i].name || arrays[i].shape != want[i].shape) {
      throw ConfigError("checkpoint array " + arrays[i].name + " does not match model array " +
                        want[i].name);
    }
  }
}

}  // namespace ldalign
