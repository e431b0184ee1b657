#include "rtrans/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace rtrans {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'R', 'T', 'R', 'A', 'N', 'S', 'C', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

json config_to_json(const ModelConfig& c) {
  return json{{"segment_len", c.segment_len},
              {"feature_dim", c.feature_dim},
              {"num_classes", c.num_classes},
              {"num_categories", c.num_categories},
              {"heads", c.heads},
              {"mlp_hidden", c.mlp_hidden},
              {"seed", c.seed},
              {"average_probabilities", c.average_probabilities}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.segment_len = j.at("segment_len").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.num_categories = j.at("num_categories").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.average_probabilities = j.at("average_probabilities").get<bool>();
  return c;
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params) {
  json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config_to_json(params.config);
  json dir = json::array();
  for (const ParamSet::Entry& e : params.params.entries) {
    dir.push_back(
        {{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}});
  }
  header["params"] = std::move(dir);
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw CheckpointError("cannot open '" + path.string() + "' for writing");
  }
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  const std::uint64_t header_len = header_str.size();
  write_pod(out, header_len);
  out.write(header_str.data(), static_cast<std::streamsize>(header_len));
  for (const ParamSet::Entry& e : params.params.entries) {
    out.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(
                  static_cast<std::size_t>(e.value.size()) * sizeof(double)));
  }
  if (!out) throw CheckpointError("write failed for '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  }
  std::uint32_t version = 0;
  read_pod(in, version);
  if (version != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  std::uint64_t header_len = 0;
  read_pod(in, header_len);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated header in '" + path.string() + "'");

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }

  ModelParams params;
  params.config = config_from_json(header.at("config"));
  for (const json& d : header.at("params")) {
    Matrix m(d.at("rows").get<Eigen::Index>(), d.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(static_cast<std::size_t>(m.size()) *
                                         sizeof(double)));
    if (!in) {
      throw CheckpointError("truncated parameter data in '" + path.string() +
                            "'");
    }
    params.params.add(d.at("name").get<std::string>(), std::move(m));
  }
  return params;
}

ModelParams load_checkpoint(const std::filesystem::path& path,
                            const ModelConfig& expected) {
  ModelParams params = load_checkpoint(path);
  if (!params.config.same_architecture(expected)) {
    throw ConfigError("checkpoint '" + path.string() +
                      "' was written with a different model architecture");
  }
  return params;
}

}  // namespace rtrans
