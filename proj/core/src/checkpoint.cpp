#include "r2m/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "r2m/config_json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

namespace r2m {

using nlohmann::json;

nlohmann::json to_json(const ModelConfig& cfg) {
  return json{{"input_size", cfg.input_size},
              {"stem_channels", cfg.stem_channels},
              {"block_channels", cfg.block_channels},
              {"units_per_block", cfg.units_per_block},
              {"num_radiology_classes", cfg.num_radiology_classes},
              {"num_malignancy_classes", cfg.num_malignancy_classes},
              {"se_reduction_ratio", cfg.se_reduction_ratio},
              {"loss_lambda", cfg.loss_lambda},
              {"variant", to_string(cfg.variant)}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.input_size = j.at("input_size").get<int>();
  cfg.stem_channels = j.at("stem_channels").get<int>();
  cfg.block_channels = j.at("block_channels").get<std::array<int, 4>>();
  cfg.units_per_block = j.at("units_per_block").get<int>();
  cfg.num_radiology_classes = j.at("num_radiology_classes").get<int>();
  cfg.num_malignancy_classes = j.at("num_malignancy_classes").get<int>();
  cfg.se_reduction_ratio = j.at("se_reduction_ratio").get<int>();
  cfg.loss_lambda = j.at("loss_lambda").get<double>();
  if (j.contains("variant")) {
    cfg.variant = net_variant_from_string(j.at("variant").get<std::string>());
  }
  cfg.validate();
  return cfg;
}

namespace {

constexpr char kMagic[8] = {'R', '2', 'M', 'P', 'A', 'R', 'A', 'M'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError(std::string("checkpoint: truncated while reading ") + what);
  }
  return v;
}

std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError(std::string("checkpoint: truncated while reading ") + what);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const R2MNetParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path.string());

  os.write(kMagic, sizeof kMagic);
  const std::string cfg = to_json(params.config).dump();
  write_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u32(os, static_cast<std::uint32_t>(params.tensor_count()));

  params.for_each([&os](const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) write_u64(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  });
  if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

R2MNetParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path.string());

  char magic[8] = {};
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  const std::uint32_t cfg_len = read_u32(is, "config length");
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), cfg_len)) {
    throw IoError("checkpoint: truncated config in " + path.string());
  }
  json cfg_json;
  try {
    cfg_json = json::parse(cfg_text);
  } catch (const json::parse_error& e) {
    throw IoError("checkpoint: malformed config JSON: " + std::string(e.what()));
  }
  const ModelConfig cfg = model_config_from_json(cfg_json);

  R2MNetParams params = R2MNetParams::zeros(cfg);
  const std::uint32_t expected = read_u32(is, "tensor count");
  if (expected != params.tensor_count()) {
    throw IoError("checkpoint: holds " + std::to_string(expected) +
                  " tensors but the config implies " +
                  std::to_string(params.tensor_count()));
  }
  params.for_each([&is, &path](const std::string& name, Tensor& t) {
    const std::uint32_t name_len = read_u32(is, "tensor name length");
    std::string stored(name_len, '\0');
    if (!is.read(stored.data(), name_len)) {
      throw IoError("checkpoint: truncated tensor name in " + path.string());
    }
    if (stored != name) {
      throw IoError("checkpoint: expected tensor '" + name + "', found '" +
                    stored + "'");
    }
    const std::uint32_t rank = read_u32(is, "tensor rank");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::int64_t>(read_u64(is, "tensor extent"));
    if (shape != t.shape()) {
      throw IoError("checkpoint: tensor '" + name + "' has shape " +
                    shape_str(shape) + " but the config implies " +
                    shape_str(t.shape()));
    }
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw IoError("checkpoint: truncated tensor data for '" + name + "'");
    }
    t = Tensor::from(std::move(data), std::move(shape));
  });
  return params;
}

}  // namespace r2m
