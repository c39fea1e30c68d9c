#include "dssd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "json.hpp"

#include "dssd/blocks.hpp"
#include "dssd/errors.hpp"
#include "dssd/postprocess.hpp"

namespace dssd {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'S', 'D', 'C', 'K', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void put_float(std::vector<std::uint8_t>& out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kSsd:
      return "ssd";
    case Stage::kDssdStage1:
      return "dssd_stage1";
    case Stage::kDssdStage2:
      return "dssd_stage2";
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  if (s == "ssd") return Stage::kSsd;
  if (s == "dssd_stage1") return Stage::kDssdStage1;
  if (s == "dssd_stage2") return Stage::kDssdStage2;
  throw FormatError("checkpoint: unknown stage '" + std::string(s) + "'");
}

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["stage"] = std::string(to_string(ckpt.stage));
  manifest["fingerprint"] = ckpt.fingerprint;
  manifest["iteration"] = ckpt.iteration;
  manifest["rng"] = ckpt.rng_state;
  manifest["folded"] = ckpt.folded;
  manifest["spec"] = nlohmann::json::parse(to_json(ckpt.spec));
  auto& list = manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const Shape& s = t.shape();
    list.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += t.size() * 4;
  }
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(16 + text.size() + offset + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& entry : ckpt.tensors) {
    for (float f : entry.second.data()) put_float(out, f);
  }
  put_u32(out, crc32_of(out));
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20) throw FormatError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::size_t body = bytes.size() - 4;
  if (crc32_of(bytes.first(body)) != get_u32(bytes, body)) {
    throw FormatError("checkpoint: CRC mismatch");
  }
  const std::uint32_t manifest_len = get_u32(bytes, 12);
  if (16 + static_cast<std::size_t>(manifest_len) > body) {
    throw FormatError("checkpoint: manifest length exceeds file");
  }
  const std::size_t data_start = 16 + manifest_len;

  Checkpoint ckpt;
  try {
    const auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + data_start);
    ckpt.stage = stage_from_string(manifest.at("stage").get<std::string>());
    ckpt.fingerprint = manifest.at("fingerprint").get<std::string>();
    ckpt.iteration = manifest.at("iteration").get<std::int64_t>();
    ckpt.rng_state = manifest.at("rng").get<std::string>();
    ckpt.folded = manifest.at("folded").get<bool>();
    ckpt.spec = spec_from_json(manifest.at("spec").dump());
    std::size_t expected = 0;
    for (const auto& e : manifest.at("tensors")) {
      const auto dims = e.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw FormatError("tensor shape needs 4 dims");
      const Shape shape{dims[0], dims[1], dims[2], dims[3]};
      const auto offset = e.at("offset").get<std::size_t>();
      if (offset != expected) throw FormatError("tensor offsets are not contiguous");
      const std::size_t len = shape.numel() * 4;
      if (data_start + offset + len > body) throw FormatError("tensor data exceeds file");
      std::vector<float> values(shape.numel());
      for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<float>(get_u32(bytes, data_start + offset + 4 * i));
      }
      ckpt.tensors.emplace_back(e.at("name").get<std::string>(), Tensor(shape, std::move(values)));
      expected = offset + len;
    }
    if (data_start + expected != body) throw FormatError("trailing bytes after tensor data");
  } catch (const FormatError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

Checkpoint capture(const NetworkGraph& graph, const PyramidSpec& spec, Stage stage) {
  Checkpoint ckpt;
  ckpt.stage = stage;
  ckpt.spec = spec;
  ckpt.fingerprint = spec.fingerprint();
  graph.for_each_param([&](const std::string& name, const Tensor& t, bool) {
    ckpt.tensors.emplace_back(name, Tensor(t.shape(), std::vector<float>(t.data().begin(), t.data().end())));
  });
  return ckpt;
}

void load_into(NetworkGraph& graph, const Checkpoint& ckpt) {
  if (ckpt.fingerprint != ckpt.spec.fingerprint()) {
    throw SpecError("checkpoint: fingerprint " + ckpt.fingerprint +
                    " does not match its geometry (" + ckpt.spec.fingerprint() + ")");
  }
  std::size_t params = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.starts_with(kMomentumPrefix)) continue;
    if (!graph.has_param(name)) throw SpecError("checkpoint: unexpected tensor " + name);
    ++params;
  }
  graph.for_each_param([&](ParamView p) {
    const Tensor* src = ckpt.find(p.name);
    if (src == nullptr) throw SpecError("checkpoint: missing parameter " + p.name);
    if (src->shape() != p.value.shape()) {
      throw SpecError("checkpoint: " + p.name + " has shape " + src->shape().str() +
                      ", graph expects " + p.value.shape().str());
    }
    std::copy(src->data().begin(), src->data().end(), p.value.data().begin());
  });
  if (params != graph.param_names(false).size()) {
    throw SpecError("checkpoint: parameter listed more than once");
  }
}

NetworkGraph build_graph(const Checkpoint& ckpt) {
  NetworkGraph g = assemble_ssd(ckpt.spec, 0);
  if (ckpt.stage != Stage::kSsd) g = assemble_dssd(g, ckpt.spec, 0);
  if (ckpt.folded) g = fold_network(g);
  load_into(g, ckpt);
  if (ckpt.stage == Stage::kDssdStage1) {
    for (const auto& name : g.param_names(true)) {
      if (!is_decoder_param(name)) g.freeze(name);
    }
  }
  return g;
}

}  // namespace dssd
