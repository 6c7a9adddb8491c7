#include "provlm/registry/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <regex>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/sha256.hpp"

namespace provlm::registry {

namespace fs = std::filesystem;
using model::DType;

namespace {

constexpr char kMagic[4] = {'L', 'C', 'K', 'P'};
constexpr char kHashTag[4] = {'H', 'A', 'S', 'H'};
constexpr std::size_t kTrailerBytes = 4 + 32;

struct Section {
  std::string name;
  DType dtype = DType::u8;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> payload;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

std::size_t dtype_bytes(DType d) {
  switch (d) {
    case DType::u8: return 1;
    case DType::bf16: return 2;
    case DType::f32: return 4;
    case DType::f64:
    case DType::u64: return 8;
  }
  throw CheckpointError("unknown dtype");
}

std::vector<std::uint8_t> f32_payload(std::span<const float> v) {
  ByteWriter w;
  for (float f : v) w.u32(std::bit_cast<std::uint32_t>(f));
  return std::move(w.buffer());
}

std::vector<std::uint8_t> bf16_payload(std::span<const float> v) {
  ByteWriter w;
  for (float f : v) w.u16(float_to_bf16(f));
  return std::move(w.buffer());
}

void read_floats(const Section& s, std::span<float> out) {
  ByteReader r(s.payload);
  if (s.dtype == DType::f32) {
    for (float& f : out) f = std::bit_cast<float>(r.u32());
  } else if (s.dtype == DType::bf16) {
    for (float& f : out) f = bf16_to_float(r.u16());
  } else {
    throw CheckpointError("section " + s.name + ": unsupported dtype " + model::to_string(s.dtype));
  }
}

std::vector<std::uint64_t> shape_of(const model::TensorSpec& t) {
  return {t.shape.begin(), t.shape.end()};
}

std::string shape_str(const std::vector<std::uint64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

std::uint16_t float_to_bf16(float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  if ((bits & 0x7f800000u) == 0x7f800000u && (bits & 0x007fffffu) != 0)
    return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);  // quiet NaN
  const std::uint32_t rounding = 0x7fffu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>((bits + rounding) >> 16);
}

float bf16_to_float(std::uint16_t b) { return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16); }

std::string checkpoint_file_name(std::uint32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%05u.lckp", index);
  return buf;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  const model::ParameterLayout layout = model::make_layout(c.params.config);
  if (c.params.values.size() != layout.total) throw CheckpointError("parameter buffer does not match config");

  std::vector<Section> sections;
  nlohmann::ordered_json meta;
  meta["schema_version"] = c.schema_version;
  meta["index"] = c.index;
  meta["step"] = c.step;
  meta["precision_tag"] = trainer::to_string(c.precision);
  meta["manifest_checksum"] = c.manifest_checksum;
  meta["has_optimizer"] = c.optimizer.has_value();
  meta["model"] = model::to_json(c.params.config);
  meta["run_state"] = c.run_state;
  const std::string meta_text = meta.dump();
  sections.push_back({"meta", DType::u8, {meta_text.size()}, {meta_text.begin(), meta_text.end()}});

  const bool half = c.precision == CheckpointPrecision::half;
  for (const auto& t : layout.tensors) {
    auto v = c.params.tensor(t);
    sections.push_back({"param/" + t.name, half ? DType::bf16 : DType::f32, shape_of(t),
                        half ? bf16_payload(v) : f32_payload(v)});
  }
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    if (o.m.size() != layout.total || o.v.size() != layout.total)
      throw CheckpointError("optimizer state does not match parameter layout");
    for (const auto& t : layout.tensors)
      sections.push_back({"optim/m/" + t.name, DType::f32, shape_of(t),
                          f32_payload(std::span(o.m).subspan(t.offset, t.size))});
    for (const auto& t : layout.tensors)
      sections.push_back({"optim/v/" + t.name, DType::f32, shape_of(t),
                          f32_payload(std::span(o.v).subspan(t.offset, t.size))});
    ByteWriter w;
    w.u64(o.t);
    sections.push_back({"optim/step", DType::u64, {1}, std::move(w.buffer())});
  }
  sections.push_back({"rng", DType::u8, {c.rng_state.size()}, c.rng_state});

  std::uint64_t table_bytes = 12;
  for (const auto& s : sections) table_bytes += 2 + s.name.size() + 8 + 8 + 1 + 1 + 8 * s.shape.size();
  std::uint64_t offset = table_bytes;
  for (auto& s : sections) {
    s.offset = offset;
    s.length = s.payload.size();
    offset += s.length;
  }

  ByteWriter w;
  w.str(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    w.u16(static_cast<std::uint16_t>(s.name.size()));
    w.str(s.name);
    w.u64(s.offset);
    w.u64(s.length);
    w.u8(static_cast<std::uint8_t>(s.dtype));
    w.u8(static_cast<std::uint8_t>(s.shape.size()));
    for (auto d : s.shape) w.u64(d);
  }
  for (const auto& s : sections) w.bytes(s.payload);
  const Digest d = sha256(w.buffer());
  w.str(std::string_view(kHashTag, 4));
  w.bytes(d);
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const LoadOptions& options, LoadReport* report) {
  if (bytes.size() < 12 + kTrailerBytes || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file (bad magic or too short)");
  const auto body = bytes.first(bytes.size() - kTrailerBytes);
  const auto trailer = bytes.last(kTrailerBytes);
  if (std::memcmp(trailer.data(), kHashTag, 4) != 0) throw CheckpointError("integrity check failed: missing hash trailer");
  const Digest actual = sha256(body);
  if (!std::equal(actual.begin(), actual.end(), trailer.begin() + 4))
    throw CheckpointError("integrity check failed: content hash mismatch");
  if (report) report->content_hash = to_hex(actual);

  ByteReader r(body);
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<Section> sections(count);
  for (auto& s : sections) {
    const auto name = r.take(r.u16());
    s.name.assign(name.begin(), name.end());
    s.offset = r.u64();
    s.length = r.u64();
    s.dtype = static_cast<DType>(r.u8());
    s.shape.resize(r.u8());
    for (auto& d : s.shape) d = r.u64();
    if (s.offset > body.size() || s.length > body.size() - s.offset)
      throw CheckpointError("section " + s.name + " lies outside the file");
    std::uint64_t elems = 1;
    for (auto d : s.shape) elems *= d;
    if (elems * dtype_bytes(s.dtype) != s.length)
      throw CheckpointError("section " + s.name + ": length disagrees with shape");
    s.payload.assign(body.begin() + static_cast<std::ptrdiff_t>(s.offset),
                     body.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length));
  }
  auto find = [&](const std::string& name) -> const Section* {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  };

  const Section* meta_s = find("meta");
  if (!meta_s) throw CheckpointError("missing meta section");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_s->payload.begin(), meta_s->payload.end());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("meta section is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    c.schema_version = meta.at("schema_version").get<int>();
    if (c.schema_version != kCheckpointSchemaVersion)
      throw CheckpointError("unsupported checkpoint schema_version " + std::to_string(c.schema_version));
    c.index = meta.at("index").get<std::uint32_t>();
    c.step = meta.at("step").get<std::uint64_t>();
    const auto tag = meta.at("precision_tag").get<std::string>();
    if (tag != "full" && tag != "half") throw CheckpointError("unknown precision_tag '" + tag + "'");
    c.precision = tag == "half" ? CheckpointPrecision::half : CheckpointPrecision::full;
    c.manifest_checksum = meta.at("manifest_checksum").get<std::string>();
    c.params.config = model::model_config_from_json(meta.at("model"));
    c.run_state = meta.value("run_state", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad meta section: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad model config in meta: ") + e.what());
  }

  if (options.expect_config && !(*options.expect_config == c.params.config))
    throw CheckpointError("model config does not match the expected config");
  if (options.expect_manifest_checksum && *options.expect_manifest_checksum != c.manifest_checksum)
    throw CheckpointError("manifest checksum mismatch: checkpoint has " + c.manifest_checksum + ", expected " +
                          *options.expect_manifest_checksum);

  const model::ParameterLayout layout = model::make_layout(c.params.config);
  auto load_tensors = [&](const std::string& prefix, std::vector<float>& dest) {
    dest.assign(layout.total, 0.0f);
    for (const auto& t : layout.tensors) {
      const Section* s = find(prefix + t.name);
      if (!s) throw CheckpointError("missing section " + prefix + t.name);
      if (s->shape != shape_of(t))
        throw CheckpointError("shape mismatch for " + prefix + t.name + ": file " + shape_str(s->shape) +
                              ", config " + shape_str(shape_of(t)));
      read_floats(*s, std::span(dest).subspan(t.offset, t.size));
    }
  };
  load_tensors("param/", c.params.values);

  const Section* step_s = find("optim/step");
  if (step_s) {
    trainer::OptimizerState<float> o;
    load_tensors("optim/m/", o.m);
    load_tensors("optim/v/", o.v);
    ByteReader sr(step_s->payload);
    o.t = sr.u64();
    c.optimizer = std::move(o);
  } else if (options.require_optimizer) {
    throw CheckpointError("optimizer state absent; exact resume impossible");
  }

  const Section* rng_s = find("rng");
  if (!rng_s) throw CheckpointError("missing rng section");
  c.rng_state = rng_s->payload;

  if (report && c.precision == CheckpointPrecision::half && options.running_full_precision)
    report->warnings.push_back(
        "WARNING: checkpoint weights were stored in half precision (bf16); loading them into a full-precision "
        "run loses accuracy and cannot reproduce the original trajectory");
  return c;
}

fs::path save_checkpoint(const Checkpoint& c, const fs::path& dir, const SaveOptions& options) {
  fs::create_directories(dir);
  const fs::path path = dir / checkpoint_file_name(c.index);
  const std::vector<std::uint8_t> bytes = encode_checkpoint(c);
  if (options.crash_after_bytes) {
    fs::path tmp = path;
    tmp += std::string(kTempSuffix);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const std::size_t n = std::min(*options.crash_after_bytes, bytes.size());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(n));
    throw IoError("simulated crash while writing " + tmp.string());
  }
  write_file_atomic(path, bytes);
  const std::string hex = to_hex(std::span(bytes).last(32));
  fs::path sidecar = path;
  sidecar += ".sha256";
  write_file_atomic(sidecar, hex + "  " + path.filename().string() + "\n");
  return path;
}

Checkpoint load_checkpoint(const fs::path& path, const LoadOptions& options, LoadReport* report) {
  if (path.extension() == std::string(kTempSuffix))
    throw CheckpointError(path.string() + ": refusing to load an incomplete temp file");
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  try {
    return decode_checkpoint(bytes, options, report);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw CheckpointError(path.string() + ": truncated or malformed: " + e.what());
  }
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  static const std::regex pattern(R"(ckpt_(\d{5,})\.lckp)");
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  if (!fs::is_directory(dir)) return {};
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) found.emplace_back(std::stoull(m[1]), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [i, p] : found) out.push_back(p);
  return out;
}

std::string checkpoint_hash(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < kTrailerBytes) throw CheckpointError(path.string() + ": too short");
  return to_hex(std::span(bytes).last(32));
}

}  // namespace provlm::registry
