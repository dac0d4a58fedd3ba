#include "afp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "afp/error.hpp"

namespace afp::checkpoint {
namespace {

using json = nlohmann::json;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& in, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <typename T>
void append_tensor(std::string& out, const BasicTensor<T>& t) {
  for (T v : t.data()) put_le(out, std::bit_cast<Bits<T>>(v));
}

template <typename T>
void read_tensor(const std::string& in, std::size_t offset, BasicTensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = std::bit_cast<T>(get_le<Bits<T>>(in, offset + i * sizeof(T)));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorKind::kIo, "cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
Loaded<T> decode(const std::string& bytes, std::size_t blob_start, const json& manifest,
                 const std::string& where) {
  const RunConfig config = run_config_from_json(manifest.at("config"));
  Loaded<T> out{config, train::TrainState<T>(config.pyramid)};
  auto& st = out.state;
  st.epoch = manifest.at("epoch").get<int>();
  st.step = manifest.at("step").get<std::int64_t>();
  st.rng.set_state(manifest.at("rng_state").get<std::string>());

  const json& table = manifest.at("tensors");
  ParamSet<T>& params = st.model.params();
  check(table.is_array() && table.size() == 2 * params.size(), ErrorKind::kFormat,
        where + ": tensor table has " + std::to_string(table.size()) +
            " entries, expected " + std::to_string(2 * params.size()));
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const json& e = table[i];
    const bool is_param = i < params.size();
    const std::size_t idx = is_param ? i : i - params.size();
    BasicTensor<T>& dst = is_param ? params[idx] : st.velocity[idx];
    const std::string& name = params.name(idx);
    check(e.at("name").get<std::string>() == name &&
              e.at("role").get<std::string>() == (is_param ? "param" : "velocity"),
          ErrorKind::kFormat, where + ": tensor " + std::to_string(i) + " should be " + name);
    const auto shape = e.at("shape").get<std::vector<int>>();
    const Shape s = dst.shape();
    check(shape == std::vector<int>{s.n, s.c, s.h, s.w}, ErrorKind::kFormat,
          where + ": shape mismatch for " + name);
    const auto offset = e.at("offset").get<std::size_t>();
    check(offset == expected_offset, ErrorKind::kFormat,
          where + ": unexpected offset for " + name);
    check(blob_start + offset + dst.size() * sizeof(T) <= bytes.size(), ErrorKind::kFormat,
          where + ": truncated tensor data for " + name);
    read_tensor(bytes, blob_start + offset, dst);
    expected_offset += dst.size() * sizeof(T);
  }
  check(blob_start + expected_offset == bytes.size(), ErrorKind::kFormat,
        where + ": " + std::to_string(bytes.size() - blob_start - expected_offset) +
            " trailing bytes");
  return out;
}

}  // namespace

template <typename T>
void save(const std::filesystem::path& path, const RunConfig& config,
          const train::TrainState<T>& state) {
  const ParamSet<T>& params = state.model.params();
  json table = json::array();
  std::size_t offset = 0;
  for (int role = 0; role < 2; ++role) {
    const ParamSet<T>& set = role == 0 ? params : state.velocity;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const Shape s = set[i].shape();
      table.push_back({{"name", set.name(i)},
                       {"role", role == 0 ? "param" : "velocity"},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"offset", offset}});
      offset += set[i].size() * sizeof(T);
    }
  }
  const json manifest = {{"format_version", kVersion},
                         {"dtype", dtype_name<T>()},
                         {"epoch", state.epoch},
                         {"step", state.step},
                         {"rng_state", state.rng.state()},
                         {"config", to_json(config)},
                         {"tensors", table}};
  const std::string text = manifest.dump();

  std::string bytes(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(bytes, kVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes += text;
  bytes.reserve(bytes.size() + offset);
  for (const auto& t : params.tensors()) append_tensor(bytes, t);
  for (const auto& t : state.velocity.tensors()) append_tensor(bytes, t);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    check(out.good(), ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    check(out.good(), ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  check(!ec, ErrorKind::kIo, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

AnyCheckpoint load(const std::filesystem::path& path) {
  const std::string where = path.string();
  const std::string bytes = read_file(path);
  constexpr std::size_t kHeader = sizeof(kMagic) + 4 + 8;
  check(bytes.size() >= kHeader, ErrorKind::kFormat, where + ": truncated header");
  check(std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0, ErrorKind::kFormat,
        where + ": bad magic, not a checkpoint");
  const auto version = get_le<std::uint32_t>(bytes, sizeof(kMagic));
  check(version == kVersion, ErrorKind::kFormat,
        where + ": unsupported checkpoint version " + std::to_string(version));
  const auto length = get_le<std::uint64_t>(bytes, sizeof(kMagic) + 4);
  check(length <= bytes.size() - kHeader, ErrorKind::kFormat, where + ": truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(kHeader, length));
    check(manifest.at("format_version").get<std::uint32_t>() == kVersion, ErrorKind::kFormat,
          where + ": manifest version mismatch");
    const std::string dtype = manifest.at("dtype").get<std::string>();
    const std::size_t blob_start = kHeader + length;
    if (dtype == "float32") return decode<float>(bytes, blob_start, manifest, where);
    if (dtype == "float64") return decode<double>(bytes, blob_start, manifest, where);
    fail(ErrorKind::kFormat, where + ": unknown dtype " + dtype);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, where + ": malformed manifest: " + e.what());
  }
}

template void save(const std::filesystem::path&, const RunConfig&,
                   const train::TrainState<float>&);
template void save(const std::filesystem::path&, const RunConfig&,
                   const train::TrainState<double>&);

}  // namespace afp::checkpoint
