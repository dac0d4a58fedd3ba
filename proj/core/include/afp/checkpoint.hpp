#pragma once

#include <filesystem>
#include <variant>

#include "afp/config.hpp"
#include "afp/train.hpp"

namespace afp::checkpoint {

// File layout (all integers little-endian):
//   bytes 0..7   magic "AFPNETCK"
//   u32          format version
//   u64          manifest length L
//   L bytes      JSON manifest: version, dtype, epoch, step, rng state,
//                run config, tensor table (name, role, shape, offset)
//   ...          IEEE-754 tensor blobs in manifest order
inline constexpr char kMagic[8] = {'A', 'F', 'P', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
struct Loaded {
  RunConfig config;
  train::TrainState<T> state;
};

using AnyCheckpoint = std::variant<Loaded<float>, Loaded<double>>;

// Written to a temporary sibling and renamed into place.
template <typename T>
void save(const std::filesystem::path& path, const RunConfig& config,
          const train::TrainState<T>& state);

AnyCheckpoint load(const std::filesystem::path& path);

}  // namespace afp::checkpoint
