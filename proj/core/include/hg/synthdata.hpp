#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hg/config.hpp"
#include "hg/decode.hpp"
#include "hg/tensor.hpp"

namespace hg {

enum class DurationBucket : std::uint32_t { Short = 0, Medium = 1, Long = 2 };

struct GenConfig {
  std::size_t length = 256;  // L0 frames
  std::size_t d_video = 32;
  std::size_t d_query = 16;
  std::size_t n_classes = 8;
  std::size_t query_length = 4;
  // Inclusive duration ranges in frames. long_max == 0 means length / 3.
  std::size_t short_min = 1, short_max = 3;
  std::size_t medium_min = 4, medium_max = 12;
  std::size_t long_min = 13, long_max = 0;
  std::array<double, 3> bucket_share{1.0 / 3, 1.0 / 3, 1.0 / 3};
  double noise_std = 0.5;
  double query_noise_std = 0.1;
  std::size_t events_per_episode = 3;
  std::size_t queries_per_episode = 3;
  std::uint64_t class_seed = 20240917;  // shared signature table
  std::size_t max_retries = 1000;

  void validate() const;
  std::size_t long_upper() const { return long_max ? long_max : length / 3; }

  void to_kv(KeyValues& kv, const std::string& prefix = "data.") const;
  static GenConfig from_kv(const KeyValues& kv, const std::string& prefix = "data.");
  bool operator==(const GenConfig&) const = default;
};

struct EventMeta {
  std::size_t cls = 0;
  std::size_t start = 0;  // frames, [start, end)
  std::size_t end = 0;
  DurationBucket bucket = DurationBucket::Short;
  bool operator==(const EventMeta&) const = default;
};

struct QuerySample {
  Tensor embedding;  // [query_length, d_query]
  GroundTruth gt;
  std::size_t event = 0;  // index into Episode::events
};

struct Episode {
  Tensor features;  // [L0, d_video]
  std::vector<QuerySample> queries;
  std::vector<EventMeta> events;
  std::uint64_t seed = 0;
};

bool episodes_equal(const Episode& a, const Episode& b);

// Fixed per-class tables derived from cfg.class_seed.
struct ClassTable {
  Tensor signatures;  // [n_classes, d_video]
  Tensor query_proj;  // [d_video, d_query]
};
ClassTable make_class_table(const GenConfig& cfg);

Episode gen_episode(const GenConfig& cfg, std::uint64_t seed);
// Episode i uses seed master + i; generated in parallel.
std::vector<Episode> gen_dataset(const GenConfig& cfg, std::uint64_t master_seed, std::size_t count);

struct Dataset {
  GenConfig config;
  std::vector<Episode> episodes;
};

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace hg
