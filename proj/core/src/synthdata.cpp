#include "hg/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>

#include "hg/parallel.hpp"

namespace hg {

namespace {

constexpr char kMagic[8] = {'H', 'G', 'D', 'A', 'T', 'A', '1', '\0'};

double f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

void GenConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("GenConfig: " + m); };
  if (length == 0 || d_video == 0 || d_query == 0) fail("length and feature widths must be positive");
  if (n_classes == 0) fail("n_classes must be positive");
  if (query_length == 0) fail("query_length must be positive");
  if (!(noise_std >= 0) || !(query_noise_std >= 0)) fail("noise std must be >= 0");
  if (events_per_episode == 0) fail("events_per_episode must be positive");
  if (queries_per_episode == 0) fail("at least one query per episode is required");
  if (queries_per_episode > events_per_episode) fail("queries_per_episode cannot exceed events_per_episode");
  if (events_per_episode > n_classes) fail("events_per_episode cannot exceed n_classes (classes are distinct per episode)");
  if (!(short_min >= 1 && short_min <= short_max && short_max < medium_min && medium_min <= medium_max &&
        medium_max < long_min && long_min <= long_upper())) {
    fail("duration buckets must be non-empty, ordered and non-overlapping (long range is " + std::to_string(long_min) +
         ".." + std::to_string(long_upper()) + ")");
  }
  if (long_upper() > length) fail("long bucket exceeds video length");
  double total = 0;
  for (double s : bucket_share) {
    if (!(s >= 0)) fail("bucket shares must be >= 0");
    total += s;
  }
  if (!(total > 0)) fail("bucket shares must not all be zero");
}

void GenConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "length", static_cast<std::uint64_t>(length));
  kv.set(p + "d_video", static_cast<std::uint64_t>(d_video));
  kv.set(p + "d_query", static_cast<std::uint64_t>(d_query));
  kv.set(p + "n_classes", static_cast<std::uint64_t>(n_classes));
  kv.set(p + "query_length", static_cast<std::uint64_t>(query_length));
  kv.set(p + "short_min", static_cast<std::uint64_t>(short_min));
  kv.set(p + "short_max", static_cast<std::uint64_t>(short_max));
  kv.set(p + "medium_min", static_cast<std::uint64_t>(medium_min));
  kv.set(p + "medium_max", static_cast<std::uint64_t>(medium_max));
  kv.set(p + "long_min", static_cast<std::uint64_t>(long_min));
  kv.set(p + "long_max", static_cast<std::uint64_t>(long_max));
  kv.set(p + "share_short", bucket_share[0]);
  kv.set(p + "share_medium", bucket_share[1]);
  kv.set(p + "share_long", bucket_share[2]);
  kv.set(p + "noise_std", noise_std);
  kv.set(p + "query_noise_std", query_noise_std);
  kv.set(p + "events_per_episode", static_cast<std::uint64_t>(events_per_episode));
  kv.set(p + "queries_per_episode", static_cast<std::uint64_t>(queries_per_episode));
  kv.set(p + "class_seed", class_seed);
  kv.set(p + "max_retries", static_cast<std::uint64_t>(max_retries));
}

GenConfig GenConfig::from_kv(const KeyValues& kv, const std::string& p) {
  GenConfig c;
  c.length = kv.get_size(p + "length", c.length);
  c.d_video = kv.get_size(p + "d_video", c.d_video);
  c.d_query = kv.get_size(p + "d_query", c.d_query);
  c.n_classes = kv.get_size(p + "n_classes", c.n_classes);
  c.query_length = kv.get_size(p + "query_length", c.query_length);
  c.short_min = kv.get_size(p + "short_min", c.short_min);
  c.short_max = kv.get_size(p + "short_max", c.short_max);
  c.medium_min = kv.get_size(p + "medium_min", c.medium_min);
  c.medium_max = kv.get_size(p + "medium_max", c.medium_max);
  c.long_min = kv.get_size(p + "long_min", c.long_min);
  c.long_max = kv.get_size(p + "long_max", c.long_max);
  c.bucket_share[0] = kv.get_double(p + "share_short", c.bucket_share[0]);
  c.bucket_share[1] = kv.get_double(p + "share_medium", c.bucket_share[1]);
  c.bucket_share[2] = kv.get_double(p + "share_long", c.bucket_share[2]);
  c.noise_std = kv.get_double(p + "noise_std", c.noise_std);
  c.query_noise_std = kv.get_double(p + "query_noise_std", c.query_noise_std);
  c.events_per_episode = kv.get_size(p + "events_per_episode", c.events_per_episode);
  c.queries_per_episode = kv.get_size(p + "queries_per_episode", c.queries_per_episode);
  c.class_seed = kv.get_uint(p + "class_seed", c.class_seed);
  c.max_retries = kv.get_size(p + "max_retries", c.max_retries);
  c.validate();
  return c;
}

ClassTable make_class_table(const GenConfig& cfg) {
  std::mt19937_64 rng(cfg.class_seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> sig(cfg.n_classes * cfg.d_video), proj(cfg.d_video * cfg.d_query);
  for (auto& v : sig) v = f32(n01(rng));
  const double ps = 1.0 / std::sqrt(static_cast<double>(cfg.d_video));
  for (auto& v : proj) v = n01(rng) * ps;
  return {Tensor::from({cfg.n_classes, cfg.d_video}, std::move(sig)),
          Tensor::from({cfg.d_video, cfg.d_query}, std::move(proj))};
}

Episode gen_episode(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ClassTable table = make_class_table(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t l0 = cfg.length, dv = cfg.d_video, dq = cfg.d_query;

  Episode ep;
  ep.seed = seed;

  // Distinct classes: partial Fisher-Yates over the class ids.
  std::vector<std::size_t> classes(cfg.n_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = i;
  for (std::size_t i = 0; i < cfg.events_per_episode; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, classes.size() - 1);
    std::swap(classes[i], classes[pick(rng)]);
  }

  std::discrete_distribution<int> bucket_dist(cfg.bucket_share.begin(), cfg.bucket_share.end());
  const std::size_t lo[3] = {cfg.short_min, cfg.medium_min, cfg.long_min};
  const std::size_t hi[3] = {cfg.short_max, cfg.medium_max, cfg.long_upper()};
  // Durations are redrawn until they fit; the free frames are then split
  // into random gaps around the events, so placement itself never fails.
  const std::size_t ne = cfg.events_per_episode;
  std::vector<int> buckets(ne);
  std::vector<std::size_t> durs(ne);
  bool fits = false;
  for (std::size_t attempt = 0; attempt < cfg.max_retries && !fits; ++attempt) {
    std::size_t total = 0;
    for (std::size_t e = 0; e < ne; ++e) {
      buckets[e] = bucket_dist(rng);
      durs[e] = std::uniform_int_distribution<std::size_t>(lo[buckets[e]], hi[buckets[e]])(rng);
      total += durs[e];
    }
    fits = total <= l0;
  }
  if (!fits) {
    throw std::runtime_error("gen_episode: " + std::to_string(ne) + " events do not fit in " + std::to_string(l0) +
                             " frames after " + std::to_string(cfg.max_retries) +
                             " draws; request fewer events per episode");
  }
  std::size_t free = l0;
  for (std::size_t d : durs) free -= d;
  std::vector<std::size_t> cuts(ne);
  for (auto& c : cuts) c = std::uniform_int_distribution<std::size_t>(0, free)(rng);
  std::sort(cuts.begin(), cuts.end());
  // Timeline order of the events is a random permutation.
  std::vector<std::size_t> slot(ne);
  for (std::size_t i = 0; i < ne; ++i) slot[i] = i;
  std::shuffle(slot.begin(), slot.end(), rng);
  std::vector<std::size_t> start_of(ne);
  std::size_t cursor = 0, prev_cut = 0;
  for (std::size_t k = 0; k < ne; ++k) {
    cursor += cuts[k] - prev_cut;
    prev_cut = cuts[k];
    start_of[slot[k]] = cursor;
    cursor += durs[slot[k]];
  }
  for (std::size_t e = 0; e < ne; ++e) {
    ep.events.push_back(
        {classes[e], start_of[e], start_of[e] + durs[e], static_cast<DurationBucket>(buckets[e])});
  }

  std::vector<double> feat(l0 * dv);
  for (auto& v : feat) v = cfg.noise_std * n01(rng);
  const auto& sig = table.signatures.data();
  for (const auto& ev : ep.events) {
    for (std::size_t t = ev.start; t < ev.end; ++t)
      for (std::size_t j = 0; j < dv; ++j) feat[t * dv + j] = sig[ev.cls * dv + j] + cfg.noise_std * n01(rng);
  }
  for (auto& v : feat) v = f32(v);
  ep.features = Tensor::from({l0, dv}, std::move(feat));

  const auto& proj = table.query_proj.data();
  for (std::size_t q = 0; q < cfg.queries_per_episode; ++q) {
    const auto& ev = ep.events[q];
    std::vector<double> base(dq, 0.0);
    for (std::size_t j = 0; j < dv; ++j)
      for (std::size_t k = 0; k < dq; ++k) base[k] += sig[ev.cls * dv + j] * proj[j * dq + k];
    std::vector<double> emb(cfg.query_length * dq);
    for (std::size_t r = 0; r < cfg.query_length; ++r)
      for (std::size_t k = 0; k < dq; ++k) emb[r * dq + k] = f32(base[k] + cfg.query_noise_std * n01(rng));
    QuerySample qs;
    qs.embedding = Tensor::from({cfg.query_length, dq}, std::move(emb));
    qs.gt = {static_cast<double>(ev.start), static_cast<double>(ev.end)};
    qs.event = q;
    ep.queries.push_back(std::move(qs));
  }
  return ep;
}

std::vector<Episode> gen_dataset(const GenConfig& cfg, std::uint64_t master_seed, std::size_t count) {
  cfg.validate();
  std::vector<Episode> out(count);
  parallel_for(count, [&](std::size_t i) { out[i] = gen_episode(cfg, master_seed + i); });
  return out;
}

bool episodes_equal(const Episode& a, const Episode& b) {
  if (a.seed != b.seed || a.events != b.events || a.queries.size() != b.queries.size()) return false;
  if (a.features.shape() != b.features.shape() || !std::ranges::equal(a.features.data(), b.features.data())) return false;
  for (std::size_t q = 0; q < a.queries.size(); ++q) {
    const auto& x = a.queries[q];
    const auto& y = b.queries[q];
    if (x.event != y.event || x.gt.t_start != y.gt.t_start || x.gt.t_end != y.gt.t_end) return false;
    if (x.embedding.shape() != y.embedding.shape() || !std::ranges::equal(x.embedding.data(), y.embedding.data())) return false;
  }
  return true;
}

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <class T>
  void pod(T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    bytes(buf, sizeof(T));
  }
  void u64(std::uint64_t v) { pod(v); }
  void floats(std::span<const double> v) {
    for (double x : v) pod(static_cast<float>(x));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw std::runtime_error(path_ + ": truncated dataset file while reading " + what);
    }
  }
  template <class T>
  T pod(const char* what) {
    unsigned char buf[sizeof(T)];
    bytes(buf, sizeof(T), what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::uint64_t u64(const char* what) { return pod<std::uint64_t>(what); }
  // Guards allocations against corrupted counts.
  std::uint64_t count(const char* what, std::uint64_t limit) {
    const auto v = u64(what);
    if (v > limit) throw std::runtime_error(path_ + ": implausible " + std::string(what) + " " + std::to_string(v));
    return v;
  }
  std::vector<double> floats(std::size_t n, const char* what) {
    std::vector<double> out(n);
    for (auto& x : out) x = static_cast<double>(pod<float>(what));
    return out;
  }

 private:
  std::istream& is_;
  std::string path_;
};

constexpr std::uint64_t kLimit = std::uint64_t{1} << 32;

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  if (ds.episodes.empty()) throw std::invalid_argument("write_dataset: empty dataset");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_dataset: cannot open " + path);
  Writer w(os);
  w.bytes(kMagic, sizeof kMagic);
  KeyValues kv;
  ds.config.to_kv(kv);
  const std::string header = kv.to_text();
  w.u64(header.size());
  w.bytes(header.data(), header.size());
  w.u64(ds.episodes.size());
  for (const auto& ep : ds.episodes) {
    w.u64(ep.seed);
    w.u64(ep.features.rows());
    w.u64(ep.features.cols());
    w.floats(ep.features.data());
    w.u64(ep.events.size());
    for (const auto& ev : ep.events) {
      w.u64(ev.cls);
      w.u64(ev.start);
      w.u64(ev.end);
      w.pod(static_cast<std::uint32_t>(ev.bucket));
    }
    w.u64(ep.queries.size());
    for (const auto& q : ep.queries) {
      w.u64(q.embedding.rows());
      w.u64(q.embedding.cols());
      w.floats(q.embedding.data());
      w.pod(q.gt.t_start);
      w.pod(q.gt.t_end);
      w.u64(q.event);
    }
  }
  if (!os) throw std::runtime_error("write_dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_dataset: cannot open " + path);
  is.seekg(0, std::ios::end);
  if (is.tellg() == 0) throw std::runtime_error(path + ": empty dataset (file has no content)");
  is.seekg(0);
  Reader r(is, path);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, 6) == 0 && std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path + ": unsupported dataset version '" + std::string(magic, 7) + "', expected HGDATA1");
  }
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error(path + ": not a dataset file (bad magic bytes)");
  Dataset ds;
  const auto hlen = r.count("header length", 1 << 20);
  std::string header(hlen, '\0');
  r.bytes(header.data(), hlen, "header");
  ds.config = GenConfig::from_kv(KeyValues::parse(header));
  const auto n = r.count("episode count", kLimit);
  if (n == 0) throw std::runtime_error(path + ": empty dataset (zero episodes)");
  ds.episodes.resize(n);
  for (auto& ep : ds.episodes) {
    ep.seed = r.u64("episode seed");
    const auto rows = r.count("frame count", kLimit), cols = r.count("feature width", 1 << 16);
    ep.features = Tensor::from({rows, cols}, r.floats(rows * cols, "features"));
    const auto ne = r.count("event count", 1 << 20);
    for (std::uint64_t e = 0; e < ne; ++e) {
      EventMeta ev;
      ev.cls = r.u64("event class");
      ev.start = r.u64("event start");
      ev.end = r.u64("event end");
      const auto b = r.pod<std::uint32_t>("event bucket");
      if (b > 2) throw std::runtime_error(path + ": invalid duration bucket " + std::to_string(b));
      ev.bucket = static_cast<DurationBucket>(b);
      ep.events.push_back(ev);
    }
    const auto nq = r.count("query count", 1 << 20);
    for (std::uint64_t q = 0; q < nq; ++q) {
      QuerySample qs;
      const auto qr = r.count("query length", 1 << 20), qc = r.count("query width", 1 << 16);
      qs.embedding = Tensor::from({qr, qc}, r.floats(qr * qc, "query embedding"));
      qs.gt.t_start = r.pod<double>("gt start");
      qs.gt.t_end = r.pod<double>("gt end");
      qs.event = r.u64("query event");
      if (!(qs.gt.t_start < qs.gt.t_end)) throw std::runtime_error(path + ": degenerate ground-truth interval");
      ep.queries.push_back(std::move(qs));
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes after last episode");
  return ds;
}

}  // namespace hg
