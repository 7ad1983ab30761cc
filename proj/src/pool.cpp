#include "ohnn/pool.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

#include "bytes.hpp"
#include "ohnn/errors.hpp"
#include "ohnn/random.hpp"

namespace ohnn {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

namespace {

constexpr std::uint16_t kPoolVersion = 1;

std::string speaker_id(std::size_t i) {
  std::ostringstream os;
  os << "spk" << std::setfill('0') << std::setw(3) << i;
  return os.str();
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Enroll: return "enroll";
    case Split::Trial: return "trial";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "enroll") return Split::Enroll;
  if (s == "trial") return Split::Trial;
  throw InvalidSpec("unknown split '" + std::string(s) + "'");
}

void EmbeddingPool::add(Record r) {
  if (records_.empty() && dim_ == 0) dim_ = r.vector.size();
  if (r.vector.size() != dim_) throw DimensionMismatch(dim_, r.vector.size());
  if (!keys_.emplace(r.speaker, r.utterance).second)
    throw InvalidSpec("duplicate record " + r.speaker + "/" + r.utterance);
  records_.push_back(std::move(r));
}

void EmbeddingPool::set_vector(std::size_t i, Vec v) {
  if (v.size() != dim_) throw DimensionMismatch(dim_, v.size());
  records_.at(i).vector = std::move(v);
}

std::vector<std::string> EmbeddingPool::speakers(std::optional<Split> split) const {
  std::set<std::string> ids;
  for (const auto& r : records_)
    if (!split || r.split == *split) ids.insert(r.speaker);
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> EmbeddingPool::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (records_[i].split == split) out.push_back(i);
  return out;
}

bool EmbeddingPool::has_split(Split split) const {
  return std::any_of(records_.begin(), records_.end(),
                     [&](const Record& r) { return r.split == split; });
}

void validate(const SyntheticSpec& spec) {
  if (spec.num_speakers < 2) throw InvalidSpec("num_speakers must be >= 2");
  if (spec.utterances_per_speaker < 1) throw InvalidSpec("utterances_per_speaker must be >= 1");
  if (spec.dim < 1) throw InvalidSpec("dim must be >= 1");
  if (!(spec.sigma_within > 0.0)) throw InvalidSpec("sigma_within must be > 0");
  if (!(spec.sigma_between > 0.0)) throw InvalidSpec("sigma_between must be > 0");
  if (!std::isfinite(spec.mean_offset)) throw InvalidSpec("mean_offset must be finite");
  if (spec.eval_speakers > spec.num_speakers)
    throw InvalidSpec("eval_speakers exceeds num_speakers");
  if (spec.eval_speakers > 0 && spec.enroll_utterances >= spec.utterances_per_speaker)
    throw InvalidSpec("enroll_utterances must leave at least one trial utterance");
}

EmbeddingPool generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  EmbeddingPool pool(spec.dim);
  const std::size_t first_eval = spec.num_speakers - spec.eval_speakers;
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    Vec centroid(spec.dim);
    const double offset = spec.mean_offset / std::sqrt(static_cast<double>(spec.dim));
    for (auto& c : centroid) c = offset + spec.sigma_between * rng.normal();
    const std::string spk = speaker_id(s);
    for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) {
      Vec v(spec.dim);
      for (std::size_t k = 0; k < spec.dim; ++k)
        v[k] = centroid[k] + spec.sigma_within * rng.normal();
      if (spec.normalize) {
        const double n = norm(v);
        if (n > 0.0)
          for (auto& x : v) x /= n;
      }
      for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
      Split split = Split::Train;
      if (s >= first_eval) split = u < spec.enroll_utterances ? Split::Enroll : Split::Trial;
      std::ostringstream utt;
      utt << spk << "-u" << std::setfill('0') << std::setw(2) << u;
      pool.add({spk, utt.str(), split, std::move(v)});
    }
  }
  return pool;
}

std::vector<std::uint8_t> encode_pool(const EmbeddingPool& pool) {
  detail::ByteWriter w;
  w.raw("EMB1");
  w.u16(kPoolVersion);
  w.u32(static_cast<std::uint32_t>(pool.dim()));
  w.u32(static_cast<std::uint32_t>(pool.size()));
  for (const auto& r : pool.records()) {
    w.str(r.speaker);
    w.str(r.utterance);
    w.u8(static_cast<std::uint8_t>(r.split));
    for (double x : r.vector) w.f32(static_cast<float>(x));
  }
  return w.take();
}

EmbeddingPool decode_pool(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4, "magic") != "EMB1") throw FormatError(0, "bad magic, expected EMB1");
  const std::size_t version_at = r.offset();
  if (r.u16("version") != kPoolVersion) throw FormatError(version_at, "unsupported version");
  const std::uint32_t dim = r.u32("dim");
  const std::uint32_t count = r.u32("record count");
  if (dim == 0 && count > 0) throw FormatError(r.offset(), "zero dimension");
  EmbeddingPool pool(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    rec.speaker = r.str("speaker id");
    rec.utterance = r.str("utterance id");
    const std::size_t split_at = r.offset();
    const std::uint8_t split = r.u8("split");
    if (split > 2) throw FormatError(split_at, "invalid split byte");
    rec.split = static_cast<Split>(split);
    rec.vector.resize(dim);
    for (auto& x : rec.vector) x = static_cast<double>(r.f32("vector"));
    pool.add(std::move(rec));
  }
  if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes");
  return pool;
}

void save_pool(const EmbeddingPool& pool, const std::filesystem::path& path) {
  detail::write_file(path, encode_pool(pool));
}

EmbeddingPool load_pool(const std::filesystem::path& path) {
  return decode_pool(detail::read_file(path));
}

std::string pool_to_csv(const EmbeddingPool& pool) {
  std::string out = "speaker,utterance,split";
  for (std::size_t k = 0; k < pool.dim(); ++k) out += ",v" + std::to_string(k);
  out += '\n';
  char buf[64];
  for (const auto& r : pool.records()) {
    out += r.speaker;
    out += ',';
    out += r.utterance;
    out += ',';
    out += to_string(r.split);
    for (double x : r.vector) {
      auto res = std::to_chars(buf, buf + sizeof buf, x);
      out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

EmbeddingPool pool_from_csv(std::string_view text) {
  std::size_t offset = 0;
  auto next_line = [&](std::string_view& line) {
    if (offset >= text.size()) return false;
    std::size_t end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(offset, end - offset);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    offset = end + 1;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) throw FormatError(0, "empty CSV");
  const auto cols = split_fields(header);
  if (cols.size() < 4 || cols[0] != "speaker" || cols[1] != "utterance" || cols[2] != "split")
    throw FormatError(0, "header must start with speaker,utterance,split,v0");
  const std::size_t dim = cols.size() - 3;
  for (std::size_t k = 0; k < dim; ++k)
    if (cols[3 + k] != "v" + std::to_string(k))
      throw FormatError(0, "unexpected column '" + std::string(cols[3 + k]) + "'");

  EmbeddingPool pool(dim);
  std::string_view line;
  while (true) {
    const std::size_t line_start = offset;
    if (!next_line(line)) break;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != cols.size())
      throw FormatError(line_start, "expected " + std::to_string(cols.size()) + " columns, got " +
                                        std::to_string(fields.size()));
    Record rec;
    rec.speaker = std::string(fields[0]);
    rec.utterance = std::string(fields[1]);
    try {
      rec.split = split_from_string(fields[2]);
    } catch (const InvalidSpec& e) {
      throw FormatError(line_start, e.what());
    }
    rec.vector.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto f = fields[3 + k];
      auto res = std::from_chars(f.data(), f.data() + f.size(), rec.vector[k]);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(rec.vector[k]))
        throw FormatError(line_start, "bad number '" + std::string(f) + "'");
    }
    pool.add(std::move(rec));
  }
  return pool;
}

void save_pool_csv(const EmbeddingPool& pool, const std::filesystem::path& path) {
  const std::string text = pool_to_csv(pool);
  detail::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

EmbeddingPool load_pool_csv(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return pool_from_csv({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

EmbeddingPool load_pool_any(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return load_pool_csv(path);
  return load_pool(path);
}

std::uint64_t pool_fingerprint(const EmbeddingPool& pool) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : encode_pool(pool)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Vec train_mean(const EmbeddingPool& pool) {
  const auto idx = pool.indices(Split::Train);
  if (idx.empty()) throw EmptyPool();
  Vec mean(pool.dim(), 0.0);
  for (std::size_t i : idx)
    for (std::size_t k = 0; k < pool.dim(); ++k) mean[k] += pool[i].vector[k];
  for (auto& m : mean) m /= static_cast<double>(idx.size());
  return mean;
}

PoolStats pool_stats(const EmbeddingPool& pool) {
  PoolStats stats;
  stats.mean = train_mean(pool);
  const auto idx = pool.indices(Split::Train);
  if (idx.size() < 2)
    throw DegenerateCovariance("covariance needs at least 2 train vectors, have " +
                               std::to_string(idx.size()));
  const std::size_t d = pool.dim();
  stats.covariance = Mat(d);
  Vec centered(d);
  for (std::size_t i : idx) {
    for (std::size_t k = 0; k < d; ++k) centered[k] = pool[i].vector[k] - stats.mean[k];
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) stats.covariance(r, c) += centered[r] * centered[c];
  }
  for (auto& x : stats.covariance.data()) x /= static_cast<double>(idx.size() - 1);
  stats.centroids = speaker_centroids(pool, Split::Train);
  return stats;
}

std::map<std::string, Vec> speaker_centroids(const EmbeddingPool& pool,
                                             std::optional<Split> split) {
  // Accumulate in (speaker, utterance) order so the result does not depend on
  // record order.
  std::vector<const Record*> sorted;
  for (const auto& r : pool.records())
    if (!split || r.split == *split) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const Record* a, const Record* b) {
    return std::tie(a->speaker, a->utterance) < std::tie(b->speaker, b->utterance);
  });
  std::map<std::string, Vec> sums;
  std::map<std::string, std::size_t> counts;
  for (const Record* r : sorted) {
    auto [it, inserted] = sums.try_emplace(r->speaker, Vec(pool.dim(), 0.0));
    for (std::size_t k = 0; k < pool.dim(); ++k) it->second[k] += r->vector[k];
    ++counts[r->speaker];
  }
  for (auto& [spk, v] : sums)
    for (auto& x : v) x /= static_cast<double>(counts[spk]);
  return sums;
}

}  // namespace ohnn
