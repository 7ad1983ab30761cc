#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ohnn/linalg.hpp"

namespace ohnn {

enum class Split : std::uint8_t { Train = 0, Enroll = 1, Trial = 2 };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct Record {
  std::string speaker;
  std::string utterance;
  Split split = Split::Train;
  Vec vector;

  friend bool operator==(const Record&, const Record&) = default;
};

// Labeled embedding collection. All vectors share one dimension and
// (speaker, utterance) pairs are unique; both are checked on insertion.
class EmbeddingPool {
 public:
  EmbeddingPool() = default;
  explicit EmbeddingPool(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<Record>& records() const { return records_; }
  const Record& operator[](std::size_t i) const { return records_[i]; }

  void add(Record r);
  // Replace the vector of record i; dimension must match.
  void set_vector(std::size_t i, Vec v);

  // Sorted unique speaker ids, optionally restricted to one split.
  std::vector<std::string> speakers(std::optional<Split> split = std::nullopt) const;
  std::vector<std::size_t> indices(Split split) const;
  bool has_split(Split split) const;

  friend bool operator==(const EmbeddingPool&, const EmbeddingPool&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<Record> records_;
  std::set<std::pair<std::string, std::string>> keys_;
};

struct SyntheticSpec {
  std::size_t num_speakers = 40;
  std::size_t utterances_per_speaker = 10;
  std::size_t dim = 16;
  double sigma_within = 0.25;
  double sigma_between = 1.0;
  std::uint64_t seed = 7;
  bool normalize = false;
  // Length of a common offset added to every centroid along (1, ..., 1)/sqrt(d).
  double mean_offset = 0.0;
  // The last `eval_speakers` speakers get enroll/trial utterances instead of
  // train ones; the first `enroll_utterances` of each go to enroll.
  std::size_t eval_speakers = 20;
  std::size_t enroll_utterances = 5;
};

void validate(const SyntheticSpec& spec);

// Centroids ~ N(0, sb^2 I), utterances ~ N(centroid, sw^2 I). Values are
// rounded to float so that EMB1 round trips are exact.
EmbeddingPool generate_synthetic(const SyntheticSpec& spec);

// EMB1 container: "EMB1", u16 version, u32 dim, u32 count, then per record
// u32-length-prefixed speaker and utterance ids, a split byte and dim f32
// values, all little-endian. Vectors are narrowed to f32 on save.
std::vector<std::uint8_t> encode_pool(const EmbeddingPool& pool);
EmbeddingPool decode_pool(std::span<const std::uint8_t> bytes);
void save_pool(const EmbeddingPool& pool, const std::filesystem::path& path);
EmbeddingPool load_pool(const std::filesystem::path& path);

// CSV with header speaker,utterance,split,v0..v{d-1}. Values are written in
// shortest round-trip form so the CSV path is exact for doubles.
std::string pool_to_csv(const EmbeddingPool& pool);
EmbeddingPool pool_from_csv(std::string_view text);
void save_pool_csv(const EmbeddingPool& pool, const std::filesystem::path& path);
EmbeddingPool load_pool_csv(const std::filesystem::path& path);

// Loads by extension: .csv goes through the CSV reader, anything else EMB1.
EmbeddingPool load_pool_any(const std::filesystem::path& path);

// 64-bit FNV-1a over the EMB1 encoding.
std::uint64_t pool_fingerprint(const EmbeddingPool& pool);

struct PoolStats {
  Vec mean;
  Mat covariance;
  std::map<std::string, Vec> centroids;
};

// Mean and unbiased covariance over the train split, per-speaker centroids of
// the train split.
PoolStats pool_stats(const EmbeddingPool& pool);
Vec train_mean(const EmbeddingPool& pool);

// Per-speaker means over the records selected by `split` (all if empty).
std::map<std::string, Vec> speaker_centroids(const EmbeddingPool& pool,
                                             std::optional<Split> split = std::nullopt);

}  // namespace ohnn
