#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ohnn/linalg.hpp"
#include "ohnn/pool.hpp"

namespace ohnn {

class Rng;

enum class StackVariant : std::uint8_t { Roh = 0, Loh = 1 };

// How an LOH generator turns its d-channel convolution output (d positions)
// into one d-vector.
enum class LohReduction : std::uint8_t {
  MeanPool = 0,  // average each channel over positions
  Diagonal = 1,  // channel c read at position c
};

std::string_view to_string(StackVariant v);
std::string_view to_string(LohReduction r);

// W = W_1 W_2 ... W_L with W_l = H_{q_l} ... H_1.
//
// Reflections are stored layer by layer, and inside a layer in the order
// H_1 .. H_{q_l}. Applying W to x therefore runs layer L first and layer 1
// last, and inside each layer H_1 first.
//
// ROH stores the reflection vectors themselves (d values each). LOH stores,
// per reflection, a width-3 single-input convolution with d output channels:
// d*3 weights (channel-major) followed by d biases. Its reflection vectors
// are generated from the raw input embedding, never from rotated
// intermediates.
struct HouseholderStack {
  StackVariant variant = StackVariant::Roh;
  std::size_t dim = 0;
  std::vector<std::size_t> layer_sizes;
  LohReduction reduction = LohReduction::MeanPool;
  std::vector<double> params;

  std::size_t num_layers() const { return layer_sizes.size(); }
  std::size_t num_reflections() const;
  std::size_t params_per_reflection() const;
  std::span<const double> reflection_params(std::size_t k) const;
  std::span<double> reflection_params(std::size_t k);
  // Storage indices in the order they act on the input.
  std::vector<std::size_t> application_order() const;

  friend bool operator==(const HouseholderStack&, const HouseholderStack&) = default;
};

// Throws InvalidShape unless L >= 1 and 1 <= q_l <= d for all layers and the
// parameter count matches; ROH vectors must clear the reflection floor.
void validate(const HouseholderStack& stack);

// ROH: unit-sphere-uniform vectors. LOH: weights ~ N(0, 1/3), biases ~ N(0, 1).
HouseholderStack init_stack(StackVariant variant, std::size_t dim,
                            std::span<const std::size_t> layer_sizes, std::uint64_t seed,
                            LohReduction reduction = LohReduction::MeanPool);
HouseholderStack init_stack(StackVariant variant, std::size_t dim, std::size_t num_layers,
                            std::size_t per_layer, std::uint64_t seed,
                            LohReduction reduction = LohReduction::MeanPool);

// Reflection vector k for the given generator input. Identity for ROH. An
// LOH output below the reflection floor falls back to e_1 + x/(2|x|).
Vec reflection_vector(const HouseholderStack& stack, std::size_t k,
                      std::span<const double> generator_input);
// All reflection vectors, storage order.
std::vector<Vec> reflection_vectors(const HouseholderStack& stack,
                                    std::span<const double> generator_input);

// Applies the reflections (storage order list) to z in application order.
void apply_reflections(const HouseholderStack& stack, const std::vector<Vec>& vectors,
                       std::span<double> z);

// y = W x, with LOH vectors generated from x itself.
Vec apply_stack(const HouseholderStack& stack, std::span<const double> x);
// W^T y: the same reflections in reverse order.
Vec apply_stack_inverse(const HouseholderStack& stack, std::span<const double> y,
                        std::span<const double> generator_input);
// Dense W for the given generator input (columns are W e_j).
Mat stack_matrix(const HouseholderStack& stack, std::span<const double> generator_input);

// Back-propagates g = dLoss/dz_out through the reflections that produced
// z_out and accumulates dLoss/dparams into `grad` (same layout as params).
// Returns dLoss/dz_in. z_out is consumed (rewound to z_in).
Vec backprop_reflections(const HouseholderStack& stack, const std::vector<Vec>& vectors,
                         std::span<const double> generator_input, Vec z_out, Vec g,
                         std::span<double> grad);

enum class AnonymizerForm : std::uint8_t { Simplified = 0, GeneralWhitened = 1 };

std::string_view to_string(AnonymizerForm f);

struct AnonymizerModel {
  HouseholderStack stack;
  Vec mu;
  std::optional<Whitening> whitening;
  AnonymizerForm form = AnonymizerForm::Simplified;
  std::uint64_t seed = 0;

  friend bool operator==(const AnonymizerModel& a, const AnonymizerModel& b);
};

void validate(const AnonymizerModel& model);

AnonymizerModel make_simplified(HouseholderStack stack, Vec mu, std::uint64_t seed = 0);
AnonymizerModel make_whitened(HouseholderStack stack, Vec mu, const Mat& covariance,
                              std::uint64_t seed = 0);

// Simplified: W (x - mu) + mu. GeneralWhitened: L^{-1} W L (x - mu) + mu.
Vec anonymize(const AnonymizerModel& model, std::span<const double> x);

// Forward pass that also returns what backprop needs.
struct AnonymizeTape {
  std::vector<Vec> vectors;  // reflection vectors, storage order
  Vec rotated;               // W z_in, before de-whitening
};
Vec anonymize_with_tape(const AnonymizerModel& model, std::span<const double> x,
                        AnonymizeTape& tape);
// Accumulates dLoss/dparams given g = dLoss/d(anonymized x).
void anonymize_backward(const AnonymizerModel& model, std::span<const double> x,
                        const AnonymizeTape& tape, std::span<const double> g,
                        std::span<double> grad);

// Selection-based baseline.
struct SelectionConfig {
  std::size_t n_far = 200;
  std::size_t n_pick = 100;
  std::uint64_t seed = 0;
};

// Ranks the pool's speaker centroids by cosine distance from the source
// (ties by ascending speaker id), draws n_pick of the n_far farthest without
// replacement and returns their mean.
Vec select_anonymize(const EmbeddingPool& pool, std::span<const double> source_centroid,
                     const SelectionConfig& cfg);
// Same, drawing from a caller-owned generator so a whole pool can be
// anonymized from one seeded stream.
Vec select_anonymize(const EmbeddingPool& pool, std::span<const double> source_centroid,
                     const SelectionConfig& cfg, Rng& rng);

// OHNN model container: "OHNN", u16 version, u8 variant, u8 form,
// u8 LOH reduction, u64 seed, u32 d, u32 L, L x u32 q_l, then f64 params,
// f64 mu, and for GeneralWhitened the d*d whitening and de-whitening
// matrices, all little-endian.
std::vector<std::uint8_t> encode_model(const AnonymizerModel& model);
AnonymizerModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const AnonymizerModel& model, const std::filesystem::path& path);
AnonymizerModel load_model(const std::filesystem::path& path);
// Human-readable export; not read back.
std::string model_to_json(const AnonymizerModel& model);

}  // namespace ohnn
