#include <json.hpp>

#include "bytes.hpp"
#include "ohnn/anonymizer.hpp"
#include "ohnn/errors.hpp"

namespace ohnn {

namespace {

constexpr std::uint16_t kModelVersion = 1;

void write_mat(detail::ByteWriter& w, const Mat& m) {
  for (double x : m.data()) w.f64(x);
}

Mat read_mat(detail::ByteReader& r, std::size_t d, const char* what) {
  Mat m(d);
  for (auto& x : m.data()) x = r.f64(what);
  return m;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const AnonymizerModel& model) {
  validate(model);
  const auto& st = model.stack;
  detail::ByteWriter w;
  w.raw("OHNN");
  w.u16(kModelVersion);
  w.u8(static_cast<std::uint8_t>(st.variant));
  w.u8(static_cast<std::uint8_t>(model.form));
  w.u8(static_cast<std::uint8_t>(st.reduction));
  w.u64(model.seed);
  w.u32(static_cast<std::uint32_t>(st.dim));
  w.u32(static_cast<std::uint32_t>(st.num_layers()));
  for (std::size_t q : st.layer_sizes) w.u32(static_cast<std::uint32_t>(q));
  for (double x : st.params) w.f64(x);
  for (double x : model.mu) w.f64(x);
  if (model.form == AnonymizerForm::GeneralWhitened) {
    write_mat(w, model.whitening->whiten);
    write_mat(w, model.whitening->dewhiten);
  }
  return w.take();
}

AnonymizerModel decode_model(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4, "magic") != "OHNN") throw FormatError(0, "bad magic, expected OHNN");
  std::size_t at = r.offset();
  if (r.u16("version") != kModelVersion) throw FormatError(at, "unsupported version");

  AnonymizerModel m;
  at = r.offset();
  const std::uint8_t variant = r.u8("variant");
  if (variant > 1) throw FormatError(at, "invalid variant tag");
  at = r.offset();
  const std::uint8_t form = r.u8("form");
  if (form > 1) throw FormatError(at, "invalid form tag");
  at = r.offset();
  const std::uint8_t reduction = r.u8("reduction");
  if (reduction > 1) throw FormatError(at, "invalid reduction tag");
  m.stack.variant = static_cast<StackVariant>(variant);
  m.form = static_cast<AnonymizerForm>(form);
  m.stack.reduction = static_cast<LohReduction>(reduction);
  m.seed = r.u64("seed");
  at = r.offset();
  m.stack.dim = r.u32("dim");
  if (m.stack.dim == 0) throw FormatError(at, "zero dimension");
  at = r.offset();
  const std::uint32_t layers = r.u32("layer count");
  if (layers == 0) throw FormatError(at, "zero layers");
  for (std::uint32_t l = 0; l < layers; ++l) {
    at = r.offset();
    const std::uint32_t q = r.u32("layer size");
    if (q == 0 || q > m.stack.dim) throw FormatError(at, "layer size outside [1, d]");
    m.stack.layer_sizes.push_back(q);
  }
  m.stack.params.resize(m.stack.num_reflections() * m.stack.params_per_reflection());
  for (auto& x : m.stack.params) x = r.f64("parameters");
  m.mu.resize(m.stack.dim);
  for (auto& x : m.mu) x = r.f64("mean");
  if (m.form == AnonymizerForm::GeneralWhitened) {
    Whitening wh;
    wh.whiten = read_mat(r, m.stack.dim, "whitening matrix");
    wh.dewhiten = read_mat(r, m.stack.dim, "de-whitening matrix");
    m.whitening = std::move(wh);
  }
  if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes");
  try {
    validate(m);
  } catch (const Error& e) {
    throw FormatError(r.offset(), std::string("invalid model: ") + e.what());
  }
  return m;
}

void save_model(const AnonymizerModel& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_model(model));
}

AnonymizerModel load_model(const std::filesystem::path& path) {
  return decode_model(detail::read_file(path));
}

std::string model_to_json(const AnonymizerModel& model) {
  using nlohmann::json;
  const auto& st = model.stack;
  json j;
  j["format"] = "OHNN";
  j["version"] = kModelVersion;
  j["variant"] = to_string(st.variant);
  j["form"] = to_string(model.form);
  j["loh_reduction"] = to_string(st.reduction);
  j["seed"] = model.seed;
  j["dim"] = st.dim;
  j["layer_sizes"] = st.layer_sizes;
  json reflections = json::array();
  for (std::size_t k = 0; k < st.num_reflections(); ++k) {
    const auto p = st.reflection_params(k);
    reflections.push_back(std::vector<double>(p.begin(), p.end()));
  }
  j["reflections"] = std::move(reflections);
  j["mu"] = model.mu;
  if (model.whitening) {
    auto rows = [](const Mat& m) {
      std::vector<std::vector<double>> out;
      for (std::size_t r = 0; r < m.dim(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
      return out;
    };
    j["whiten"] = rows(model.whitening->whiten);
    j["dewhiten"] = rows(model.whitening->dewhiten);
  }
  return j.dump(2);
}

}  // namespace ohnn
