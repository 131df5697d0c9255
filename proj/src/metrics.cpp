#include "vqclone/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace vqclone::metrics {

double code_overlap(const vq::CodeSequence& a, const vq::CodeSequence& b) {
  if (a.indices.size() != b.indices.size())
    throw ShapeError("code_overlap: sequence lengths differ (" +
                     std::to_string(a.indices.size()) + " vs " +
                     std::to_string(b.indices.size()) + ")");
  if (a.indices.empty()) return 1.0;  // vacuous agreement
  std::size_t matches = 0;
  for (std::size_t t = 0; t < a.indices.size(); ++t)
    if (a.indices[t] == b.indices[t]) ++matches;
  return static_cast<double>(matches) / static_cast<double>(a.indices.size());
}

BitRate bit_rate(std::size_t k, double frames_per_second,
                 const std::vector<std::uint64_t>& histogram) {
  if (k < 2) throw ConfigError("bit_rate: K must be >= 2");
  BitRate r;
  while ((std::uint64_t{1} << r.fixed_bits_per_frame) < k)
    ++r.fixed_bits_per_frame;
  r.fixed_bps = frames_per_second * static_cast<double>(r.fixed_bits_per_frame);

  std::uint64_t total = 0;
  for (std::uint64_t c : histogram) total += c;
  if (total > 0) {
    double entropy = 0.0;
    for (std::uint64_t c : histogram) {
      if (c == 0) continue;
      double p = static_cast<double>(c) / static_cast<double>(total);
      entropy -= p * std::log2(p);
    }
    r.entropy_bits_per_frame = entropy;
    r.entropy_bps = frames_per_second * entropy;
  }
  return r;
}

Tensor utterance_stats(const Tensor& acoustics) {
  if (acoustics.rows() == 0) throw ShapeError("utterance_stats: empty input");
  const std::size_t t_count = acoustics.rows();
  const std::size_t a = acoustics.cols();
  Tensor stats(1, 2 * a);
  for (std::size_t j = 0; j < a; ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < t_count; ++t) mean += acoustics.at(t, j);
    mean /= static_cast<double>(t_count);
    double var = 0.0;
    for (std::size_t t = 0; t < t_count; ++t) {
      double d = acoustics.at(t, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(t_count);
    stats[j] = mean;
    stats[a + j] = std::sqrt(var);
  }
  return stats;
}

double speaker_distance(const Tensor& acoustics,
                        const corpus::SpeakerSpec& spec) {
  Tensor observed = utterance_stats(acoustics);
  Tensor analytic = corpus::analytic_stats(spec);
  if (!observed.same_shape(analytic))
    throw ShapeError("speaker_distance: dimension mismatch");
  double d2 = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    double d = observed[i] - analytic[i];
    d2 += d * d;
  }
  return std::sqrt(d2);
}

double content_error(const std::vector<std::size_t>& predicted,
                     const std::vector<std::size_t>& reference) {
  if (predicted.size() != reference.size())
    throw ShapeError("content_error: length mismatch");
  if (reference.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t t = 0; t < reference.size(); ++t)
    if (predicted[t] != reference[t]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(reference.size());
}

std::vector<std::size_t> stt_symbols(const Tensor& acoustics,
                                     const model::ModelState& m) {
  Tensor z = model::encode_speech(acoustics, m);
  Tensor probs = model::decode_text(z, std::nullopt, m);
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < probs.cols(); ++v)
      if (probs.at(t, v) > probs.at(t, best)) best = v;
    out[t] = best;
  }
  return out;
}

namespace {
std::string code_color(std::size_t code) {
  // Golden-ratio hue walk keeps adjacent ids visually distinct.
  double hue = std::fmod(static_cast<double>(code) * 0.61803398875, 1.0) * 360.0;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "hsl(%.0f,70%%,55%%)", hue);
  return buf;
}
}  // namespace

void write_codemap_svg(const std::string& path,
                       const std::vector<std::size_t>& text_codes,
                       const std::vector<std::size_t>& speech_codes) {
  if (text_codes.size() != speech_codes.size())
    throw ShapeError("codemap: sequence lengths differ");
  const int cell = 8;
  const int gap = 4;
  const int label_w = 64;
  const std::size_t t_count = text_codes.size();
  const int width = label_w + cell * static_cast<int>(t_count) + 4;
  const int height = 2 * cell + gap + 8;

  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
    << "\" height=\"" << height << "\">\n";
  f << "<text x=\"2\" y=\"" << cell - 1 << "\" font-size=\"7\">text</text>\n";
  f << "<text x=\"2\" y=\"" << 2 * cell + gap - 1
    << "\" font-size=\"7\">speech</text>\n";
  for (std::size_t t = 0; t < t_count; ++t) {
    const bool overlap = text_codes[t] == speech_codes[t];
    const int x = label_w + cell * static_cast<int>(t);
    const std::string top = overlap ? "black" : code_color(text_codes[t]);
    const std::string bottom = overlap ? "black" : code_color(speech_codes[t]);
    f << "<rect x=\"" << x << "\" y=\"0\" width=\"" << cell << "\" height=\""
      << cell << "\" fill=\"" << top << "\"/>\n";
    f << "<rect x=\"" << x << "\" y=\"" << cell + gap << "\" width=\"" << cell
      << "\" height=\"" << cell << "\" fill=\"" << bottom << "\"/>\n";
  }
  f << "</svg>\n";
}

}  // namespace vqclone::metrics
