#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqclone/codebook.hpp"
#include "vqclone/corpus.hpp"
#include "vqclone/model.hpp"
#include "vqclone/tensor.hpp"

namespace vqclone::metrics {

// Fraction of frames whose code indices agree. Sequences must align.
double code_overlap(const vq::CodeSequence& a, const vq::CodeSequence& b);

struct BitRate {
  std::uint64_t fixed_bits_per_frame = 0;
  double fixed_bps = 0.0;
  double entropy_bits_per_frame = 0.0;  // from the empirical code histogram
  double entropy_bps = 0.0;
};

// Fixed-width accounting plus the empirical-entropy rate for the observed
// code usage. Requires K >= 2.
BitRate bit_rate(std::size_t k, double frames_per_second,
                 const std::vector<std::uint64_t>& histogram = {});

// Utterance-level [mean, std] per acoustic dimension as a 1 x 2A row.
Tensor utterance_stats(const Tensor& acoustics);

// Euclidean distance between observed utterance statistics and the analytic
// statistics implied by a speaker spec.
double speaker_distance(const Tensor& acoustics,
                        const corpus::SpeakerSpec& spec);

// Frame-level symbol error rate.
double content_error(const std::vector<std::size_t>& predicted,
                     const std::vector<std::size_t>& reference);

// Recognizer route: speech encoder into the text decoder, argmax per frame.
std::vector<std::size_t> stt_symbols(const Tensor& acoustics,
                                     const model::ModelState& m);

// Two-row raster of text-encoded vs speech-encoded code indices; frames
// where the two agree are drawn black.
void write_codemap_svg(const std::string& path,
                       const std::vector<std::size_t>& text_codes,
                       const std::vector<std::size_t>& speech_codes);

}  // namespace vqclone::metrics
