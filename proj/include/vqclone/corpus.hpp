#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqclone/config.hpp"
#include "vqclone/tensor.hpp"

namespace vqclone::corpus {

// A voice is an affine transform (gain, bias) of shared per-symbol base
// patterns, plus seeded frame noise. Cloning quality is then measurable as
// affine-statistics matching.
struct SpeakerSpec {
  std::string id;
  Tensor patterns;  // V x A shared base patterns
  Tensor gain;      // 1 x A, components in [0.5, 2]
  Tensor bias;      // 1 x A
  double noise_sigma = 0.0;
  bool heldout_target = false;
};

// Analytic utterance-level statistics implied by a spec, assuming uniform
// symbol usage: [mean, std] concatenated as a 1 x 2A row.
Tensor analytic_stats(const SpeakerSpec& spec);

struct SynthUtterance {
  std::string id;
  std::string speaker_id;
  std::size_t speaker_index = 0;      // position in Corpus::speakers
  std::vector<std::size_t> symbols;   // frame-aligned symbol ids
  Tensor acoustics;                   // T x A
  Tensor wave;                        // T x wave_k, row-major = k*T samples
  std::string split;                  // train | test | adapt
};

struct Params {
  std::uint64_t vocab = 12;
  std::uint64_t acoustic_dim = 8;
  std::uint64_t wave_k = 4;
  std::uint64_t train_speakers = 8;
  std::uint64_t target_speakers = 2;
  std::uint64_t utterances_per_speaker = 12;
  std::uint64_t test_utterances = 4;
  std::uint64_t adapt_utterances = 10;
  std::uint64_t min_frames = 8;
  std::uint64_t max_frames = 24;
  double noise_sigma = 0.02;
  double speaker_margin = 0.6;
  std::uint64_t seed = 1234;

  static Params from_config(const config::Config& c);
};

struct Corpus {
  Params params;
  Tensor patterns;        // shared V x A
  Tensor wave_expansion;  // wave_k x A, fixed mixing used to expand y into o
  std::vector<SpeakerSpec> speakers;  // training speakers first, then targets
  std::vector<SynthUtterance> utterances;

  const SpeakerSpec& speaker(const std::string& id) const;
  std::size_t speaker_pos(const std::string& id) const;
  const SynthUtterance& utterance(const std::string& id) const;
  std::vector<const SynthUtterance*> select(const std::string& speaker_id,
                                            const std::string& split) const;
  std::vector<const SynthUtterance*> split_items(const std::string& split) const;
};

// Deterministic: same params (including seed) give bit-identical corpora,
// per-utterance content depends only on (params, speaker, ordinal).
Corpus gen_corpus(const Params& p);
Corpus gen_corpus(std::uint64_t n_speakers, std::uint64_t utterances_per_speaker,
                  std::uint64_t seed);

// Untranscribed adaptation material: acoustics and waveform only. The
// transcripts stay behind in the corpus for evaluation lookups by id.
struct AdaptItem {
  std::string utt_id;
  Tensor acoustics;
  Tensor wave;
  std::vector<std::size_t> symbols;  // empty for stripped material
};

struct AdaptationSet {
  std::string speaker_id;
  std::vector<AdaptItem> items;
};

AdaptationSet strip_transcripts(const Corpus& c, const std::string& speaker_id,
                                std::size_t max_utterances = 0);

// On-disk layout: manifest.csv + meta.bin + utt/<id>.bin blocks (little-endian
// 64-bit floats, the same scalar format checkpoints use).
void save_corpus(const Corpus& c, const std::string& dir);
Corpus load_corpus(const std::string& dir);

bool corpora_identical(const Corpus& a, const Corpus& b);

}  // namespace vqclone::corpus
