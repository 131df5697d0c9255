#include "vqclone/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vqclone/binio.hpp"

namespace vqclone::corpus {

namespace fs = std::filesystem;

Params Params::from_config(const config::Config& c) {
  Params p;
  p.vocab = c.vocab_size;
  p.acoustic_dim = c.acoustic_dim;
  p.wave_k = c.wave_k;
  p.train_speakers = c.train_speakers;
  p.target_speakers = c.target_speakers;
  p.utterances_per_speaker = c.utterances_per_speaker;
  p.test_utterances = c.test_utterances;
  p.adapt_utterances = c.adapt_utterances;
  p.min_frames = c.min_frames;
  p.max_frames = c.max_frames;
  p.noise_sigma = c.noise_sigma;
  p.speaker_margin = c.speaker_margin;
  p.seed = c.seed;
  return p;
}

Tensor analytic_stats(const SpeakerSpec& spec) {
  const std::size_t v = spec.patterns.rows();
  const std::size_t a = spec.patterns.cols();
  Tensor stats(1, 2 * a);
  for (std::size_t j = 0; j < a; ++j) {
    double mean = 0.0;
    for (std::size_t s = 0; s < v; ++s) mean += spec.patterns.at(s, j);
    mean /= static_cast<double>(v);
    double var = 0.0;
    for (std::size_t s = 0; s < v; ++s) {
      double d = spec.patterns.at(s, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(v);
    const double g = spec.gain[j];
    stats[j] = g * mean + spec.bias[j];
    stats[a + j] = std::sqrt(g * g * var + spec.noise_sigma * spec.noise_sigma);
  }
  return stats;
}

const SpeakerSpec& Corpus::speaker(const std::string& id) const {
  return speakers[speaker_pos(id)];
}

std::size_t Corpus::speaker_pos(const std::string& id) const {
  for (std::size_t i = 0; i < speakers.size(); ++i)
    if (speakers[i].id == id) return i;
  throw ConfigError("unknown speaker '" + id + "'");
}

const SynthUtterance& Corpus::utterance(const std::string& id) const {
  for (const auto& u : utterances)
    if (u.id == id) return u;
  throw ConfigError("unknown utterance '" + id + "'");
}

std::vector<const SynthUtterance*> Corpus::select(
    const std::string& speaker_id, const std::string& split) const {
  std::vector<const SynthUtterance*> out;
  for (const auto& u : utterances)
    if (u.speaker_id == speaker_id && u.split == split) out.push_back(&u);
  return out;
}

std::vector<const SynthUtterance*> Corpus::split_items(
    const std::string& split) const {
  std::vector<const SynthUtterance*> out;
  for (const auto& u : utterances)
    if (u.split == split) out.push_back(&u);
  return out;
}

namespace {

Tensor draw_patterns(const Params& p) {
  Rng rng(mix_seed(p.seed, fnv1a64("patterns")));
  Tensor pat(p.vocab, p.acoustic_dim);
  // Rows kept well apart so symbol identity survives imperfect rendering:
  // reconstruction error must stay small against this separation for
  // content checks to be meaningful. Scaled to the typical random-pair
  // distance in the [-1,1]^A box.
  const double separation = 0.57 * std::sqrt(static_cast<double>(p.acoustic_dim));
  for (std::size_t s = 0; s < p.vocab; ++s) {
    bool placed = false;
    for (int attempt = 0; attempt < 4000 && !placed; ++attempt) {
      for (std::size_t j = 0; j < p.acoustic_dim; ++j)
        pat.at(s, j) = rng.uniform(-1.0, 1.0);
      double min_d = 1e300;
      for (std::size_t r = 0; r < s; ++r) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < p.acoustic_dim; ++j) {
          double d = pat.at(s, j) - pat.at(r, j);
          d2 += d * d;
        }
        min_d = std::min(min_d, std::sqrt(d2));
      }
      placed = s == 0 || min_d >= separation;
    }
    if (!placed)
      throw ConfigError("could not draw separable symbol patterns");
  }
  return pat;
}

SpeakerSpec draw_speaker(const Params& p, const Tensor& patterns,
                         const std::string& id, bool target,
                         std::uint64_t ordinal,
                         const std::vector<SpeakerSpec>& accepted) {
  Rng rng(mix_seed(p.seed, fnv1a64("speaker:" + id), ordinal));
  SpeakerSpec spec;
  spec.id = id;
  spec.patterns = patterns;
  spec.noise_sigma = p.noise_sigma;
  spec.heldout_target = target;
  spec.gain = Tensor(1, p.acoustic_dim);
  spec.bias = Tensor(1, p.acoustic_dim);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (std::size_t j = 0; j < p.acoustic_dim; ++j) {
      spec.gain[j] = rng.uniform(0.5, 2.0);
      spec.bias[j] = rng.uniform(-0.8, 0.8);
    }
    Tensor stats = analytic_stats(spec);
    double min_d = 1e300;
    for (const SpeakerSpec& other : accepted) {
      Tensor os = analytic_stats(other);
      double d2 = 0.0;
      for (std::size_t j = 0; j < stats.size(); ++j) {
        double d = stats[j] - os[j];
        d2 += d * d;
      }
      min_d = std::min(min_d, std::sqrt(d2));
    }
    if (accepted.empty() || min_d >= p.speaker_margin) return spec;
  }
  throw ConfigError("could not place speaker '" + id +
                    "' at margin " + std::to_string(p.speaker_margin));
}

SynthUtterance render_utterance(const Params& p, const Corpus& c,
                                std::size_t speaker_index, std::uint64_t ordinal,
                                const std::string& split) {
  const SpeakerSpec& spk = c.speakers[speaker_index];
  Rng rng(mix_seed(p.seed, fnv1a64("utt:" + spk.id), ordinal));

  SynthUtterance u;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_u%03llu",
                static_cast<unsigned long long>(ordinal));
  u.id = spk.id + buf;
  u.speaker_id = spk.id;
  u.speaker_index = speaker_index;
  u.split = split;

  const std::size_t frames =
      p.min_frames + rng.below(p.max_frames - p.min_frames + 1);
  // Symbols arrive in short runs, like frame-aligned phones.
  while (u.symbols.size() < frames) {
    std::size_t sym = rng.below(p.vocab);
    std::size_t run = 1 + rng.below(4);
    for (std::size_t i = 0; i < run && u.symbols.size() < frames; ++i)
      u.symbols.push_back(sym);
  }

  const std::size_t a = p.acoustic_dim;
  u.acoustics = Tensor(frames, a);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < a; ++j)
      u.acoustics.at(t, j) = spk.gain[j] * spk.patterns.at(u.symbols[t], j) +
                             spk.bias[j] + spk.noise_sigma * rng.normal();

  u.wave = Tensor(frames, p.wave_k);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t s = 0; s < p.wave_k; ++s) {
      double acc = 0.0;
      for (std::size_t j = 0; j < a; ++j)
        acc += c.wave_expansion.at(s, j) * u.acoustics.at(t, j);
      u.wave.at(t, s) = acc;
    }
  return u;
}

}  // namespace

Corpus gen_corpus(const Params& p) {
  if (p.train_speakers < 1 || p.utterances_per_speaker < 1)
    throw ConfigError("gen_corpus: counts must be >= 1");
  Corpus c;
  c.params = p;
  c.patterns = draw_patterns(p);

  Rng exp_rng(mix_seed(p.seed, fnv1a64("wave_expansion")));
  c.wave_expansion = Tensor(p.wave_k, p.acoustic_dim);
  for (std::size_t i = 0; i < c.wave_expansion.size(); ++i)
    c.wave_expansion[i] = exp_rng.uniform(-0.6, 0.6);

  char buf[16];
  for (std::uint64_t i = 0; i < p.train_speakers; ++i) {
    std::snprintf(buf, sizeof(buf), "S%02llu", static_cast<unsigned long long>(i));
    c.speakers.push_back(draw_speaker(p, c.patterns, buf, false, i, c.speakers));
  }
  for (std::uint64_t i = 0; i < p.target_speakers; ++i) {
    std::snprintf(buf, sizeof(buf), "T%02llu", static_cast<unsigned long long>(i));
    c.speakers.push_back(
        draw_speaker(p, c.patterns, buf, true, p.train_speakers + i, c.speakers));
  }

  for (std::size_t s = 0; s < c.speakers.size(); ++s) {
    const bool target = c.speakers[s].heldout_target;
    const std::uint64_t primary =
        target ? p.adapt_utterances : p.utterances_per_speaker;
    const std::string primary_split = target ? "adapt" : "train";
    std::uint64_t ordinal = 0;
    for (std::uint64_t i = 0; i < primary; ++i)
      c.utterances.push_back(render_utterance(p, c, s, ordinal++, primary_split));
    for (std::uint64_t i = 0; i < p.test_utterances; ++i)
      c.utterances.push_back(render_utterance(p, c, s, ordinal++, "test"));
  }
  return c;
}

Corpus gen_corpus(std::uint64_t n_speakers, std::uint64_t utterances_per_speaker,
                  std::uint64_t seed) {
  Params p;
  p.train_speakers = n_speakers;
  p.target_speakers = 0;
  p.utterances_per_speaker = utterances_per_speaker;
  p.seed = seed;
  return gen_corpus(p);
}

AdaptationSet strip_transcripts(const Corpus& c, const std::string& speaker_id,
                                std::size_t max_utterances) {
  (void)c.speaker(speaker_id);  // throws for unknown speakers
  AdaptationSet set;
  set.speaker_id = speaker_id;
  auto pool = c.select(speaker_id, "adapt");
  if (pool.empty()) pool = c.select(speaker_id, "train");
  if (max_utterances > 0 && pool.size() < max_utterances)
    throw ConfigError("speaker '" + speaker_id + "' has only " +
                      std::to_string(pool.size()) +
                      " adaptation utterances, requested " +
                      std::to_string(max_utterances));
  const std::size_t n = max_utterances > 0 ? max_utterances : pool.size();
  for (std::size_t i = 0; i < n; ++i) {
    AdaptItem item;
    item.utt_id = pool[i]->id;
    item.acoustics = pool[i]->acoustics;
    item.wave = pool[i]->wave;
    set.items.push_back(std::move(item));
  }
  return set;
}

void save_corpus(const Corpus& c, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "utt");

  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw ConfigError("cannot write corpus manifest in " + dir);
  manifest << "utterance_id,speaker_id,length,split\n";
  for (const auto& u : c.utterances)
    manifest << u.id << "," << u.speaker_id << "," << u.symbols.size() << ","
             << u.split << "\n";

  std::ofstream meta(fs::path(dir) / "meta.bin", std::ios::binary);
  if (!meta) throw ConfigError("cannot write corpus meta in " + dir);
  meta << "VQCORP01";
  binio::put_u64(meta, 1);  // format version
  binio::put_u64(meta, c.params.vocab);
  binio::put_u64(meta, c.params.acoustic_dim);
  binio::put_u64(meta, c.params.wave_k);
  binio::put_u64(meta, c.params.seed);
  binio::put_f64(meta, c.params.noise_sigma);
  binio::put_f64(meta, c.params.speaker_margin);
  binio::put_u64(meta, c.params.train_speakers);
  binio::put_u64(meta, c.params.target_speakers);
  binio::put_u64(meta, c.params.utterances_per_speaker);
  binio::put_u64(meta, c.params.test_utterances);
  binio::put_u64(meta, c.params.adapt_utterances);
  binio::put_u64(meta, c.params.min_frames);
  binio::put_u64(meta, c.params.max_frames);
  binio::put_tensor(meta, c.patterns);
  binio::put_tensor(meta, c.wave_expansion);
  binio::put_u64(meta, c.speakers.size());
  for (const auto& s : c.speakers) {
    binio::put_string(meta, s.id);
    binio::put_u64(meta, s.heldout_target ? 1 : 0);
    binio::put_f64(meta, s.noise_sigma);
    binio::put_tensor(meta, s.gain);
    binio::put_tensor(meta, s.bias);
  }

  for (const auto& u : c.utterances) {
    std::ofstream f(fs::path(dir) / "utt" / (u.id + ".bin"), std::ios::binary);
    if (!f) throw ConfigError("cannot write utterance block for " + u.id);
    binio::put_u64(f, u.symbols.size());
    binio::put_u64(f, u.acoustics.cols());
    binio::put_u64(f, u.wave.cols());
    for (std::size_t sym : u.symbols) binio::put_u64(f, sym);
    for (std::size_t i = 0; i < u.acoustics.size(); ++i)
      binio::put_f64(f, u.acoustics[i]);
    for (std::size_t i = 0; i < u.wave.size(); ++i) binio::put_f64(f, u.wave[i]);
  }
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream meta(fs::path(dir) / "meta.bin", std::ios::binary);
  if (!meta) throw ConfigError("no corpus found at '" + dir + "'");
  char magic[8];
  meta.read(magic, 8);
  if (!meta || std::string(magic, 8) != "VQCORP01")
    throw ConfigError("'" + dir + "' is not a corpus directory");
  if (binio::get_u64(meta) != 1) throw ConfigError("unsupported corpus version");

  Corpus c;
  c.params.vocab = binio::get_u64(meta);
  c.params.acoustic_dim = binio::get_u64(meta);
  c.params.wave_k = binio::get_u64(meta);
  c.params.seed = binio::get_u64(meta);
  c.params.noise_sigma = binio::get_f64(meta);
  c.params.speaker_margin = binio::get_f64(meta);
  c.params.train_speakers = binio::get_u64(meta);
  c.params.target_speakers = binio::get_u64(meta);
  c.params.utterances_per_speaker = binio::get_u64(meta);
  c.params.test_utterances = binio::get_u64(meta);
  c.params.adapt_utterances = binio::get_u64(meta);
  c.params.min_frames = binio::get_u64(meta);
  c.params.max_frames = binio::get_u64(meta);
  c.patterns = binio::get_tensor(meta);
  c.wave_expansion = binio::get_tensor(meta);
  std::uint64_t n_speakers = binio::get_u64(meta);
  for (std::uint64_t i = 0; i < n_speakers; ++i) {
    SpeakerSpec s;
    s.id = binio::get_string(meta);
    s.heldout_target = binio::get_u64(meta) != 0;
    s.noise_sigma = binio::get_f64(meta);
    s.gain = binio::get_tensor(meta);
    s.bias = binio::get_tensor(meta);
    s.patterns = c.patterns;
    c.speakers.push_back(std::move(s));
  }

  std::ifstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw ConfigError("missing manifest.csv in '" + dir + "'");
  std::string line;
  std::getline(manifest, line);  // header
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, spk, len, split;
    std::getline(row, id, ',');
    std::getline(row, spk, ',');
    std::getline(row, len, ',');
    std::getline(row, split, ',');

    std::ifstream f(fs::path(dir) / "utt" / (id + ".bin"), std::ios::binary);
    if (!f) throw ConfigError("missing utterance block for " + id);
    SynthUtterance u;
    u.id = id;
    u.speaker_id = spk;
    u.speaker_index = c.speaker_pos(spk);
    u.split = split;
    std::uint64_t t = binio::get_u64(f);
    std::uint64_t a = binio::get_u64(f);
    std::uint64_t k = binio::get_u64(f);
    u.symbols.resize(t);
    for (std::uint64_t i = 0; i < t; ++i) u.symbols[i] = binio::get_u64(f);
    u.acoustics = Tensor(t, a);
    for (std::size_t i = 0; i < u.acoustics.size(); ++i)
      u.acoustics[i] = binio::get_f64(f);
    u.wave = Tensor(t, k);
    for (std::size_t i = 0; i < u.wave.size(); ++i) u.wave[i] = binio::get_f64(f);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

bool corpora_identical(const Corpus& a, const Corpus& b) {
  if (a.speakers.size() != b.speakers.size() ||
      a.utterances.size() != b.utterances.size())
    return false;
  if (!a.patterns.bit_equal(b.patterns) ||
      !a.wave_expansion.bit_equal(b.wave_expansion))
    return false;
  for (std::size_t i = 0; i < a.speakers.size(); ++i) {
    const auto& x = a.speakers[i];
    const auto& y = b.speakers[i];
    if (x.id != y.id || x.heldout_target != y.heldout_target ||
        !x.gain.bit_equal(y.gain) || !x.bias.bit_equal(y.bias))
      return false;
  }
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    const auto& x = a.utterances[i];
    const auto& y = b.utterances[i];
    if (x.id != y.id || x.speaker_id != y.speaker_id || x.split != y.split ||
        x.symbols != y.symbols || !x.acoustics.bit_equal(y.acoustics) ||
        !x.wave.bit_equal(y.wave))
      return false;
  }
  return true;
}

}  // namespace vqclone::corpus
