#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqclone/config.hpp"
#include "vqclone/graph.hpp"
#include "vqclone/tensor.hpp"

namespace vqclone::model {

enum class Mode { kVq, kVae, kStandard };
Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

enum class Stage { kFresh, kTrained, kVocTrained, kAdapted, kWelded };
const char* stage_name(Stage s);
Stage stage_from_name(const std::string& s);

using SymbolSequence = std::vector<std::size_t>;

struct NetConfig {
  Mode mode = Mode::kVq;
  std::size_t vocab = 12;
  std::size_t acoustic_dim = 8;
  std::size_t latent_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t codebook_k = 160;
  std::size_t speaker_dim = 8;
  std::size_t window = 3;  // previous acoustic frames seen by the speech decoder
  std::size_t wave_k = 4;
  std::size_t n_speakers = 8;

  static NetConfig from_config(const config::Config& c);
  std::size_t encoder_out_dim() const {
    return mode == Mode::kVae ? 2 * latent_dim : latent_dim;
  }
  bool operator==(const NetConfig&) const = default;
};

struct FreezeFlags {
  bool tenc = false, senc = false, sdec = false, tdec = false, voc = false,
       codebook = false, speaker = false;
  bool operator==(const FreezeFlags&) const = default;
};

// All parameters of the five networks, the codebook and the speaker table,
// keyed "<module>.<tensor>". std::map keeps iteration order deterministic.
class ModelState {
 public:
  static ModelState init(const NetConfig& cfg, std::uint64_t seed);

  NetConfig cfg;
  std::map<std::string, Tensor> params;
  FreezeFlags freeze;
  Stage stage = Stage::kFresh;
  std::uint64_t step = 0;
  bool sd_removed = false;
  // Access instrumentation: bumps on every speaker-table lookup.
  mutable std::uint64_t speaker_table_reads = 0;

  const Tensor& p(const std::string& name) const;
  Tensor& p(const std::string& name);
  bool module_frozen(const std::string& param_name) const;
  void freeze_all_except(const std::vector<std::string>& modules);
};

bool params_identical(const ModelState& a, const ModelState& b,
                      const std::vector<std::string>& skip_modules = {});

// ---- graph builders (loss paths; decoders teacher-forced) ----

struct EncOut {
  ad::Value z;          // latent consumed downstream
  ad::Value mu;         // VAE only
  ad::Value log_sigma;  // VAE only
};

// VAE mode samples z = mu + exp(log_sigma) * eps when vae_eps is given and
// returns the mean otherwise.
EncOut encode_text_g(ad::Graph& g, const SymbolSequence& x, const ModelState& m,
                     const Tensor* vae_eps = nullptr);
EncOut encode_speech_g(ad::Graph& g, const Tensor& acoustics,
                       const ModelState& m, const Tensor* vae_eps = nullptr);
ad::Value decode_speech_g(ad::Graph& g, ad::Value dec_in,
                          const Tensor& teacher_acoustics,
                          std::optional<std::size_t> speaker,
                          const ModelState& m);
ad::Value decode_text_g(ad::Graph& g, ad::Value z,
                        std::optional<std::size_t> speaker,
                        const ModelState& m);  // per-frame symbol distribution
ad::Value vocode_g(ad::Graph& g, ad::Value acoustics,
                   std::optional<std::size_t> speaker, const ModelState& m);

// ---- plain evaluation (inference; no gradients) ----

Tensor encode_text(const SymbolSequence& x, const ModelState& m);
Tensor encode_speech(const Tensor& acoustics, const ModelState& m);
// Free-running: the causal window is filled with the decoder's own outputs.
Tensor decode_speech(const Tensor& dec_in, std::optional<std::size_t> speaker,
                     const ModelState& m);
// Teacher-forced variant (matches the graph builder bit for bit).
Tensor decode_speech_teacher(const Tensor& dec_in,
                             const Tensor& teacher_acoustics,
                             std::optional<std::size_t> speaker,
                             const ModelState& m);
Tensor decode_text(const Tensor& z, std::optional<std::size_t> speaker,
                   const ModelState& m);
Tensor vocode(const Tensor& acoustics, std::optional<std::size_t> speaker,
              const ModelState& m);

// Drops the speaker table and the per-module projections from SDec, TDec and
// Voc, replacing each with a trainable speaker-independent bias initialized
// at the average speaker contribution. Every other parameter is untouched.
ModelState remove_sd(const ModelState& m);

// Row t holds frames t-1 .. t-window, zero-padded at the start.
Tensor causal_window(const Tensor& acoustics, std::size_t window);

}  // namespace vqclone::model
