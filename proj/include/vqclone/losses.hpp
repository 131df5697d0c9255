#pragma once

#include <string>
#include <vector>

#include "vqclone/codebook.hpp"
#include "vqclone/config.hpp"
#include "vqclone/corpus.hpp"
#include "vqclone/graph.hpp"
#include "vqclone/model.hpp"

namespace vqclone::losses {

struct HyperParams {
  double alpha_sts = 0.1;
  double alpha_stt = 0.1;
  double beta = 0.25;
  double gamma = 0.01;
  double delta_vq = 0.25;
  double delta_c = 1.0;

  static HyperParams from_config(const config::Config& c);
};

// Every objective term, individually reported. total is the weighted sum the
// stage actually optimizes; terms outside that stage stay zero except
// loss_ttt, which is computed for reporting but carries no weight.
struct LossBreakdown {
  double loss_tts = 0.0;
  double loss_sts = 0.0;
  double loss_stt = 0.0;
  double loss_ttt = 0.0;
  double loss_tie = 0.0;
  double loss_vq_t = 0.0;
  double loss_vq_s = 0.0;
  double loss_c_t = 0.0;
  double loss_c_s = 0.0;
  double loss_voc = 0.0;
  double total = 0.0;
};

using Batch = std::vector<const corpus::SynthUtterance*>;

// Text stack objective: reconstruction + weighted codebook and commitment
// terms (the latter two are identically zero outside vq mode).
ad::Value tts_stack_loss_g(ad::Graph& g, const Batch& batch,
                           const model::ModelState& m, const HyperParams& h,
                           Rng* vae_rng, LossBreakdown* bd);

// Speech stack mirror of the above.
ad::Value sts_stack_loss_g(ad::Graph& g, const Batch& batch,
                           const model::ModelState& m, const HyperParams& h,
                           Rng* vae_rng, LossBreakdown* bd);

// Latent tying on already-built encoder outputs. vq: squared distance against
// the stopped text latent; vae: KL from the speech posterior to the (stopped)
// text posterior; standard: symmetric squared distance.
ad::Value tie_loss_g(ad::Graph& g, const model::EncOut& text,
                     const model::EncOut& speech, model::Mode mode);

// Joint initial-training objective over a transcribed batch.
ad::Value joint_train_loss_g(ad::Graph& g, const Batch& batch,
                             const model::ModelState& m, const HyperParams& h,
                             Rng* vae_rng, LossBreakdown* bd);

// Waveform regression for the separately trained vocoder.
ad::Value vocoder_train_loss_g(ad::Graph& g, const Batch& batch,
                               const model::ModelState& m, LossBreakdown* bd);

// Decoder fine-tuning on untranscribed speech: the speech-stack goal alone.
ad::Value adapt_loss_g(ad::Graph& g, const corpus::AdaptationSet& set,
                       const model::ModelState& m, Rng* vae_rng,
                       LossBreakdown* bd);

// Vocoder sibling pass over the same untranscribed material.
ad::Value vocoder_adapt_loss_g(ad::Graph& g, const corpus::AdaptationSet& set,
                               const model::ModelState& m, LossBreakdown* bd);

// Decoder+vocoder compatibility objective.
ad::Value weld_loss_g(ad::Graph& g, const corpus::AdaptationSet& set,
                      const model::ModelState& m, const HyperParams& h,
                      Rng* vae_rng, LossBreakdown* bd);

// Appends one row per step; writes the header when the file is new.
void append_loss_csv(const std::string& path, std::uint64_t step,
                     const std::string& stage, const LossBreakdown& bd);

}  // namespace vqclone::losses
