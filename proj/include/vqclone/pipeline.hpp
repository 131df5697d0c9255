#pragma once

#include <map>
#include <string>

#include "vqclone/checkpoint.hpp"
#include "vqclone/codebook.hpp"
#include "vqclone/config.hpp"
#include "vqclone/corpus.hpp"
#include "vqclone/losses.hpp"
#include "vqclone/model.hpp"

namespace vqclone::pipeline {

// Plain gradient descent with global-norm clipping. Parameters of frozen
// modules are never touched. Throws NumericError on non-finite gradients.
void sgd_step(model::ModelState& m, const std::map<std::string, Tensor>& grads,
              double lr, double clip);

// Full-batch gradient descent with classical (heavy-ball) momentum and the
// same clipping rule; deterministic. Velocity starts at zero and lives for
// one stage.
class Sgd {
 public:
  Sgd(double lr, double clip, double momentum)
      : lr_(lr), clip_(clip), momentum_(momentum) {}
  void step(model::ModelState& m, const std::map<std::string, Tensor>& grads);

 private:
  double lr_, clip_, momentum_;
  std::map<std::string, Tensor> velocity_;
};

// Writes config.txt (resolved config) and manifest.txt (config hash, seed,
// stage, parent checkpoint) into the run directory.
void write_run_metadata(const std::string& dir, const config::Config& cfg,
                        const std::string& stage,
                        const std::string& parent_checkpoint);

// Joint supervised training of encoders, decoders and codebook from a fresh
// model. Persists a loss log and the final checkpoint under out_dir; on a
// non-finite loss the last good state is checkpointed before rethrowing.
model::ModelState train_initial(const corpus::Corpus& c,
                                const config::Config& cfg,
                                const std::string& out_dir);

// Separate vocoder regression; every non-vocoder parameter stays bit-equal.
model::ModelState train_vocoder(const corpus::Corpus& c, model::ModelState m,
                                const config::Config& cfg,
                                const std::string& out_dir);

struct AdaptResult {
  model::ModelState post_removal;  // right after SD removal
  model::ModelState post_decoder;  // after the speech-decoder pass
  model::ModelState state;         // after the vocoder sibling pass
};

// Removes SD components, fine-tunes the speech decoder on the untranscribed
// set, then runs the vocoder sibling pass. Everything else stays frozen.
AdaptResult adapt(model::ModelState m, const corpus::AdaptationSet& set,
                  const config::Config& cfg, const std::string& out_dir);

// Joint decoder+vocoder tuning; requires a previously adapted model.
model::ModelState weld(model::ModelState m, const corpus::AdaptationSet& set,
                       const config::Config& cfg, const std::string& out_dir);

struct InferResult {
  Tensor acoustics;       // T x A prediction
  Tensor wave;            // T x wave_k, row-major = wave_k * T samples
  vq::CodeSequence codes; // empty outside vq mode
  bool welded = true;     // false: inference ran on a pre-weld model
};

InferResult infer_tts(const model::SymbolSequence& x, const model::ModelState& m);
InferResult infer_vc(const Tensor& y_source, const model::ModelState& m);

}  // namespace vqclone::pipeline
