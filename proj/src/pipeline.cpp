#include "vqclone/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

namespace vqclone::pipeline {

namespace fs = std::filesystem;
using model::ModelState;

void sgd_step(ModelState& m, const std::map<std::string, Tensor>& grads,
              double lr, double clip) {
  double norm_sq = 0.0;
  for (const auto& [name, g] : grads) {
    if (m.module_frozen(name)) continue;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("non-finite gradient for '" + name + "'");
      norm_sq += g[i] * g[i];
    }
  }
  const double norm = std::sqrt(norm_sq);
  const double scale = norm > clip ? clip / norm : 1.0;
  for (const auto& [name, g] : grads) {
    if (m.module_frozen(name)) continue;
    Tensor& p = m.p(name);
    if (!p.same_shape(g)) throw ShapeError("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * scale * g[i];
  }
}

void Sgd::step(model::ModelState& m, const std::map<std::string, Tensor>& grads) {
  double norm_sq = 0.0;
  for (const auto& [name, g] : grads) {
    if (m.module_frozen(name)) continue;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("non-finite gradient for '" + name + "'");
      norm_sq += g[i] * g[i];
    }
  }
  const double norm = std::sqrt(norm_sq);
  const double scale = norm > clip_ ? clip_ / norm : 1.0;
  for (const auto& [name, g] : grads) {
    if (m.module_frozen(name)) continue;
    Tensor& p = m.p(name);
    if (!p.same_shape(g)) throw ShapeError("Sgd: gradient shape mismatch");
    Tensor& v = velocity_[name];
    if (!v.same_shape(g)) v = Tensor(g.rows(), g.cols());
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum_ * v[i] + scale * g[i];
      p[i] -= lr_ * v[i];
    }
  }
}

void write_run_metadata(const std::string& dir, const config::Config& cfg,
                        const std::string& stage,
                        const std::string& parent_checkpoint) {
  fs::create_directories(dir);
  config::save(cfg, (fs::path(dir) / "config.txt").string());
  std::ofstream f(fs::path(dir) / "manifest.txt");
  if (!f) throw ConfigError("cannot write run manifest in '" + dir + "'");
  f << "config_hash = " << config::config_hash(cfg) << "\n";
  f << "seed = " << cfg.seed << "\n";
  f << "stage = " << stage << "\n";
  f << "parent_checkpoint = "
    << (parent_checkpoint.empty() ? "none" : parent_checkpoint) << "\n";
}

namespace {

std::string ckpt_path(const std::string& dir, const std::string& stage,
                      std::uint64_t step) {
  return (fs::path(dir) / (stage + "-" + std::to_string(step) + ".ckpt"))
      .string();
}

// Shared stage loop: full-batch steps with a last-good checkpoint on
// numeric failure.
void run_stage(ModelState& m, const std::string& stage_label,
               std::uint64_t steps, const config::Config& cfg,
               const std::string& out_dir,
               const std::function<ad::Value(ad::Graph&, losses::LossBreakdown*)>&
                   build_loss) {
  const std::string loss_csv = (fs::path(out_dir) / "loss_log.csv").string();
  Sgd opt(cfg.learning_rate, cfg.grad_clip, cfg.momentum);
  for (std::uint64_t step = 1; step <= steps; ++step) {
    auto snapshot = m.params;
    try {
      ad::Graph g;
      losses::LossBreakdown bd;
      ad::Value total = build_loss(g, &bd);
      g.backward(total);
      opt.step(m, g.param_grads());
      losses::append_loss_csv(loss_csv, step, stage_label, bd);
    } catch (const NumericError& e) {
      m.params = std::move(snapshot);
      const std::string rescue =
          (fs::path(out_dir) / (stage_label + "-abort.ckpt")).string();
      checkpoint::save(m, rescue);
      throw NumericError(std::string(e.what()) + " (" + stage_label + " step " +
                         std::to_string(step) +
                         "; last good checkpoint: " + rescue + ")");
    }
  }
}

losses::Batch train_batch(const corpus::Corpus& c) {
  losses::Batch batch = c.split_items("train");
  if (batch.empty()) throw StateError("corpus has no training split");
  return batch;
}

}  // namespace

ModelState train_initial(const corpus::Corpus& c, const config::Config& cfg,
                         const std::string& out_dir) {
  fs::create_directories(out_dir);
  ModelState m = ModelState::init(model::NetConfig::from_config(cfg),
                                  mix_seed(cfg.seed, fnv1a64("model-init")));
  losses::Batch batch = train_batch(c);
  losses::HyperParams hyper = losses::HyperParams::from_config(cfg);
  Rng eps_rng(mix_seed(cfg.seed, fnv1a64("eps:train")));

  m.freeze = model::FreezeFlags{};  // everything trains
  run_stage(m, "train", cfg.train_steps, cfg, out_dir,
            [&](ad::Graph& g, losses::LossBreakdown* bd) {
              return losses::joint_train_loss_g(g, batch, m, hyper, &eps_rng, bd);
            });
  m.stage = model::Stage::kTrained;
  m.step = cfg.train_steps;
  checkpoint::save(m, ckpt_path(out_dir, "train", m.step));
  return m;
}

ModelState train_vocoder(const corpus::Corpus& c, ModelState m,
                         const config::Config& cfg, const std::string& out_dir) {
  if (m.stage != model::Stage::kTrained)
    throw StateError("train-voc requires a checkpoint from the train stage, "
                     "got stage '" +
                     std::string(model::stage_name(m.stage)) + "'");
  fs::create_directories(out_dir);
  losses::Batch batch = train_batch(c);
  m.freeze_all_except({"voc"});
  run_stage(m, "vocoder", cfg.voc_steps, cfg, out_dir,
            [&](ad::Graph& g, losses::LossBreakdown* bd) {
              return losses::vocoder_train_loss_g(g, batch, m, bd);
            });
  m.stage = model::Stage::kVocTrained;
  m.step = cfg.voc_steps;
  checkpoint::save(m, ckpt_path(out_dir, "vocoder", m.step));
  return m;
}

AdaptResult adapt(ModelState m, const corpus::AdaptationSet& set,
                  const config::Config& cfg, const std::string& out_dir) {
  if (m.stage != model::Stage::kVocTrained)
    throw StateError(
        "adapt requires a checkpoint from the train-voc stage, got stage '" +
        std::string(model::stage_name(m.stage)) + "'");
  fs::create_directories(out_dir);

  AdaptResult result;
  m = model::remove_sd(m);
  result.post_removal = m;
  checkpoint::save(m, ckpt_path(out_dir, "adapt", 0));

  Rng eps_rng(mix_seed(cfg.seed, fnv1a64("eps:adapt")));
  m.freeze_all_except({"sdec"});
  run_stage(m, "adapt", cfg.adapt_steps, cfg, out_dir,
            [&](ad::Graph& g, losses::LossBreakdown* bd) {
              return losses::adapt_loss_g(g, set, m, &eps_rng, bd);
            });
  result.post_decoder = m;

  // Vocoder sibling pass: same strategy, only the vocoder moves.
  m.freeze_all_except({"voc"});
  run_stage(m, "adapt-voc", cfg.adapt_steps, cfg, out_dir,
            [&](ad::Graph& g, losses::LossBreakdown* bd) {
              return losses::vocoder_adapt_loss_g(g, set, m, bd);
            });

  m.stage = model::Stage::kAdapted;
  m.step = cfg.adapt_steps;
  checkpoint::save(m, ckpt_path(out_dir, "adapt", m.step));
  result.state = std::move(m);
  return result;
}

ModelState weld(ModelState m, const corpus::AdaptationSet& set,
                const config::Config& cfg, const std::string& out_dir) {
  if (m.stage != model::Stage::kAdapted)
    throw StateError("weld requires an adapted checkpoint, got stage '" +
                     std::string(model::stage_name(m.stage)) + "'");
  fs::create_directories(out_dir);
  losses::HyperParams hyper = losses::HyperParams::from_config(cfg);
  Rng eps_rng(mix_seed(cfg.seed, fnv1a64("eps:weld")));
  m.freeze_all_except({"sdec", "voc"});
  run_stage(m, "weld", cfg.weld_steps, cfg, out_dir,
            [&](ad::Graph& g, losses::LossBreakdown* bd) {
              return losses::weld_loss_g(g, set, m, hyper, &eps_rng, bd);
            });
  m.stage = model::Stage::kWelded;
  m.step = cfg.weld_steps;
  checkpoint::save(m, ckpt_path(out_dir, "weld", m.step));
  return m;
}

namespace {

InferResult infer_from_latents(const Tensor& z, const ModelState& m,
                               bool welded) {
  InferResult r;
  r.welded = welded;
  Tensor dec_in = z;
  if (m.cfg.mode == model::Mode::kVq) {
    r.codes = vq::quantize(z, m.p("codebook.e"));
    dec_in = r.codes.vectors;
  }
  std::optional<std::size_t> speaker;  // cloning interfaces are speaker-free
  r.acoustics = model::decode_speech(dec_in, speaker, m);
  r.wave = model::vocode(r.acoustics, speaker, m);
  return r;
}

bool check_welded(const ModelState& m, const char* what) {
  if (m.stage == model::Stage::kWelded) return true;
  std::cerr << "warning: " << what << " on a model at stage '"
            << model::stage_name(m.stage) << "' (welding pending)\n";
  return false;
}

}  // namespace

InferResult infer_tts(const model::SymbolSequence& x, const ModelState& m) {
  bool welded = check_welded(m, "TTS inference");
  return infer_from_latents(model::encode_text(x, m), m, welded);
}

InferResult infer_vc(const Tensor& y_source, const ModelState& m) {
  bool welded = check_welded(m, "VC inference");
  return infer_from_latents(model::encode_speech(y_source, m), m, welded);
}

}  // namespace vqclone::pipeline
