#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vqclone/binio.hpp"
#include "vqclone/checkpoint.hpp"
#include "vqclone/config.hpp"
#include "vqclone/corpus.hpp"
#include "vqclone/gradcheck.hpp"
#include "vqclone/losses.hpp"
#include "vqclone/metrics.hpp"
#include "vqclone/model.hpp"
#include "vqclone/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vqclone;

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint_path;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> utterances;
};

config::Config resolve_config(const CliOptions& opt) {
  config::Config cfg =
      opt.config_path.empty() ? config::defaults() : config::load(opt.config_path);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.mode.empty()) {
    model::mode_from_string(opt.mode);  // validates
    cfg.mode = opt.mode;
  }
  if (opt.utterances) cfg.adapt_utterances = *opt.utterances;
  return cfg;
}

void add_common(CLI::App* cmd, CliOptions& opt, bool with_checkpoint) {
  cmd->add_option("--config", opt.config_path, "config file (key=value)");
  cmd->add_option("--out", opt.out_dir, "run directory")->required();
  cmd->add_option("--seed", opt.seed, "override the config seed");
  cmd->add_option("--mode", opt.mode, "override the latent mode (vq|vae|standard)");
  cmd->add_option("--utterances", opt.utterances, "adaptation-set size");
  if (with_checkpoint)
    cmd->add_option("--checkpoint", opt.checkpoint_path, "input checkpoint")
        ->required();
}

corpus::Corpus load_data(const config::Config& cfg) {
  return corpus::load_corpus(cfg.data_dir);
}

model::ModelState load_ckpt(const std::string& path) {
  if (!fs::exists(path))
    throw ConfigError("missing checkpoint '" + path +
                      "'; run the preceding stage first");
  return checkpoint::load(path);
}

std::string pick_target(const config::Config& cfg, const corpus::Corpus& c) {
  if (!cfg.target_speaker.empty()) return cfg.target_speaker;
  for (const auto& s : c.speakers)
    if (s.heldout_target) return s.id;
  throw ConfigError("corpus has no held-out target speaker");
}

void save_prediction(const std::string& path, const Tensor& acoustics,
                     const Tensor& wave) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  binio::put_u64(f, acoustics.rows());
  binio::put_u64(f, acoustics.cols());
  binio::put_u64(f, wave.cols());
  for (std::size_t i = 0; i < acoustics.size(); ++i)
    binio::put_f64(f, acoustics[i]);
  for (std::size_t i = 0; i < wave.size(); ++i) binio::put_f64(f, wave[i]);
}

int cmd_gen_data(const CliOptions& opt) {
  config::Config cfg = resolve_config(opt);
  corpus::Corpus c = corpus::gen_corpus(corpus::Params::from_config(cfg));
  corpus::save_corpus(c, opt.out_dir);
  pipeline::write_run_metadata(opt.out_dir, cfg, "gen-data", "");
  std::cout << "corpus: " << c.speakers.size() << " speakers, "
            << c.utterances.size() << " utterances -> " << opt.out_dir << "\n";
  return 0;
}

int cmd_train(const CliOptions& opt) {
  config::Config cfg = resolve_config(opt);
  corpus::Corpus c = load_data(cfg);
  pipeline::write_run_metadata(opt.out_dir, cfg, "train", "");
  model::ModelState m = pipeline::train_initial(c, cfg, opt.out_dir);
  std::cout << "train: " << cfg.train_steps << " steps -> " << opt.out_dir
            << "/train-" << m.step << ".ckpt\n";
  return 0;
}

int cmd_train_voc(const CliOptions& opt) {
  config::Config cfg = resolve_config(opt);
  corpus::Corpus c = load_data(cfg);
  model::ModelState m = load_ckpt(opt.checkpoint_path);
  pipeline::write_run_metadata(opt.out_dir, cfg, "train-voc", opt.checkpoint_path);
  m = pipeline::train_vocoder(c, std::move(m), cfg, opt.out_dir);
  std::cout << "train-voc: " << cfg.voc_steps << " steps -> " << opt.out_dir
            << "/vocoder-" << m.step << ".ckpt\n";
  return 0;
}

int cmd_adapt(const CliOptions& opt) {
  config::Config cfg = resolve_config(opt);
  corpus::Corpus c = load_data(cfg);
  model::ModelState m = load_ckpt(opt.checkpoint_path);
  std::string target = pick_target(cfg, c);
  corpus::AdaptationSet set =
      corpus::strip_transcripts(c, target, cfg.adapt_utterances);
  pipeline::write_run_metadata(opt.out_dir, cfg, "adapt", opt.checkpoint_path);
  auto result = pipeline::adapt(std::move(m), set, cfg, opt.out_dir);
  std::cout << "adapt: target " << target << ", " << set.items.size()
            << " utterances -> " << opt.out_dir << "/adapt-"
            << result.state.step << ".ckpt\n";
  return 0;
}

int cmd_weld(const CliOptions& opt) {
  config::Config cfg = resolve_config(opt);
  corpus::Corpus c = load_data(cfg);
  model::ModelState m = load_ckpt(opt.checkpoint_path);
  std::string target = pick_target(cfg, c);
  corpus::AdaptationSet set =
      corpus::strip_transcripts(c, target, cfg.adapt_utterances);
  pipeline::write_run_metadata(opt.out_dir, cfg, "weld", opt.checkpoint_path);
  m = pipeline::weld(std::move(m), set, cfg, opt.out_dir);
  std::cout << "weld: target " << target << " -> " << opt.out_dir << "/weld-"
            << m.step << ".ckpt\n";
  return 0;
}

int cmd_infer(const CliOptions& opt, bool tts) {
  config::Config cfg = resolve_config(opt);
  corpus::Corpus c = load_data(cfg);
  model::ModelState m = load_ckpt(opt.checkpoint_path);
  pipeline::write_run_metadata(opt.out_dir, cfg, tts ? "infer-tts" : "infer-vc",
                               opt.checkpoint_path);
  fs::create_directories(opt.out_dir);
  std::ofstream index(fs::path(opt.out_dir) / "index.csv");
  index << "utterance_id,frames,samples\n";
  for (const auto* u : c.split_items("test")) {
    pipeline::InferResult r = tts ? pipeline::infer_tts(u->symbols, m)
                                  : pipeline::infer_vc(u->acoustics, m);
    save_prediction((fs::path(opt.out_dir) / (u->id + ".bin")).string(),
                    r.acoustics, r.wave);
    if (m.cfg.mode == model::Mode::kVq)
      vq::write_codes_csv(
          (fs::path(opt.out_dir) / ("codes_" + u->id + ".csv")).string(),
          r.codes);
    index << u->id << "," << r.acoustics.rows() << "," << r.wave.size() << "\n";
  }
  std::cout << (tts ? "infer-tts" : "infer-vc") << " -> " << opt.out_dir << "\n";
  return 0;
}

int cmd_analyze(const CliOptions& opt) {
  config::Config cfg = resolve_config(opt);
  corpus::Corpus c = load_data(cfg);
  model::ModelState m = load_ckpt(opt.checkpoint_path);
  if (m.cfg.mode != model::Mode::kVq)
    throw ConfigError("analyze needs a vq-mode checkpoint; got mode '" +
                      model::mode_to_string(m.cfg.mode) + "'");
  pipeline::write_run_metadata(opt.out_dir, cfg, "analyze", opt.checkpoint_path);
  fs::create_directories(opt.out_dir);

  std::ofstream overlap_csv(fs::path(opt.out_dir) / "overlap.csv");
  overlap_csv << "utterance_id,frames,matches,overlap\n";
  std::vector<std::uint64_t> text_hist(m.cfg.codebook_k, 0);
  std::vector<std::uint64_t> speech_hist(m.cfg.codebook_k, 0);
  std::vector<vq::CodeSequence> speech_seqs;
  const Tensor& entries = m.p("codebook.e");
  int svg_budget = 4;
  double overlap_sum = 0.0;
  std::size_t utt_count = 0;

  for (const auto* u : c.split_items("test")) {
    if (c.speakers[u->speaker_index].heldout_target) continue;
    vq::CodeSequence text_codes =
        vq::quantize(model::encode_text(u->symbols, m), entries);
    vq::CodeSequence speech_codes =
        vq::quantize(model::encode_speech(u->acoustics, m), entries);
    double ov = metrics::code_overlap(text_codes, speech_codes);
    std::size_t matches = 0;
    for (std::size_t t = 0; t < text_codes.indices.size(); ++t)
      if (text_codes.indices[t] == speech_codes.indices[t]) ++matches;
    char row[160];
    std::snprintf(row, sizeof(row), "%s,%zu,%zu,%.17g\n", u->id.c_str(),
                  text_codes.indices.size(), matches, ov);
    overlap_csv << row;
    overlap_sum += ov;
    ++utt_count;
    for (std::size_t idx : text_codes.indices) ++text_hist[idx];
    for (std::size_t idx : speech_codes.indices) ++speech_hist[idx];
    speech_seqs.push_back(speech_codes);
    if (svg_budget-- > 0)
      metrics::write_codemap_svg(
          (fs::path(opt.out_dir) / ("codemap_" + u->id + ".svg")).string(),
          text_codes.indices, speech_codes.indices);
  }

  std::ofstream hist_csv(fs::path(opt.out_dir) / "code_histogram.csv");
  hist_csv << "code_id,text_count,speech_count\n";
  for (std::size_t k = 0; k < m.cfg.codebook_k; ++k)
    hist_csv << k << "," << text_hist[k] << "," << speech_hist[k] << "\n";

  vq::UtilizationReport util = vq::usage_stats(speech_seqs, m.cfg.codebook_k);
  metrics::BitRate rate =
      metrics::bit_rate(m.cfg.codebook_k, cfg.frames_per_second, speech_hist);
  std::ofstream summary(fs::path(opt.out_dir) / "summary.txt");
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "utterances = %zu\nmean_overlap = %.6f\nused_fraction = %.6f\n"
                "perplexity = %.6f\nfixed_bits_per_frame = %llu\n"
                "fixed_bps = %.6f\nentropy_bits_per_frame = %.6f\n"
                "entropy_bps = %.6f\n",
                utt_count, utt_count ? overlap_sum / utt_count : 0.0,
                util.used_fraction, util.perplexity,
                static_cast<unsigned long long>(rate.fixed_bits_per_frame),
                rate.fixed_bps, rate.entropy_bits_per_frame, rate.entropy_bps);
  summary << buf;
  std::cout << buf;
  std::cout << "analyze -> " << opt.out_dir << "\n";
  return 0;
}

int cmd_gradcheck(const CliOptions& opt) {
  config::Config cfg = resolve_config(opt);
  // Fixed two-utterance toy batch, independent of any on-disk corpus.
  corpus::Params p = corpus::Params::from_config(cfg);
  p.train_speakers = 2;
  p.target_speakers = 0;
  p.utterances_per_speaker = 1;
  p.test_utterances = 0;
  p.adapt_utterances = 0;
  p.min_frames = 6;
  p.max_frames = 9;
  corpus::Corpus c = corpus::gen_corpus(p);
  losses::Batch batch = c.split_items("train");

  model::NetConfig nc = model::NetConfig::from_config(cfg);
  nc.n_speakers = 2;
  model::ModelState m =
      model::ModelState::init(nc, mix_seed(cfg.seed, fnv1a64("model-init")));
  losses::HyperParams hyper = losses::HyperParams::from_config(cfg);

  corpus::AdaptationSet set = corpus::strip_transcripts(c, "S00");
  model::ModelState removed = model::remove_sd(m);

  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  auto run = [&](const char* name, model::ModelState& state,
                 const std::function<ad::Value(ad::Graph&)>& build) {
    auto report = ad::check_gradients(build);
    std::printf("%-18s max_rel_err %.3e over %zu components "
                "(worst: %s, analytic %.6e vs fd %.6e)\n",
                name, report.max_rel_err, report.components_checked,
                report.worst_param.c_str(), report.worst_analytic,
                report.worst_fd);
    (void)state;
    worst = std::max(worst, report.max_rel_err);
  };

  m.freeze = model::FreezeFlags{};
  Rng rng1(mix_seed(cfg.seed, fnv1a64("eps:gradcheck-joint")));
  run("joint_train_loss", m, [&](ad::Graph& g) {
    return losses::joint_train_loss_g(g, batch, m, hyper, &rng1, nullptr);
  });

  m.freeze_all_except({"voc"});
  run("vocoder_loss", m, [&](ad::Graph& g) {
    return losses::vocoder_train_loss_g(g, batch, m, nullptr);
  });

  removed.freeze_all_except({"sdec"});
  Rng rng2(mix_seed(cfg.seed, fnv1a64("eps:gradcheck-adapt")));
  run("adapt_loss", removed, [&](ad::Graph& g) {
    return losses::adapt_loss_g(g, set, removed, &rng2, nullptr);
  });

  removed.freeze_all_except({"sdec", "voc"});
  Rng rng3(mix_seed(cfg.seed, fnv1a64("eps:gradcheck-weld")));
  run("weld_loss", removed, [&](ad::Graph& g) {
    return losses::weld_loss_g(g, set, removed, hyper, &rng3, nullptr);
  });

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::printf("gradcheck: max relative error %.3e in %.1f s\n", worst, secs);
  if (!(worst < 1e-4))
    throw NumericError("gradient check failed: max relative error " +
                       std::to_string(worst));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vector-quantized latent voice cloning workbench"};
  app.require_subcommand(1);

  CliOptions opt;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, opt, false);
  CLI::App* train = app.add_subcommand("train", "joint initial training");
  add_common(train, opt, false);
  CLI::App* trainvoc =
      app.add_subcommand("train-voc", "train the neural vocoder");
  add_common(trainvoc, opt, true);
  CLI::App* adapt =
      app.add_subcommand("adapt", "clone step 1: decoder adaptation");
  add_common(adapt, opt, true);
  CLI::App* weldc = app.add_subcommand("weld", "clone step 2: decoder+vocoder");
  add_common(weldc, opt, true);
  CLI::App* itts = app.add_subcommand("infer-tts", "text-to-speech inference");
  add_common(itts, opt, true);
  CLI::App* ivc = app.add_subcommand("infer-vc", "voice-conversion inference");
  add_common(ivc, opt, true);
  CLI::App* analyze =
      app.add_subcommand("analyze", "discrete-code overlap and usage analysis");
  add_common(analyze, opt, true);
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of every stage loss");
  gradcheck->add_option("--config", opt.config_path, "config file");
  gradcheck->add_option("--seed", opt.seed, "override the config seed");
  gradcheck->add_option("--mode", opt.mode, "override the latent mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opt);
    if (train->parsed()) return cmd_train(opt);
    if (trainvoc->parsed()) return cmd_train_voc(opt);
    if (adapt->parsed()) return cmd_adapt(opt);
    if (weldc->parsed()) return cmd_weld(opt);
    if (itts->parsed()) return cmd_infer(opt, true);
    if (ivc->parsed()) return cmd_infer(opt, false);
    if (analyze->parsed()) return cmd_analyze(opt);
    if (gradcheck->parsed()) return cmd_gradcheck(opt);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
