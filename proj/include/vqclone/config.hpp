#pragma once

#include <cstdint>
#include <string>

#include "vqclone/common.hpp"

namespace vqclone::config {

// Flat key=value configuration with cosmetic [section] headers. One root
// seed drives every random draw in a run.
struct Config {
  // hyperparameters
  double alpha = 0.1;      // weight of the speech-to-speech and speech-to-text terms
  double beta = 0.25;      // latent tying weight
  double gamma = 0.01;     // vocoder weight while welding
  double delta_vq = 0.25;  // codebook training weight
  double delta_c = 1.0;    // encoder commitment weight

  // model
  std::string mode = "vq";  // vq | vae | standard
  std::uint64_t codebook_k = 160;
  std::uint64_t latent_dim = 64;
  std::uint64_t hidden_dim = 64;
  std::uint64_t speaker_dim = 8;
  std::uint64_t acoustic_dim = 8;
  std::uint64_t wave_k = 4;  // waveform samples per acoustic frame
  std::uint64_t vocab_size = 12;
  std::uint64_t sdec_window = 3;  // previous acoustic frames fed to SDec

  // corpus
  std::uint64_t train_speakers = 8;
  std::uint64_t target_speakers = 2;
  std::uint64_t utterances_per_speaker = 12;
  std::uint64_t test_utterances = 4;
  std::uint64_t adapt_utterances = 10;
  std::uint64_t min_frames = 8;
  std::uint64_t max_frames = 24;
  double noise_sigma = 0.02;
  double speaker_margin = 0.6;
  double frames_per_second = 50.0;

  // training
  std::uint64_t train_steps = 500;
  std::uint64_t voc_steps = 300;
  std::uint64_t adapt_steps = 100;
  std::uint64_t weld_steps = 50;
  double learning_rate = 0.05;
  double momentum = 0.95;
  double grad_clip = 5.0;

  // run
  std::uint64_t seed = 1234;
  std::string data_dir = "data";
  std::string target_speaker;  // empty: first held-out target
};

Config defaults();

// Parses key=value text. Unknown keys are errors; values are validated.
Config parse(const std::string& text);
Config load(const std::string& path);

// Canonical text form: fixed key order, full float precision. parse(render(c))
// reproduces c exactly.
std::string render(const Config& c);
void save(const Config& c, const std::string& path);

std::uint64_t config_hash(const Config& c);

}  // namespace vqclone::config
