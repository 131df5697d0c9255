#include "vqclone/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vqclone::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    if (!std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad value for '" + key + "': " + v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("bad value for '" + key + "': " + v);
  return out;
}

std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

void validate(const Config& c) {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ConfigError(std::string(name) + " must be finite and >= 0");
  };
  nonneg(c.alpha, "alpha");
  nonneg(c.beta, "beta");
  nonneg(c.gamma, "gamma");
  nonneg(c.delta_vq, "delta_vq");
  nonneg(c.delta_c, "delta_c");
  nonneg(c.noise_sigma, "noise_sigma");
  if (c.mode != "vq" && c.mode != "vae" && c.mode != "standard")
    throw ConfigError("mode must be vq, vae or standard, got '" + c.mode + "'");
  if (c.codebook_k < 1) throw ConfigError("codebook_k must be >= 1");
  if (c.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (c.hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (c.acoustic_dim < 1) throw ConfigError("acoustic_dim must be >= 1");
  if (c.wave_k < 1) throw ConfigError("wave_k must be >= 1");
  if (c.vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (c.train_speakers < 1) throw ConfigError("train_speakers must be >= 1");
  if (c.min_frames < 1 || c.max_frames < c.min_frames)
    throw ConfigError("need 1 <= min_frames <= max_frames");
  if (c.learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (c.momentum < 0.0 || c.momentum >= 1.0)
    throw ConfigError("momentum must be in [0, 1)");
  if (c.grad_clip <= 0.0) throw ConfigError("grad_clip must be > 0");
  if (c.frames_per_second <= 0.0)
    throw ConfigError("frames_per_second must be > 0");
}

}  // namespace

Config defaults() { return Config{}; }

Config parse(const std::string& text) {
  Config c;
  std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"alpha", [&](const std::string& v) { c.alpha = parse_double("alpha", v); }},
      {"beta", [&](const std::string& v) { c.beta = parse_double("beta", v); }},
      {"gamma", [&](const std::string& v) { c.gamma = parse_double("gamma", v); }},
      {"delta_vq", [&](const std::string& v) { c.delta_vq = parse_double("delta_vq", v); }},
      {"delta_c", [&](const std::string& v) { c.delta_c = parse_double("delta_c", v); }},
      {"mode", [&](const std::string& v) { c.mode = v; }},
      {"codebook_k", [&](const std::string& v) { c.codebook_k = parse_u64("codebook_k", v); }},
      {"latent_dim", [&](const std::string& v) { c.latent_dim = parse_u64("latent_dim", v); }},
      {"hidden_dim", [&](const std::string& v) { c.hidden_dim = parse_u64("hidden_dim", v); }},
      {"speaker_dim", [&](const std::string& v) { c.speaker_dim = parse_u64("speaker_dim", v); }},
      {"acoustic_dim", [&](const std::string& v) { c.acoustic_dim = parse_u64("acoustic_dim", v); }},
      {"wave_k", [&](const std::string& v) { c.wave_k = parse_u64("wave_k", v); }},
      {"vocab_size", [&](const std::string& v) { c.vocab_size = parse_u64("vocab_size", v); }},
      {"sdec_window", [&](const std::string& v) { c.sdec_window = parse_u64("sdec_window", v); }},
      {"train_speakers", [&](const std::string& v) { c.train_speakers = parse_u64("train_speakers", v); }},
      {"target_speakers", [&](const std::string& v) { c.target_speakers = parse_u64("target_speakers", v); }},
      {"utterances_per_speaker", [&](const std::string& v) { c.utterances_per_speaker = parse_u64("utterances_per_speaker", v); }},
      {"test_utterances", [&](const std::string& v) { c.test_utterances = parse_u64("test_utterances", v); }},
      {"adapt_utterances", [&](const std::string& v) { c.adapt_utterances = parse_u64("adapt_utterances", v); }},
      {"min_frames", [&](const std::string& v) { c.min_frames = parse_u64("min_frames", v); }},
      {"max_frames", [&](const std::string& v) { c.max_frames = parse_u64("max_frames", v); }},
      {"noise_sigma", [&](const std::string& v) { c.noise_sigma = parse_double("noise_sigma", v); }},
      {"speaker_margin", [&](const std::string& v) { c.speaker_margin = parse_double("speaker_margin", v); }},
      {"frames_per_second", [&](const std::string& v) { c.frames_per_second = parse_double("frames_per_second", v); }},
      {"train_steps", [&](const std::string& v) { c.train_steps = parse_u64("train_steps", v); }},
      {"voc_steps", [&](const std::string& v) { c.voc_steps = parse_u64("voc_steps", v); }},
      {"adapt_steps", [&](const std::string& v) { c.adapt_steps = parse_u64("adapt_steps", v); }},
      {"weld_steps", [&](const std::string& v) { c.weld_steps = parse_u64("weld_steps", v); }},
      {"learning_rate", [&](const std::string& v) { c.learning_rate = parse_double("learning_rate", v); }},
      {"momentum", [&](const std::string& v) { c.momentum = parse_double("momentum", v); }},
      {"grad_clip", [&](const std::string& v) { c.grad_clip = parse_double("grad_clip", v); }},
      {"seed", [&](const std::string& v) { c.seed = parse_u64("seed", v); }},
      {"data_dir", [&](const std::string& v) { c.data_dir = v; }},
      {"target_speaker", [&](const std::string& v) { c.target_speaker = v; }},
  };

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[' && s.back() == ']') continue;  // section header
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key=value, got '" + s + "'");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("unknown config key '" + key + "'");
    it->second(val);
  }
  validate(c);
  return c;
}

Config load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string render(const Config& c) {
  std::ostringstream o;
  o << "[hyperparameters]\n";
  o << "alpha = " << fmt_double(c.alpha) << "\n";
  o << "beta = " << fmt_double(c.beta) << "\n";
  o << "gamma = " << fmt_double(c.gamma) << "\n";
  o << "delta_vq = " << fmt_double(c.delta_vq) << "\n";
  o << "delta_c = " << fmt_double(c.delta_c) << "\n";
  o << "\n[model]\n";
  o << "mode = " << c.mode << "\n";
  o << "codebook_k = " << c.codebook_k << "\n";
  o << "latent_dim = " << c.latent_dim << "\n";
  o << "hidden_dim = " << c.hidden_dim << "\n";
  o << "speaker_dim = " << c.speaker_dim << "\n";
  o << "acoustic_dim = " << c.acoustic_dim << "\n";
  o << "wave_k = " << c.wave_k << "\n";
  o << "vocab_size = " << c.vocab_size << "\n";
  o << "sdec_window = " << c.sdec_window << "\n";
  o << "\n[corpus]\n";
  o << "train_speakers = " << c.train_speakers << "\n";
  o << "target_speakers = " << c.target_speakers << "\n";
  o << "utterances_per_speaker = " << c.utterances_per_speaker << "\n";
  o << "test_utterances = " << c.test_utterances << "\n";
  o << "adapt_utterances = " << c.adapt_utterances << "\n";
  o << "min_frames = " << c.min_frames << "\n";
  o << "max_frames = " << c.max_frames << "\n";
  o << "noise_sigma = " << fmt_double(c.noise_sigma) << "\n";
  o << "speaker_margin = " << fmt_double(c.speaker_margin) << "\n";
  o << "frames_per_second = " << fmt_double(c.frames_per_second) << "\n";
  o << "\n[training]\n";
  o << "train_steps = " << c.train_steps << "\n";
  o << "voc_steps = " << c.voc_steps << "\n";
  o << "adapt_steps = " << c.adapt_steps << "\n";
  o << "weld_steps = " << c.weld_steps << "\n";
  o << "learning_rate = " << fmt_double(c.learning_rate) << "\n";
  o << "momentum = " << fmt_double(c.momentum) << "\n";
  o << "grad_clip = " << fmt_double(c.grad_clip) << "\n";
  o << "\n[run]\n";
  o << "seed = " << c.seed << "\n";
  o << "data_dir = " << c.data_dir << "\n";
  if (!c.target_speaker.empty())
    o << "target_speaker = " << c.target_speaker << "\n";
  return o.str();
}

void save(const Config& c, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config file '" + path + "'");
  f << render(c);
}

std::uint64_t config_hash(const Config& c) { return fnv1a64(render(c)); }

}  // namespace vqclone::config
