#include "vqclone/model.hpp"

#include <cmath>

namespace vqclone::model {

Mode mode_from_string(const std::string& s) {
  if (s == "vq") return Mode::kVq;
  if (s == "vae") return Mode::kVae;
  if (s == "standard") return Mode::kStandard;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string mode_to_string(Mode m) {
  switch (m) {
    case Mode::kVq: return "vq";
    case Mode::kVae: return "vae";
    case Mode::kStandard: return "standard";
  }
  return "?";
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kFresh: return "fresh";
    case Stage::kTrained: return "train";
    case Stage::kVocTrained: return "vocoder";
    case Stage::kAdapted: return "adapt";
    case Stage::kWelded: return "weld";
  }
  return "?";
}

Stage stage_from_name(const std::string& s) {
  for (Stage st : {Stage::kFresh, Stage::kTrained, Stage::kVocTrained,
                   Stage::kAdapted, Stage::kWelded})
    if (s == stage_name(st)) return st;
  throw ConfigError("unknown stage '" + s + "'");
}

NetConfig NetConfig::from_config(const config::Config& c) {
  NetConfig n;
  n.mode = mode_from_string(c.mode);
  n.vocab = c.vocab_size;
  n.acoustic_dim = c.acoustic_dim;
  n.latent_dim = c.latent_dim;
  n.hidden_dim = c.hidden_dim;
  n.codebook_k = c.codebook_k;
  n.speaker_dim = c.speaker_dim;
  n.window = c.sdec_window;
  n.wave_k = c.wave_k;
  n.n_speakers = c.train_speakers;
  return n;
}

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

Tensor uniform_init(std::size_t rows, std::size_t cols, double lo, double hi,
                    Rng& rng) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Rng init_rng(std::uint64_t seed, const std::string& name) {
  return Rng(mix_seed(seed, fnv1a64("init:" + name)));
}

}  // namespace

ModelState ModelState::init(const NetConfig& cfg, std::uint64_t seed) {
  ModelState m;
  m.cfg = cfg;
  const std::size_t h = cfg.hidden_dim;
  const std::size_t d = cfg.latent_dim;
  const std::size_t a = cfg.acoustic_dim;
  const std::size_t z = cfg.encoder_out_dim();
  const std::size_t dec_in = d + cfg.window * a;

  auto weight = [&](const std::string& name, std::size_t r, std::size_t c) {
    Rng rng = init_rng(seed, name);
    m.params[name] = xavier(r, c, rng);
  };
  auto bias = [&](const std::string& name, std::size_t c) {
    m.params[name] = Tensor(1, c);
  };

  weight("tenc.w1", cfg.vocab, h);
  bias("tenc.b1", h);
  weight("tenc.w2", h, z);
  bias("tenc.b2", z);
  weight("senc.w1", a, h);
  bias("senc.b1", h);
  weight("senc.w2", h, z);
  bias("senc.b2", z);
  // Widen the encoder heads so initial latents spread like the codebook
  // does; crowded latents start out sharing nearest codes and the losses
  // rarely pull such collisions apart.
  for (const char* name : {"tenc.w2", "senc.w2"}) {
    Tensor& w = m.params[name];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= 2.0;
  }
  if (cfg.mode == Mode::kVae) {
    // log-sigma head starts near sigma ~ 0.14 so early sampling stays tame
    for (std::size_t j = d; j < 2 * d; ++j) {
      m.params["tenc.b2"].at(0, j) = -2.0;
      m.params["senc.b2"].at(0, j) = -2.0;
    }
  }

  weight("sdec.w1", dec_in, h);
  // The causal-window rows start at zero: the decoder begins memoryless and
  // grows autoregressive weight only where the data rewards it.
  for (std::size_t r = d; r < dec_in; ++r)
    for (std::size_t j = 0; j < h; ++j) m.params["sdec.w1"].at(r, j) = 0.0;
  bias("sdec.b1", h);
  weight("sdec.w2", h, a);
  bias("sdec.b2", a);
  weight("sdec.spk", cfg.speaker_dim, h);

  weight("tdec.w1", d, h);
  bias("tdec.b1", h);
  weight("tdec.w2", h, cfg.vocab);
  bias("tdec.b2", cfg.vocab);
  weight("tdec.spk", cfg.speaker_dim, h);

  weight("voc.w1", a, h);
  bias("voc.b1", h);
  weight("voc.w2", h, cfg.wave_k);
  bias("voc.b2", cfg.wave_k);
  weight("voc.spk", cfg.speaker_dim, h);

  {
    Rng rng = init_rng(seed, "codebook.e");
    m.params["codebook.e"] = uniform_init(cfg.codebook_k, d, -0.5, 0.5, rng);
  }
  {
    Rng rng = init_rng(seed, "speaker.table");
    m.params["speaker.table"] =
        uniform_init(cfg.n_speakers, cfg.speaker_dim, -0.5, 0.5, rng);
  }
  return m;
}

const Tensor& ModelState::p(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw StateError("no parameter named '" + name + "'");
  return it->second;
}

Tensor& ModelState::p(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw StateError("no parameter named '" + name + "'");
  return it->second;
}

bool ModelState::module_frozen(const std::string& param_name) const {
  auto dot = param_name.find('.');
  std::string mod = param_name.substr(0, dot);
  if (mod == "tenc") return freeze.tenc;
  if (mod == "senc") return freeze.senc;
  if (mod == "sdec") return freeze.sdec;
  if (mod == "tdec") return freeze.tdec;
  if (mod == "voc") return freeze.voc;
  if (mod == "codebook") return freeze.codebook;
  if (mod == "speaker") return freeze.speaker;
  throw StateError("parameter '" + param_name + "' has no module");
}

void ModelState::freeze_all_except(const std::vector<std::string>& modules) {
  freeze = FreezeFlags{true, true, true, true, true, true, true};
  for (const std::string& mod : modules) {
    if (mod == "tenc") freeze.tenc = false;
    else if (mod == "senc") freeze.senc = false;
    else if (mod == "sdec") freeze.sdec = false;
    else if (mod == "tdec") freeze.tdec = false;
    else if (mod == "voc") freeze.voc = false;
    else if (mod == "codebook") freeze.codebook = false;
    else if (mod == "speaker") freeze.speaker = false;
    else throw StateError("unknown module '" + mod + "'");
  }
}

bool params_identical(const ModelState& a, const ModelState& b,
                      const std::vector<std::string>& skip_modules) {
  auto skipped = [&](const std::string& name) {
    for (const std::string& mod : skip_modules)
      if (name.rfind(mod + ".", 0) == 0) return true;
    return false;
  };
  for (const auto& [name, t] : a.params) {
    if (skipped(name)) continue;
    auto it = b.params.find(name);
    if (it == b.params.end() || !t.bit_equal(it->second)) return false;
  }
  for (const auto& [name, t] : b.params) {
    (void)t;
    if (!skipped(name) && !a.params.count(name)) return false;
  }
  return true;
}

namespace {

// Frozen modules enter the graph as plain inputs, so their gradients are
// identically zero and gradcheck skips them.
ad::Value reg(ad::Graph& g, const ModelState& m, const std::string& name) {
  if (m.module_frozen(name)) return g.input(m.p(name));
  return g.param(name, m.p(name));
}

ad::Value speaker_term_g(ad::Graph& g, const ModelState& m,
                         const std::string& module,
                         std::optional<std::size_t> speaker) {
  if (m.sd_removed) {
    if (speaker)
      throw StateError("speaker id supplied after SD removal (" + module + ")");
    return reg(g, m, module + ".sibias");
  }
  if (!speaker) return ad::Value{};  // no speaker conditioning requested
  if (*speaker >= m.cfg.n_speakers)
    throw StateError("speaker index " + std::to_string(*speaker) +
                     " out of range");
  ++m.speaker_table_reads;
  ad::Value row = g.gather_rows(reg(g, m, "speaker.table"), {*speaker});
  return g.matmul(row, reg(g, m, module + ".spk"));
}

EncOut encoder_head_g(ad::Graph& g, ad::Value h, const std::string& module,
                      const ModelState& m, const Tensor* vae_eps) {
  ad::Value zfull =
      g.add_row(g.matmul(h, reg(g, m, module + ".w2")), reg(g, m, module + ".b2"));
  EncOut out;
  if (m.cfg.mode != Mode::kVae) {
    out.z = zfull;
    return out;
  }
  const std::size_t d = m.cfg.latent_dim;
  out.mu = g.slice_cols(zfull, 0, d);
  out.log_sigma = g.slice_cols(zfull, d, 2 * d);
  if (vae_eps) {
    if (vae_eps->rows() != g.value(out.mu).rows() || vae_eps->cols() != d)
      throw ShapeError("vae_eps shape mismatch");
    out.z = g.add(out.mu, g.mul(g.exp(out.log_sigma), g.input(*vae_eps)));
  } else {
    out.z = out.mu;
  }
  return out;
}

}  // namespace

EncOut encode_text_g(ad::Graph& g, const SymbolSequence& x, const ModelState& m,
                     const Tensor* vae_eps) {
  for (std::size_t sym : x)
    if (sym >= m.cfg.vocab)
      throw StateError("unknown symbol id " + std::to_string(sym));
  ad::Value rows = g.gather_rows(reg(g, m, "tenc.w1"), x);
  ad::Value h = g.tanh(g.add_row(rows, reg(g, m, "tenc.b1")));
  return encoder_head_g(g, h, "tenc", m, vae_eps);
}

EncOut encode_speech_g(ad::Graph& g, const Tensor& acoustics,
                       const ModelState& m, const Tensor* vae_eps) {
  if (acoustics.rows() > 0 && acoustics.cols() != m.cfg.acoustic_dim)
    throw ShapeError("encode_speech: acoustic dimension mismatch");
  ad::Value y = g.input(acoustics);
  ad::Value h = g.tanh(
      g.add_row(g.matmul(y, reg(g, m, "senc.w1")), reg(g, m, "senc.b1")));
  return encoder_head_g(g, h, "senc", m, vae_eps);
}

ad::Value decode_speech_g(ad::Graph& g, ad::Value dec_in,
                          const Tensor& teacher_acoustics,
                          std::optional<std::size_t> speaker,
                          const ModelState& m) {
  Tensor win = causal_window(teacher_acoustics, m.cfg.window);
  ad::Value u = g.concat_cols(dec_in, g.input(win));
  ad::Value pre =
      g.add_row(g.matmul(u, reg(g, m, "sdec.w1")), reg(g, m, "sdec.b1"));
  ad::Value spk = speaker_term_g(g, m, "sdec", speaker);
  if (spk.valid()) pre = g.add_row(pre, spk);
  ad::Value h = g.tanh(pre);
  return g.add_row(g.matmul(h, reg(g, m, "sdec.w2")), reg(g, m, "sdec.b2"));
}

ad::Value decode_text_g(ad::Graph& g, ad::Value z,
                        std::optional<std::size_t> speaker, const ModelState& m) {
  ad::Value pre =
      g.add_row(g.matmul(z, reg(g, m, "tdec.w1")), reg(g, m, "tdec.b1"));
  ad::Value spk = speaker_term_g(g, m, "tdec", speaker);
  if (spk.valid()) pre = g.add_row(pre, spk);
  ad::Value h = g.tanh(pre);
  ad::Value logits =
      g.add_row(g.matmul(h, reg(g, m, "tdec.w2")), reg(g, m, "tdec.b2"));
  return g.softmax_rows(logits);
}

ad::Value vocode_g(ad::Graph& g, ad::Value acoustics,
                   std::optional<std::size_t> speaker, const ModelState& m) {
  ad::Value pre = g.add_row(g.matmul(acoustics, reg(g, m, "voc.w1")),
                            reg(g, m, "voc.b1"));
  ad::Value spk = speaker_term_g(g, m, "voc", speaker);
  if (spk.valid()) pre = g.add_row(pre, spk);
  ad::Value h = g.tanh(pre);
  return g.add_row(g.matmul(h, reg(g, m, "voc.w2")), reg(g, m, "voc.b2"));
}

// ---- plain evaluation ----

namespace {

// out = in * w + b, row bias broadcast.
Tensor affine(const Tensor& in, const Tensor& w, const Tensor& b) {
  if (in.cols() != w.rows()) throw ShapeError("affine: dimension mismatch");
  Tensor out(in.rows(), w.cols());
  for (std::size_t i = 0; i < in.rows(); ++i)
    for (std::size_t p = 0; p < in.cols(); ++p) {
      const double v = in.at(i, p);
      for (std::size_t j = 0; j < w.cols(); ++j)
        out.at(i, j) += v * w.at(p, j);
    }
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += b[j];
  return out;
}

void tanh_inplace(Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::tanh(t[i]);
}

// Speaker-conditioning row added to the hidden pre-activation, or empty.
Tensor speaker_term(const ModelState& m, const std::string& module,
                    std::optional<std::size_t> speaker) {
  if (m.sd_removed) {
    if (speaker)
      throw StateError("speaker id supplied after SD removal (" + module + ")");
    return m.p(module + ".sibias");
  }
  if (!speaker) return Tensor();
  if (*speaker >= m.cfg.n_speakers)
    throw StateError("speaker index " + std::to_string(*speaker) +
                     " out of range");
  ++m.speaker_table_reads;
  const Tensor& table = m.p("speaker.table");
  const Tensor& proj = m.p(module + ".spk");
  Tensor out(1, proj.cols());
  for (std::size_t p = 0; p < proj.rows(); ++p) {
    const double e = table.at(*speaker, p);
    for (std::size_t j = 0; j < proj.cols(); ++j)
      out[j] += e * proj.at(p, j);
  }
  return out;
}

void add_row_inplace(Tensor& t, const Tensor& row) {
  if (row.empty()) return;
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) += row[j];
}

Tensor encoder_eval(const Tensor& h_pre, const std::string& module,
                    const ModelState& m) {
  Tensor h = h_pre;
  tanh_inplace(h);
  Tensor zfull = affine(h, m.p(module + ".w2"), m.p(module + ".b2"));
  if (m.cfg.mode != Mode::kVae) return zfull;
  const std::size_t d = m.cfg.latent_dim;
  Tensor mu(zfull.rows(), d);
  for (std::size_t t = 0; t < zfull.rows(); ++t)
    for (std::size_t j = 0; j < d; ++j) mu.at(t, j) = zfull.at(t, j);
  return mu;  // deterministic inference uses the posterior mean
}

}  // namespace

Tensor encode_text(const SymbolSequence& x, const ModelState& m) {
  const Tensor& w1 = m.p("tenc.w1");
  const Tensor& b1 = m.p("tenc.b1");
  Tensor pre(x.size(), w1.cols());
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (x[t] >= m.cfg.vocab)
      throw StateError("unknown symbol id " + std::to_string(x[t]));
    for (std::size_t j = 0; j < w1.cols(); ++j)
      pre.at(t, j) = w1.at(x[t], j) + b1[j];
  }
  return encoder_eval(pre, "tenc", m);
}

Tensor encode_speech(const Tensor& acoustics, const ModelState& m) {
  if (acoustics.rows() == 0) return Tensor(0, m.cfg.latent_dim);
  if (acoustics.cols() != m.cfg.acoustic_dim)
    throw ShapeError("encode_speech: acoustic dimension mismatch");
  Tensor pre = affine(acoustics, m.p("senc.w1"), m.p("senc.b1"));
  return encoder_eval(pre, "senc", m);
}

Tensor decode_speech_teacher(const Tensor& dec_in,
                             const Tensor& teacher_acoustics,
                             std::optional<std::size_t> speaker,
                             const ModelState& m) {
  Tensor win = causal_window(teacher_acoustics, m.cfg.window);
  Tensor u(dec_in.rows(), dec_in.cols() + win.cols());
  for (std::size_t t = 0; t < u.rows(); ++t) {
    for (std::size_t j = 0; j < dec_in.cols(); ++j)
      u.at(t, j) = dec_in.at(t, j);
    for (std::size_t j = 0; j < win.cols(); ++j)
      u.at(t, dec_in.cols() + j) = win.at(t, j);
  }
  Tensor pre = affine(u, m.p("sdec.w1"), m.p("sdec.b1"));
  add_row_inplace(pre, speaker_term(m, "sdec", speaker));
  tanh_inplace(pre);
  return affine(pre, m.p("sdec.w2"), m.p("sdec.b2"));
}

Tensor decode_speech(const Tensor& dec_in, std::optional<std::size_t> speaker,
                     const ModelState& m) {
  const std::size_t a = m.cfg.acoustic_dim;
  const std::size_t w = m.cfg.window;
  const Tensor spk_row = speaker_term(m, "sdec", speaker);
  Tensor out(dec_in.rows(), a);
  Tensor u(1, dec_in.cols() + w * a);
  for (std::size_t t = 0; t < dec_in.rows(); ++t) {
    u.fill(0.0);
    for (std::size_t j = 0; j < dec_in.cols(); ++j) u[j] = dec_in.at(t, j);
    for (std::size_t i = 1; i <= w; ++i)
      if (t >= i)
        for (std::size_t j = 0; j < a; ++j)
          u[dec_in.cols() + (i - 1) * a + j] = out.at(t - i, j);
    Tensor pre = affine(u, m.p("sdec.w1"), m.p("sdec.b1"));
    add_row_inplace(pre, spk_row);
    tanh_inplace(pre);
    Tensor row = affine(pre, m.p("sdec.w2"), m.p("sdec.b2"));
    for (std::size_t j = 0; j < a; ++j) out.at(t, j) = row[j];
  }
  return out;
}

Tensor decode_text(const Tensor& z, std::optional<std::size_t> speaker,
                   const ModelState& m) {
  Tensor pre = affine(z, m.p("tdec.w1"), m.p("tdec.b1"));
  add_row_inplace(pre, speaker_term(m, "tdec", speaker));
  tanh_inplace(pre);
  Tensor logits = affine(pre, m.p("tdec.w2"), m.p("tdec.b2"));
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    double* row = logits.data() + t * logits.cols();
    double mx = row[0];
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) row[j] /= sum;
  }
  return logits;
}

Tensor vocode(const Tensor& acoustics, std::optional<std::size_t> speaker,
              const ModelState& m) {
  if (acoustics.cols() != m.cfg.acoustic_dim)
    throw ShapeError("vocode: acoustic dimension mismatch");
  Tensor pre = affine(acoustics, m.p("voc.w1"), m.p("voc.b1"));
  add_row_inplace(pre, speaker_term(m, "voc", speaker));
  tanh_inplace(pre);
  return affine(pre, m.p("voc.w2"), m.p("voc.b2"));
}

ModelState remove_sd(const ModelState& m) {
  if (m.sd_removed) throw StateError("SD components already removed");
  ModelState out = m;
  const Tensor& table = out.p("speaker.table");
  Tensor mean_emb(1, table.cols());
  for (std::size_t s = 0; s < table.rows(); ++s)
    for (std::size_t j = 0; j < table.cols(); ++j)
      mean_emb[j] += table.at(s, j) / static_cast<double>(table.rows());

  for (const char* module_name : {"sdec", "tdec", "voc"}) {
    const std::string module(module_name);
    const Tensor& proj = out.p(module + ".spk");
    Tensor bias(1, proj.cols());
    for (std::size_t p = 0; p < proj.rows(); ++p)
      for (std::size_t j = 0; j < proj.cols(); ++j)
        bias[j] += mean_emb[p] * proj.at(p, j);
    out.params[module + ".sibias"] = std::move(bias);
    out.params.erase(module + ".spk");
  }
  out.params.erase("speaker.table");
  out.sd_removed = true;
  out.speaker_table_reads = m.speaker_table_reads;
  return out;
}

Tensor causal_window(const Tensor& acoustics, std::size_t window) {
  const std::size_t t_count = acoustics.rows();
  const std::size_t a = acoustics.cols();
  Tensor out(t_count, window * a);
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t i = 1; i <= window; ++i)
      if (t >= i)
        for (std::size_t j = 0; j < a; ++j)
          out.at(t, (i - 1) * a + j) = acoustics.at(t - i, j);
  return out;
}

}  // namespace vqclone::model
