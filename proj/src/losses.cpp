#include "vqclone/losses.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace vqclone::losses {

using model::EncOut;
using model::Mode;
using model::ModelState;

HyperParams HyperParams::from_config(const config::Config& c) {
  HyperParams h;
  h.alpha_sts = c.alpha;
  h.alpha_stt = c.alpha;
  h.beta = c.beta;
  h.gamma = c.gamma;
  h.delta_vq = c.delta_vq;
  h.delta_c = c.delta_c;
  return h;
}

namespace {

// Mean over frames of the per-frame squared distance.
ad::Value frame_mean_sqdist(ad::Graph& g, ad::Value a, ad::Value b) {
  ad::Value d = g.sub(a, b);
  return g.scale(g.sum_all(g.mul(d, d)),
                 1.0 / static_cast<double>(g.value(a).rows()));
}

Tensor draw_eps(std::size_t frames, std::size_t dim, Rng* rng) {
  Tensor eps(frames, dim);
  if (rng)
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng->normal();
  return eps;  // zero eps degenerates to the posterior mean
}

// One stack pass over a batch: encode, (quantize,) decode, concatenated
// across utterances in batch order.
struct StackPieces {
  ad::Value yhat;      // decoder outputs, N x A
  ad::Value y;         // acoustic targets, N x A
  ad::Value z;         // encoder latents, N x D
  ad::Value q;         // selected codebook rows (vq mode only)
  ad::Value mu;        // vae mode only
  ad::Value log_sigma; // vae mode only
  std::vector<std::size_t> symbols;  // concatenated alignment
};

ad::Value concat_all(ad::Graph& g, const std::vector<ad::Value>& parts) {
  ad::Value acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i)
    acc = g.concat_rows(acc, parts[i]);
  return acc;
}

struct StackItem {
  const std::vector<std::size_t>* symbols;  // null for untranscribed items
  const Tensor* acoustics;
  std::optional<std::size_t> speaker;
};

StackPieces build_stack(ad::Graph& g, const std::vector<StackItem>& items,
                        bool text_side, const ModelState& m, Rng* vae_rng) {
  if (items.empty()) throw ShapeError("loss: empty batch");
  std::vector<ad::Value> zs, qs, mus, sigmas, yhats, ys;
  StackPieces out;
  for (const StackItem& item : items) {
    const Tensor& y = *item.acoustics;
    if (y.rows() == 0) throw ShapeError("loss: empty utterance");
    if (item.symbols && item.symbols->size() != y.rows())
      throw ShapeError("loss: symbol alignment does not match frame count");

    Tensor eps;
    const Tensor* eps_ptr = nullptr;
    if (m.cfg.mode == Mode::kVae) {
      eps = draw_eps(y.rows(), m.cfg.latent_dim, vae_rng);
      eps_ptr = &eps;
    }
    EncOut enc = text_side
                     ? model::encode_text_g(g, *item.symbols, m, eps_ptr)
                     : model::encode_speech_g(g, y, m, eps_ptr);

    ad::Value dec_in = enc.z;
    if (m.cfg.mode == Mode::kVq) {
      vq::CodeSequence cs = vq::quantize(g.value(enc.z), m.p("codebook.e"));
      ad::Value entries = m.module_frozen("codebook.e")
                              ? g.input(m.p("codebook.e"))
                              : g.param("codebook.e", m.p("codebook.e"));
      ad::Value q = g.gather_rows(entries, cs.indices);
      qs.push_back(q);
      dec_in = g.straight_through(enc.z, q);
    }
    yhats.push_back(model::decode_speech_g(g, dec_in, y, item.speaker, m));
    ys.push_back(g.input(y));
    zs.push_back(enc.z);
    if (m.cfg.mode == Mode::kVae) {
      mus.push_back(enc.mu);
      sigmas.push_back(enc.log_sigma);
    }
    if (item.symbols)
      out.symbols.insert(out.symbols.end(), item.symbols->begin(),
                         item.symbols->end());
  }
  out.yhat = concat_all(g, yhats);
  out.y = concat_all(g, ys);
  out.z = concat_all(g, zs);
  if (!qs.empty()) out.q = concat_all(g, qs);
  if (!mus.empty()) {
    out.mu = concat_all(g, mus);
    out.log_sigma = concat_all(g, sigmas);
  }
  return out;
}

std::vector<StackItem> items_from_batch(const Batch& batch, bool need_symbols,
                                        const ModelState& m) {
  std::vector<StackItem> items;
  for (const corpus::SynthUtterance* u : batch) {
    if (!u) throw ShapeError("loss: null utterance in batch");
    if (need_symbols && u->symbols.empty())
      throw StateError("loss: utterance '" + u->id + "' has no transcript");
    StackItem it;
    it.symbols = &u->symbols;
    it.acoustics = &u->acoustics;
    if (!m.sd_removed) {
      if (u->speaker_index >= m.cfg.n_speakers)
        throw StateError("utterance '" + u->id +
                         "' belongs to a speaker outside the training table");
      it.speaker = u->speaker_index;
    }
    items.push_back(it);
  }
  return items;
}

// goal + delta_vq * vq + delta_c * commitment; fills the per-term slots.
ad::Value stack_total(ad::Graph& g, const StackPieces& p, const HyperParams& h,
                      const ModelState& m, double* goal_out, double* vq_out,
                      double* c_out) {
  ad::Value goal = g.mae(p.yhat, p.y);
  *goal_out = g.scalar(goal);
  if (m.cfg.mode != Mode::kVq) {
    *vq_out = 0.0;
    *c_out = 0.0;
    return goal;
  }
  ad::Value lvq = vq::vq_loss(g, p.z, p.q);
  ad::Value lc = vq::commitment_loss(g, p.z, p.q);
  *vq_out = g.scalar(lvq);
  *c_out = g.scalar(lc);
  return g.add(goal, g.add(g.scale(lvq, h.delta_vq), g.scale(lc, h.delta_c)));
}

}  // namespace

ad::Value tts_stack_loss_g(ad::Graph& g, const Batch& batch,
                           const ModelState& m, const HyperParams& h,
                           Rng* vae_rng, LossBreakdown* bd) {
  StackPieces p = build_stack(g, items_from_batch(batch, true, m), true, m, vae_rng);
  LossBreakdown local;
  ad::Value total = stack_total(g, p, h, m, &local.loss_tts, &local.loss_vq_t,
                                &local.loss_c_t);
  local.total = g.scalar(total);
  if (bd) *bd = local;
  return total;
}

ad::Value sts_stack_loss_g(ad::Graph& g, const Batch& batch,
                           const ModelState& m, const HyperParams& h,
                           Rng* vae_rng, LossBreakdown* bd) {
  StackPieces p =
      build_stack(g, items_from_batch(batch, false, m), false, m, vae_rng);
  LossBreakdown local;
  ad::Value total = stack_total(g, p, h, m, &local.loss_sts, &local.loss_vq_s,
                                &local.loss_c_s);
  local.total = g.scalar(total);
  if (bd) *bd = local;
  return total;
}

ad::Value tie_loss_g(ad::Graph& g, const EncOut& text, const EncOut& speech,
                     Mode mode) {
  switch (mode) {
    case Mode::kVq:
      // Asymmetric: the text side is the anchor.
      return frame_mean_sqdist(g, g.stop_gradient(text.z), speech.z);
    case Mode::kStandard:
      return frame_mean_sqdist(g, text.z, speech.z);
    case Mode::kVae: {
      // KL(speech || text) per frame, diagonal Gaussians, text side stopped.
      ad::Value mu_t = g.stop_gradient(text.mu);
      ad::Value ls_t = g.stop_gradient(text.log_sigma);
      ad::Value dmu = g.sub(speech.mu, mu_t);
      ad::Value t1 = g.sub(ls_t, speech.log_sigma);
      ad::Value ratio =
          g.scale(g.exp(g.scale(g.sub(speech.log_sigma, ls_t), 2.0)), 0.5);
      ad::Value quad = g.scale(
          g.mul(g.mul(dmu, dmu), g.exp(g.scale(ls_t, -2.0))), 0.5);
      ad::Value elem = g.add_scalar(g.add(g.add(t1, ratio), quad), -0.5);
      return g.scale(g.sum_all(elem),
                     1.0 / static_cast<double>(g.value(elem).rows()));
    }
  }
  throw StateError("tie_loss: bad mode");
}

ad::Value joint_train_loss_g(ad::Graph& g, const Batch& batch,
                             const ModelState& m, const HyperParams& h,
                             Rng* vae_rng, LossBreakdown* bd) {
  std::vector<StackItem> items = items_from_batch(batch, true, m);
  LossBreakdown local;

  StackPieces text = build_stack(g, items, true, m, vae_rng);
  ad::Value tts_total = stack_total(g, text, h, m, &local.loss_tts,
                                    &local.loss_vq_t, &local.loss_c_t);
  StackPieces speech = build_stack(g, items, false, m, vae_rng);
  ad::Value sts_total = stack_total(g, speech, h, m, &local.loss_sts,
                                    &local.loss_vq_s, &local.loss_c_s);

  // STT and TTT both bypass the codebook; the text decoder consumes the
  // continuous latents. TTT is reported but carries no training weight.
  std::vector<ad::Value> stt_probs, ttt_probs;
  {
    std::size_t row = 0;
    for (const StackItem& item : items) {
      std::size_t frames = item.acoustics->rows();
      ad::Value zs = g.slice_rows(speech.z, row, row + frames);
      ad::Value zt = g.slice_rows(text.z, row, row + frames);
      stt_probs.push_back(model::decode_text_g(g, zs, item.speaker, m));
      ttt_probs.push_back(model::decode_text_g(g, zt, item.speaker, m));
      row += frames;
    }
  }
  ad::Value stt = g.cross_entropy(concat_all(g, stt_probs), text.symbols);
  ad::Value ttt = g.cross_entropy(concat_all(g, ttt_probs), text.symbols);
  local.loss_stt = g.scalar(stt);
  local.loss_ttt = g.scalar(ttt);

  EncOut text_pair{text.z, text.mu, text.log_sigma};
  EncOut speech_pair{speech.z, speech.mu, speech.log_sigma};
  ad::Value tie = tie_loss_g(g, text_pair, speech_pair, m.cfg.mode);
  local.loss_tie = g.scalar(tie);

  ad::Value total = g.add(
      tts_total, g.add(g.scale(sts_total, h.alpha_sts),
                       g.add(g.scale(stt, h.alpha_stt), g.scale(tie, h.beta))));
  local.total = g.scalar(total);
  if (bd) *bd = local;
  return total;
}

ad::Value vocoder_train_loss_g(ad::Graph& g, const Batch& batch,
                               const ModelState& m, LossBreakdown* bd) {
  if (batch.empty()) throw ShapeError("vocoder loss: empty batch");
  std::vector<ad::Value> preds, targets;
  for (const corpus::SynthUtterance* u : batch) {
    if (u->acoustics.rows() != u->wave.rows())
      throw ShapeError("vocoder loss: wave/acoustics length mismatch");
    std::optional<std::size_t> speaker;
    if (!m.sd_removed) speaker = u->speaker_index;
    preds.push_back(model::vocode_g(g, g.input(u->acoustics), speaker, m));
    targets.push_back(g.input(u->wave));
  }
  ad::Value total = g.mae(concat_all(g, preds), concat_all(g, targets));
  if (bd) {
    LossBreakdown local;
    local.loss_voc = g.scalar(total);
    local.total = local.loss_voc;
    *bd = local;
  }
  return total;
}

namespace {
std::vector<StackItem> items_from_adapt(const corpus::AdaptationSet& set,
                                        const ModelState& m) {
  if (!m.sd_removed)
    throw StateError("adaptation requires SD components to be removed first");
  if (set.items.empty()) throw ShapeError("adaptation set is empty");
  std::vector<StackItem> items;
  for (const corpus::AdaptItem& item : set.items) {
    if (!item.symbols.empty())
      throw StateError("transcribed data supplied to adaptation (utterance '" +
                       item.utt_id + "'); the cloning steps are unsupervised");
    StackItem it;
    it.symbols = nullptr;
    it.acoustics = &item.acoustics;
    it.speaker = std::nullopt;
    items.push_back(it);
  }
  return items;
}
}  // namespace

ad::Value adapt_loss_g(ad::Graph& g, const corpus::AdaptationSet& set,
                       const ModelState& m, Rng* vae_rng, LossBreakdown* bd) {
  StackPieces p = build_stack(g, items_from_adapt(set, m), false, m, vae_rng);
  ad::Value total = g.mae(p.yhat, p.y);
  if (bd) {
    LossBreakdown local;
    local.loss_sts = g.scalar(total);
    local.total = local.loss_sts;
    *bd = local;
  }
  return total;
}

ad::Value vocoder_adapt_loss_g(ad::Graph& g, const corpus::AdaptationSet& set,
                               const ModelState& m, LossBreakdown* bd) {
  if (!m.sd_removed)
    throw StateError("adaptation requires SD components to be removed first");
  if (set.items.empty()) throw ShapeError("adaptation set is empty");
  std::vector<ad::Value> preds, targets;
  for (const corpus::AdaptItem& item : set.items) {
    if (!item.symbols.empty())
      throw StateError("transcribed data supplied to vocoder adaptation");
    preds.push_back(model::vocode_g(g, g.input(item.acoustics), std::nullopt, m));
    targets.push_back(g.input(item.wave));
  }
  ad::Value total = g.mae(concat_all(g, preds), concat_all(g, targets));
  if (bd) {
    LossBreakdown local;
    local.loss_voc = g.scalar(total);
    local.total = local.loss_voc;
    *bd = local;
  }
  return total;
}

ad::Value weld_loss_g(ad::Graph& g, const corpus::AdaptationSet& set,
                      const ModelState& m, const HyperParams& h, Rng* vae_rng,
                      LossBreakdown* bd) {
  StackPieces p = build_stack(g, items_from_adapt(set, m), false, m, vae_rng);
  ad::Value sts = g.mae(p.yhat, p.y);

  // The vocoder regresses ground-truth acoustics onto the toy waveform;
  // coupling with the decoder enters through the shared update.
  std::vector<ad::Value> preds, targets;
  for (const corpus::AdaptItem& item : set.items) {
    if (item.acoustics.rows() != item.wave.rows())
      throw ShapeError("weld loss: wave/acoustics length mismatch");
    preds.push_back(model::vocode_g(g, g.input(item.acoustics), std::nullopt, m));
    targets.push_back(g.input(item.wave));
  }
  ad::Value voc = g.mae(concat_all(g, preds), concat_all(g, targets));

  ad::Value total = g.add(sts, g.scale(voc, h.gamma));
  if (bd) {
    LossBreakdown local;
    local.loss_sts = g.scalar(sts);
    local.loss_voc = g.scalar(voc);
    local.total = g.scalar(total);
    *bd = local;
  }
  return total;
}

void append_loss_csv(const std::string& path, std::uint64_t step,
                     const std::string& stage, const LossBreakdown& bd) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw ConfigError("cannot append to loss log '" + path + "'");
  if (fresh)
    f << "step,stage,loss_tts,loss_sts,loss_stt,loss_ttt,loss_tie,loss_vq_t,"
         "loss_vq_s,loss_c_t,loss_c_s,loss_voc,total\n";
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%llu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                "%.17g,%.17g\n",
                static_cast<unsigned long long>(step), stage.c_str(),
                bd.loss_tts, bd.loss_sts, bd.loss_stt, bd.loss_ttt, bd.loss_tie,
                bd.loss_vq_t, bd.loss_vq_s, bd.loss_c_t, bd.loss_c_s,
                bd.loss_voc, bd.total);
  f << buf;
}

}  // namespace vqclone::losses
