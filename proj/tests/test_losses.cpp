#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "vqclone/gradcheck.hpp"
#include "vqclone/losses.hpp"
#include "vqclone/pipeline.hpp"

using namespace vqclone;
using losses::Batch;
using losses::HyperParams;
using losses::LossBreakdown;
using model::Mode;
using model::ModelState;
using model::NetConfig;

namespace {

NetConfig tiny_net(Mode mode = Mode::kVq) {
  NetConfig c;
  c.mode = mode;
  c.vocab = 5;
  c.acoustic_dim = 3;
  c.latent_dim = 4;
  c.hidden_dim = 6;
  c.codebook_k = 9;
  c.speaker_dim = 2;
  c.window = 2;
  c.wave_k = 2;
  c.n_speakers = 3;
  return c;
}

corpus::Params tiny_corpus_params(std::uint64_t seed = 3) {
  corpus::Params p;
  p.vocab = 5;
  p.acoustic_dim = 3;
  p.wave_k = 2;
  p.train_speakers = 3;
  p.target_speakers = 1;
  p.utterances_per_speaker = 2;
  p.test_utterances = 1;
  p.adapt_utterances = 2;
  p.min_frames = 4;
  p.max_frames = 7;
  p.seed = seed;
  return p;
}

struct Fixture {
  corpus::Corpus c;
  ModelState m;
  HyperParams h;
  Batch batch;

  explicit Fixture(Mode mode = Mode::kVq, std::uint64_t seed = 5)
      : c(corpus::gen_corpus(tiny_corpus_params())),
        m(ModelState::init(tiny_net(mode), seed)) {
    batch = c.split_items("train");
  }
};

// Independent reconstruction of the documented weighted sums.
double expected_stack(double goal, double lvq, double lc, const HyperParams& h) {
  return goal + h.delta_vq * lvq + h.delta_c * lc;
}
double expected_joint(const LossBreakdown& b, const HyperParams& h) {
  return expected_stack(b.loss_tts, b.loss_vq_t, b.loss_c_t, h) +
         h.alpha_sts * expected_stack(b.loss_sts, b.loss_vq_s, b.loss_c_s, h) +
         h.alpha_stt * b.loss_stt + h.beta * b.loss_tie;
}

corpus::SynthUtterance constant_utterance(std::size_t frames, double level,
                                          std::size_t a) {
  corpus::SynthUtterance u;
  u.id = "crafted";
  u.speaker_id = "S00";
  u.speaker_index = 0;
  u.symbols.assign(frames, 0);
  u.acoustics = Tensor(frames, a);
  u.acoustics.fill(level);
  u.wave = Tensor(frames, 2);
  u.split = "train";
  return u;
}

// Pin a network to a constant output: zero out the final weight, set the bias.
void pin_output(ModelState& m, const std::string& module,
                const std::vector<double>& out_bias) {
  m.p(module + ".w2").fill(0.0);
  Tensor& b2 = m.p(module + ".b2");
  for (std::size_t j = 0; j < out_bias.size(); ++j) b2[j] = out_bias[j];
}

}  // namespace

TEST_CASE("tts stack loss: perfect reconstruction with z = q gives zero") {
  NetConfig nc = tiny_net();
  nc.codebook_k = 1;
  ModelState m = ModelState::init(nc, 1);
  corpus::SynthUtterance u = constant_utterance(3, 0.4, nc.acoustic_dim);

  // encoder emits exactly the single codebook entry; decoder emits exactly y
  std::vector<double> entry(m.p("codebook.e").values());
  pin_output(m, "tenc", entry);
  pin_output(m, "sdec", {0.4, 0.4, 0.4});

  ad::Graph g;
  LossBreakdown bd;
  ad::Value total =
      losses::tts_stack_loss_g(g, {&u}, m, HyperParams{}, nullptr, &bd);
  CHECK(g.scalar(total) == 0.0);
  CHECK(bd.loss_tts == 0.0);
  CHECK(bd.loss_vq_t == 0.0);
  CHECK(bd.loss_c_t == 0.0);
}

TEST_CASE("tts stack loss: hand-computed single frame") {
  NetConfig nc = tiny_net();
  nc.codebook_k = 1;
  nc.latent_dim = 2;
  nc.acoustic_dim = 1;
  ModelState m = ModelState::init(nc, 1);
  corpus::SynthUtterance u = constant_utterance(1, 0.2, 1);

  m.p("codebook.e").values() = {0.1, 0.2};
  pin_output(m, "tenc", {0.3, -0.2});  // z fixed at (0.3, -0.2)
  pin_output(m, "sdec", {0.5});        // prediction fixed at 0.5

  // MAE = |0.5 - 0.2| = 0.3; d = (0.2, -0.4) so ||d||^2 = 0.2
  // total = 0.3 + 0.25 * 0.2 + 1.0 * 0.2 = 0.55
  ad::Graph g;
  LossBreakdown bd;
  ad::Value total =
      losses::tts_stack_loss_g(g, {&u}, m, HyperParams{}, nullptr, &bd);
  CHECK(bd.loss_tts == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(bd.loss_vq_t == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(bd.loss_c_t == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(g.scalar(total) == doctest::Approx(0.55).epsilon(1e-12));
}

TEST_CASE("stack and stage losses match finite differences") {
  for (Mode mode : {Mode::kVq, Mode::kVae, Mode::kStandard}) {
    CAPTURE(mode_to_string(mode));
    Fixture f(mode);

    SUBCASE("tts stack") {
      Rng rng(7);
      auto report = ad::check_gradients([&](ad::Graph& g) {
        return losses::tts_stack_loss_g(g, f.batch, f.m, f.h, &rng, nullptr);
      });
      CHECK(report.max_rel_err < 1e-4);
    }
    SUBCASE("sts stack") {
      Rng rng(8);
      auto report = ad::check_gradients([&](ad::Graph& g) {
        return losses::sts_stack_loss_g(g, f.batch, f.m, f.h, &rng, nullptr);
      });
      CHECK(report.max_rel_err < 1e-4);
    }
    SUBCASE("joint") {
      Rng rng(9);
      auto report = ad::check_gradients([&](ad::Graph& g) {
        return losses::joint_train_loss_g(g, f.batch, f.m, f.h, &rng, nullptr);
      });
      CHECK(report.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("tie loss: values and asymmetric routing") {
  SUBCASE("coincident latents: zero in vq and standard modes") {
    for (Mode mode : {Mode::kVq, Mode::kStandard}) {
      ad::Graph g;
      Tensor z0(3, 2, {0.1, 0.2, -0.3, 0.4, 0.0, 1.0});
      model::EncOut text{g.param("zt", z0), {}, {}};
      model::EncOut speech{g.param("zs", z0), {}, {}};
      CHECK(g.scalar(losses::tie_loss_g(g, text, speech, mode)) == 0.0);
    }
  }
  SUBCASE("vq mode: text side receives exactly zero gradient") {
    ad::Graph g;
    Tensor zt0(2, 3), zs0(2, 3);
    zt0.fill(0.3);
    zs0.fill(-0.2);
    model::EncOut text{g.param("zt", zt0), {}, {}};
    model::EncOut speech{g.param("zs", zs0), {}, {}};
    g.backward(losses::tie_loss_g(g, text, speech, Mode::kVq));
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(g.grad("zt")[i] == 0.0);
      CHECK(g.grad("zs")[i] != 0.0);
    }
  }
  SUBCASE("standard mode: both sides receive gradient") {
    ad::Graph g;
    Tensor zt0(2, 3), zs0(2, 3);
    zt0.fill(0.3);
    zs0.fill(-0.2);
    model::EncOut text{g.param("zt", zt0), {}, {}};
    model::EncOut speech{g.param("zs", zs0), {}, {}};
    g.backward(losses::tie_loss_g(g, text, speech, Mode::kStandard));
    CHECK(g.grad("zt")[0] != 0.0);
    CHECK(g.grad("zs")[0] != 0.0);
  }
  SUBCASE("vae mode: identical posteriors give zero divergence") {
    ad::Graph g;
    Tensor mu(2, 2, {0.1, 0.2, 0.3, 0.4});
    Tensor ls(2, 2, {-0.5, -1.0, 0.2, 0.0});
    model::EncOut text{{}, g.input(mu), g.input(ls)};
    model::EncOut speech{{}, g.input(mu), g.input(ls)};
    CHECK(g.scalar(losses::tie_loss_g(g, text, speech, Mode::kVae)) ==
          doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("vae mode: hand-computed divergence for one frame, one dim") {
    // KL(N(0.3, 0.5^2) || N(0.1, 0.8^2))
    //   = ln(0.8/0.5) + (0.25 + 0.04) / (2 * 0.64) - 0.5 = 0.196566129...
    ad::Graph g;
    model::EncOut text{{}, g.input(Tensor::scalar(0.1)),
                       g.input(Tensor::scalar(std::log(0.8)))};
    model::EncOut speech{{}, g.input(Tensor::scalar(0.3)),
                         g.input(Tensor::scalar(std::log(0.5)))};
    double expected = std::log(0.8 / 0.5) + (0.25 + 0.04) / (2 * 0.64) - 0.5;
    CHECK(g.scalar(losses::tie_loss_g(g, text, speech, Mode::kVae)) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("joint loss: breakdown reconstructs the documented weighted sum") {
  for (Mode mode : {Mode::kVq, Mode::kVae, Mode::kStandard}) {
    Fixture f(mode);
    Rng rng(11);
    ad::Graph g;
    LossBreakdown bd;
    ad::Value total =
        losses::joint_train_loss_g(g, f.batch, f.m, f.h, &rng, &bd);
    CHECK(std::fabs(bd.total - expected_joint(bd, f.h)) < 1e-12);
    CHECK(g.scalar(total) == bd.total);
    // every stage term is nonnegative
    for (double v : {bd.loss_tts, bd.loss_sts, bd.loss_stt, bd.loss_ttt,
                     bd.loss_tie, bd.loss_vq_t, bd.loss_vq_s, bd.loss_c_t,
                     bd.loss_c_s})
      CHECK(v >= 0.0);
    if (mode != Mode::kVq) {
      CHECK(bd.loss_vq_t == 0.0);
      CHECK(bd.loss_c_t == 0.0);
    }
  }
}

TEST_CASE("joint loss: unit components weigh to 1.45") {
  // alpha = 0.1 applied to both weighted terms, beta = 0.25:
  // 1 + 0.1 * 1 + 0.1 * 1 + 0.25 * 1 = 1.45
  HyperParams h;
  LossBreakdown ones;
  ones.loss_tts = 1.0;
  ones.loss_sts = 1.0;
  ones.loss_stt = 1.0;
  ones.loss_tie = 1.0;
  CHECK(expected_joint(ones, h) == doctest::Approx(1.45).epsilon(1e-15));
}

TEST_CASE("beta controls cross-encoder coupling through the tie loss") {
  Fixture f(Mode::kVq);
  auto grads_with_beta = [&](double beta) {
    HyperParams h;
    h.beta = beta;
    ad::Graph g;
    Rng rng(13);  // same eps stream either way (vq ignores it)
    g.backward(losses::joint_train_loss_g(g, f.batch, f.m, h, &rng, nullptr));
    return std::pair{g.grad("tenc.w1"), g.grad("senc.w1")};
  };
  auto [tenc_b0, senc_b0] = grads_with_beta(0.0);
  auto [tenc_b, senc_b] = grads_with_beta(0.25);
  // vq tie is stopped on the text side: text encoder gradients are identical
  CHECK(tenc_b0.bit_equal(tenc_b));
  // the speech encoder feels the tie
  CHECK(!senc_b0.bit_equal(senc_b));
}

TEST_CASE("vocoder loss") {
  Fixture f;
  SUBCASE("zero at perfect prediction") {
    NetConfig nc = tiny_net();
    ModelState m = ModelState::init(nc, 2);
    corpus::SynthUtterance u = constant_utterance(2, 0.0, nc.acoustic_dim);
    u.wave.fill(0.7);
    pin_output(m, "voc", {0.7, 0.7});
    ad::Graph g;
    LossBreakdown bd;
    losses::vocoder_train_loss_g(g, {&u}, m, &bd);
    CHECK(bd.loss_voc == 0.0);
  }
  SUBCASE("hand-computed one-frame error") {
    NetConfig nc = tiny_net();
    ModelState m = ModelState::init(nc, 2);
    corpus::SynthUtterance u = constant_utterance(1, 0.0, nc.acoustic_dim);
    u.wave.values() = {0.1, 0.5};
    pin_output(m, "voc", {0.2, 0.2});
    // mean(|0.2-0.1|, |0.2-0.5|) = 0.2
    ad::Graph g;
    LossBreakdown bd;
    losses::vocoder_train_loss_g(g, {&u}, m, &bd);
    CHECK(bd.loss_voc == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("gradients match finite differences") {
    auto report = ad::check_gradients([&](ad::Graph& g) {
      return losses::vocoder_train_loss_g(g, f.batch, f.m, nullptr);
    });
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("adaptation loss") {
  Fixture f;
  corpus::AdaptationSet set = corpus::strip_transcripts(f.c, "T00");

  SUBCASE("SD components must be removed first") {
    ad::Graph g;
    CHECK_THROWS_AS(losses::adapt_loss_g(g, set, f.m, nullptr, nullptr),
                    StateError);
  }

  ModelState removed = model::remove_sd(f.m);
  removed.freeze_all_except({"sdec"});

  SUBCASE("transcribed data is refused") {
    corpus::AdaptationSet bad = set;
    bad.items[0].symbols = {0, 1};
    ad::Graph g;
    CHECK_THROWS_AS(losses::adapt_loss_g(g, bad, removed, nullptr, nullptr),
                    StateError);
  }

  SUBCASE("gradients exist only for the speech decoder") {
    ad::Graph g;
    g.backward(losses::adapt_loss_g(g, set, removed, nullptr, nullptr));
    CHECK(!g.params().empty());
    for (const auto& [name, v] : g.params()) {
      CHECK(name.rfind("sdec.", 0) == 0);
      (void)v;
    }
    double norm = 0.0;
    for (const auto& [name, v] : g.params()) {
      const Tensor& grad = g.grad(name);
      for (std::size_t i = 0; i < grad.size(); ++i) norm += grad[i] * grad[i];
    }
    CHECK(norm > 0.0);
  }

  SUBCASE("finite differences and 50-step descent") {
    auto report = ad::check_gradients([&](ad::Graph& g) {
      return losses::adapt_loss_g(g, set, removed, nullptr, nullptr);
    });
    CHECK(report.max_rel_err < 1e-4);

    ModelState frozen_copy = removed;
    double first = -1.0, last = -1.0;
    for (int step = 0; step < 50; ++step) {
      ad::Graph g;
      LossBreakdown bd;
      ad::Value total = losses::adapt_loss_g(g, set, removed, nullptr, &bd);
      g.backward(total);
      pipeline::sgd_step(removed, g.param_grads(), 0.05, 5.0);
      if (first < 0) first = bd.total;
      last = bd.total;
    }
    CHECK(last < first);
    // frozen modules stayed bit-identical through 50 steps
    CHECK(model::params_identical(frozen_copy, removed, {"sdec"}));
  }
}

TEST_CASE("weld loss") {
  Fixture f;
  corpus::AdaptationSet set = corpus::strip_transcripts(f.c, "T00");
  ModelState removed = model::remove_sd(f.m);
  removed.freeze_all_except({"sdec", "voc"});

  SUBCASE("gamma weighting: unit components weigh to 1.01") {
    HyperParams h;
    CHECK(1.0 + h.gamma * 1.0 == doctest::Approx(1.01).epsilon(1e-15));
    ad::Graph g;
    LossBreakdown bd;
    ad::Value total = losses::weld_loss_g(g, set, removed, h, nullptr, &bd);
    CHECK(std::fabs(bd.total - (bd.loss_sts + h.gamma * bd.loss_voc)) < 1e-12);
    CHECK(g.scalar(total) == bd.total);
  }

  SUBCASE("gradients reach decoder and vocoder, nothing else") {
    ad::Graph g;
    g.backward(losses::weld_loss_g(g, set, removed, f.h, nullptr, nullptr));
    bool saw_sdec = false, saw_voc = false;
    for (const auto& [name, v] : g.params()) {
      (void)v;
      bool is_sdec = name.rfind("sdec.", 0) == 0;
      bool is_voc = name.rfind("voc.", 0) == 0;
      CHECK((is_sdec || is_voc));
      saw_sdec |= is_sdec;
      saw_voc |= is_voc;
    }
    CHECK(saw_sdec);
    CHECK(saw_voc);
  }

  SUBCASE("finite differences and 50-step descent") {
    auto report = ad::check_gradients([&](ad::Graph& g) {
      return losses::weld_loss_g(g, set, removed, f.h, nullptr, nullptr);
    });
    CHECK(report.max_rel_err < 1e-4);

    double first = -1.0, last = -1.0;
    for (int step = 0; step < 50; ++step) {
      ad::Graph g;
      LossBreakdown bd;
      ad::Value total = losses::weld_loss_g(g, set, removed, f.h, nullptr, &bd);
      g.backward(total);
      pipeline::sgd_step(removed, g.param_grads(), 0.05, 5.0);
      if (first < 0) first = bd.total;
      last = bd.total;
    }
    CHECK(last < first);
  }
}

TEST_CASE("misaligned batches are rejected") {
  Fixture f;
  corpus::SynthUtterance bad = *f.batch[0];
  bad.symbols.pop_back();
  ad::Graph g;
  CHECK_THROWS_AS(
      losses::joint_train_loss_g(g, {&bad}, f.m, f.h, nullptr, nullptr),
      ShapeError);
}

TEST_CASE("loss CSV log appends rows with a single header") {
  const std::string path = "loss_log_tmp.csv";
  std::remove(path.c_str());
  LossBreakdown bd;
  bd.loss_tts = 0.5;
  bd.total = 1.25;
  losses::append_loss_csv(path, 1, "train", bd);
  losses::append_loss_csv(path, 2, "train", bd);
  std::ifstream fcsv(path);
  std::string line;
  std::getline(fcsv, line);
  CHECK(line ==
        "step,stage,loss_tts,loss_sts,loss_stt,loss_ttt,loss_tie,loss_vq_t,"
        "loss_vq_s,loss_c_t,loss_c_s,loss_voc,total");
  int rows = 0;
  while (std::getline(fcsv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  fcsv.close();
  std::remove(path.c_str());
}
