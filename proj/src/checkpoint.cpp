#include "vqclone/checkpoint.hpp"

#include <fstream>

#include "vqclone/binio.hpp"

namespace vqclone::checkpoint {

namespace {
constexpr char kMagic[9] = "VQCKPT01";
constexpr std::uint64_t kVersion = 1;

std::uint64_t freeze_bits(const model::FreezeFlags& f) {
  std::uint64_t b = 0;
  if (f.tenc) b |= 1u;
  if (f.senc) b |= 2u;
  if (f.sdec) b |= 4u;
  if (f.tdec) b |= 8u;
  if (f.voc) b |= 16u;
  if (f.codebook) b |= 32u;
  if (f.speaker) b |= 64u;
  return b;
}

model::FreezeFlags freeze_from_bits(std::uint64_t b) {
  model::FreezeFlags f;
  f.tenc = b & 1u;
  f.senc = b & 2u;
  f.sdec = b & 4u;
  f.tdec = b & 8u;
  f.voc = b & 16u;
  f.codebook = b & 32u;
  f.speaker = b & 64u;
  return f;
}
}  // namespace

void save(const model::ModelState& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write checkpoint '" + path + "'");
  f.write(kMagic, 8);
  binio::put_u64(f, kVersion);
  binio::put_string(f, model::mode_to_string(m.cfg.mode));
  binio::put_u64(f, m.cfg.codebook_k);
  binio::put_u64(f, m.cfg.latent_dim);
  binio::put_u64(f, m.cfg.acoustic_dim);
  binio::put_u64(f, m.cfg.vocab);
  binio::put_u64(f, m.cfg.hidden_dim);
  binio::put_u64(f, m.cfg.speaker_dim);
  binio::put_u64(f, m.cfg.window);
  binio::put_u64(f, m.cfg.wave_k);
  binio::put_u64(f, m.cfg.n_speakers);
  binio::put_string(f, model::stage_name(m.stage));
  binio::put_u64(f, m.step);
  binio::put_u64(f, m.sd_removed ? 1 : 0);
  binio::put_u64(f, freeze_bits(m.freeze));
  binio::put_u64(f, m.params.size());
  for (const auto& [name, tensor] : m.params) {
    binio::put_string(f, name);
    binio::put_tensor(f, tensor);
  }
  if (!f) throw ConfigError("short write on checkpoint '" + path + "'");
}

model::ModelState load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("missing checkpoint '" + path + "'");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != kMagic)
    throw ConfigError("'" + path + "' is not a checkpoint file");
  if (binio::get_u64(f) != kVersion)
    throw ConfigError("unsupported checkpoint version in '" + path + "'");

  model::ModelState m;
  m.cfg.mode = model::mode_from_string(binio::get_string(f));
  m.cfg.codebook_k = binio::get_u64(f);
  m.cfg.latent_dim = binio::get_u64(f);
  m.cfg.acoustic_dim = binio::get_u64(f);
  m.cfg.vocab = binio::get_u64(f);
  m.cfg.hidden_dim = binio::get_u64(f);
  m.cfg.speaker_dim = binio::get_u64(f);
  m.cfg.window = binio::get_u64(f);
  m.cfg.wave_k = binio::get_u64(f);
  m.cfg.n_speakers = binio::get_u64(f);
  m.stage = model::stage_from_name(binio::get_string(f));
  m.step = binio::get_u64(f);
  m.sd_removed = binio::get_u64(f) != 0;
  m.freeze = freeze_from_bits(binio::get_u64(f));
  std::uint64_t n = binio::get_u64(f);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = binio::get_string(f);
    m.params[name] = binio::get_tensor(f);
  }
  return m;
}

}  // namespace vqclone::checkpoint
