#include "vqclone/codebook.hpp"

#include <cmath>
#include <fstream>

#include "vqclone/common.hpp"

namespace vqclone::vq {

Codebook::Codebook(Tensor entries, bool trainable)
    : entries_(std::move(entries)), trainable_(trainable) {
  if (entries_.rows() < 1 || entries_.cols() < 1)
    throw ShapeError("Codebook: need K >= 1 and D >= 1");
  if (!entries_.all_finite())
    throw NumericError("Codebook: non-finite entry");
}

Codebook Codebook::random(std::size_t k, std::size_t d, std::uint64_t seed) {
  Tensor e(k, d);
  Rng rng(seed);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = rng.uniform(-0.5, 0.5);
  return Codebook(std::move(e));
}

CodeSequence quantize(const Tensor& latents, const Tensor& entries) {
  const std::size_t d = entries.cols();
  if (latents.rows() > 0 && latents.cols() != d)
    throw ShapeError("quantize: frame dimension " +
                     std::to_string(latents.cols()) + " != codebook dim " +
                     std::to_string(d));
  CodeSequence out;
  const std::size_t t_count = latents.rows();
  out.indices.resize(t_count);
  out.vectors = Tensor(t_count, d);
  const std::size_t k_count = entries.rows();
  for (std::size_t t = 0; t < t_count; ++t) {
    const double* z = latents.data() + t * d;
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      const double* e = entries.data() + k * d;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double diff = z[j] - e[j];
        dist += diff * diff;
      }
      if (k == 0 || dist < best_dist) {  // strict < keeps the lowest index
        best = k;
        best_dist = dist;
      }
    }
    out.indices[t] = best;
    std::copy_n(entries.data() + best * d, d, out.vectors.data() + t * d);
  }
  return out;
}

CodeSequence quantize(const Tensor& latents, const Codebook& cb) {
  return quantize(latents, cb.entries());
}

namespace {
// (1/T) * sum of squared elementwise differences.
ad::Value frame_mean_sqdist(ad::Graph& g, ad::Value a, ad::Value b) {
  const std::size_t t_count = g.value(a).rows();
  if (t_count == 0) throw ShapeError("quantization loss: empty sequence");
  ad::Value d = g.sub(a, b);
  return g.scale(g.sum_all(g.mul(d, d)), 1.0 / static_cast<double>(t_count));
}
}  // namespace

ad::Value vq_loss(ad::Graph& g, ad::Value z, ad::Value q) {
  return frame_mean_sqdist(g, g.stop_gradient(z), q);
}

ad::Value commitment_loss(ad::Graph& g, ad::Value z, ad::Value q) {
  return frame_mean_sqdist(g, z, g.stop_gradient(q));
}

double quantization_gap(const Tensor& z, const Tensor& q) {
  if (!z.same_shape(q)) throw ShapeError("quantization_gap: shape mismatch");
  if (z.rows() == 0) throw ShapeError("quantization_gap: empty sequence");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double d = z[i] - q[i];
    s += d * d;
  }
  return s / static_cast<double>(z.rows());
}

UtilizationReport usage_stats(const std::vector<CodeSequence>& seqs,
                              std::size_t k) {
  UtilizationReport r;
  r.counts.assign(k, 0);
  for (const CodeSequence& s : seqs) {
    for (std::size_t idx : s.indices) {
      if (idx >= k)
        throw ShapeError("usage_stats: code id " + std::to_string(idx) +
                         " out of range for K=" + std::to_string(k));
      ++r.counts[idx];
      ++r.total_frames;
    }
  }
  std::size_t used = 0;
  double entropy = 0.0;
  for (std::uint64_t c : r.counts) {
    if (c == 0) continue;
    ++used;
    double p = static_cast<double>(c) / static_cast<double>(r.total_frames);
    entropy -= p * std::log(p);
  }
  r.used_fraction = k == 0 ? 0.0 : static_cast<double>(used) / static_cast<double>(k);
  r.perplexity = r.total_frames == 0 ? 0.0 : std::exp(entropy);
  return r;
}

void write_codes_csv(const std::string& path, const CodeSequence& codes) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  f << "frame_index,code_id\n";
  for (std::size_t t = 0; t < codes.indices.size(); ++t)
    f << t << "," << codes.indices[t] << "\n";
}

}  // namespace vqclone::vq
