#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqclone/graph.hpp"
#include "vqclone/tensor.hpp"

namespace vqclone::vq {

// K learnable code vectors of dimension D. Entry count is fixed for the
// lifetime of the codebook.
class Codebook {
 public:
  explicit Codebook(Tensor entries, bool trainable = true);

  // Entries drawn uniformly from [-0.5, 0.5] per component.
  static Codebook random(std::size_t k, std::size_t d, std::uint64_t seed);

  std::size_t size() const { return entries_.rows(); }
  std::size_t dim() const { return entries_.cols(); }
  const Tensor& entries() const { return entries_; }
  Tensor& entries() { return entries_; }
  bool trainable() const { return trainable_; }

 private:
  Tensor entries_;
  bool trainable_;
};

// Per-frame code assignments. vectors[t] is bit-identical to the selected
// codebook entry at quantization time.
struct CodeSequence {
  std::vector<std::size_t> indices;
  Tensor vectors;  // T x D

  std::size_t length() const { return indices.size(); }
};

// Nearest entry by squared Euclidean distance, ties resolved to the lowest
// index. Empty input yields an empty sequence.
CodeSequence quantize(const Tensor& latents, const Tensor& entries);
CodeSequence quantize(const Tensor& latents, const Codebook& cb);

// Mean over frames of the squared distance between sg(z) and q. Gradient
// reaches only the codebook side.
ad::Value vq_loss(ad::Graph& g, ad::Value z, ad::Value q);

// Mean over frames of the squared distance between z and sg(q). Gradient
// reaches only the encoder side.
ad::Value commitment_loss(ad::Graph& g, ad::Value z, ad::Value q);

// Forward value shared by both losses (they differ only in gradient routing).
double quantization_gap(const Tensor& z, const Tensor& q);

struct UtilizationReport {
  std::vector<std::uint64_t> counts;  // per-code frame counts
  std::uint64_t total_frames = 0;
  double used_fraction = 0.0;
  double perplexity = 0.0;  // exp of the usage entropy; 0 when no frames
};

UtilizationReport usage_stats(const std::vector<CodeSequence>& seqs,
                              std::size_t k);

// CSV with columns frame_index,code_id.
void write_codes_csv(const std::string& path, const CodeSequence& codes);

}  // namespace vqclone::vq
