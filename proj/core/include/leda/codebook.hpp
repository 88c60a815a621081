#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "leda/util.hpp"

namespace leda {

/// Frozen token vocabulary paired with its embedding matrix. Embeddings are
/// never updated; every use site detaches them from any autograd graph.
struct LlmCodebook {
  std::vector<std::string> tokens;  // token id = index
  torch::Tensor embeddings;         // |V| x d, float32, requires_grad = false
  bool normalized = false;

  // lookup kernel caches, derived from `embeddings`
  torch::Tensor embeddings_f64;  // |V| x d, float64
  torch::Tensor row_sqnorm_f64;  // |V|

  std::int64_t vocab_size() const { return embeddings.size(0); }
  std::int64_t dim() const { return embeddings.size(1); }
};

/// Validates and finalizes a codebook built in memory.
LlmCodebook make_codebook(std::vector<std::string> tokens, torch::Tensor embeddings,
                          bool normalize = false);

/// Vocabulary file: UTF-8, one token per line, line number = token id.
/// Embedding file: 8-byte magic "LEDAEMB1", two LE uint32 dims, then
/// row-major LE float32 payload.
LlmCodebook load_codebook(const std::filesystem::path& vocab_path,
                          const std::filesystem::path& embedding_path,
                          bool normalize = false);
void save_codebook(const LlmCodebook& cb, const std::filesystem::path& vocab_path,
                   const std::filesystem::path& embedding_path);

/// Deterministic synthetic codebook for demos and tests: word-like tokens,
/// seeded Gaussian embeddings.
LlmCodebook make_synthetic_codebook(std::int64_t vocab, std::int64_t dim, std::uint64_t seed);

// --- nearest-neighbor lookup ---------------------------------------------------

/// Argmin over squared Euclidean distance, ties broken by lowest token id.
/// Distances use the expanded form |z|^2 - 2 z.e + |e|^2 in float64 with the
/// codebook row norms precomputed.
torch::Tensor nearest_tokens(const torch::Tensor& vecs, const LlmCodebook& cb);  // N x d -> N i64
std::int64_t nearest_token(const torch::Tensor& vec, const LlmCodebook& cb);     // d -> id

// --- token pyramid -------------------------------------------------------------

/// Layer sizes (h, w), coarse to fine; the finest layer must match the latent
/// grid and successive layers must grow by an integer ratio per side.
using LayerSizes = std::vector<std::array<std::int64_t, 2>>;

/// Derives a pyramid for a latent grid: finest layer equals the grid, each
/// coarser layer shrinks by `ratio` per side while divisible.
LayerSizes derive_layer_sizes(std::int64_t h, std::int64_t w, std::int64_t ratio = 4);

void validate_layer_sizes(const LayerSizes& sizes, std::int64_t h, std::int64_t w);

/// D layers of token-id grids plus the tensors derived from them. All tensors
/// carry a leading batch dimension.
struct TokenPyramid {
  LayerSizes sizes;
  std::vector<torch::Tensor> ids;         // B x h_l x w_l, i64
  std::vector<torch::Tensor> pooled;      // B x d x h_l x w_l; in-graph when input was
  std::vector<torch::Tensor> embeddings;  // B x d x h_l x w_l, e(t_l), no grad
  std::vector<torch::Tensor> cumulative;  // B x d x H' x W', running mean of upsampled e(t_j)

  std::int64_t depth() const { return static_cast<std::int64_t>(sizes.size()); }
  const torch::Tensor& finest_cumulative() const { return cumulative.back(); }
};

/// Non-overlapping average pooling of a B x C x H' x W' latent onto (h, w).
/// The finest layer (h == H', w == W') is the identity.
torch::Tensor pool_to_layer(const torch::Tensor& latent, std::int64_t h, std::int64_t w);

/// Pool, quantize per position, and accumulate the running-mean reconstruction
/// at the finest grid (nearest-neighbor upsampling).
TokenPyramid quantize_pyramid(const torch::Tensor& latent, const LlmCodebook& cb,
                              const LayerSizes& sizes);

/// Same geometry but with the token assignment fixed by the caller. Used to
/// evaluate the quantizer as a smooth function of the latent (the assignment
/// held constant), and to rebuild pyramids from serialized id grids.
TokenPyramid quantize_pyramid_with_ids(const torch::Tensor& latent, const LlmCodebook& cb,
                                       const LayerSizes& sizes,
                                       const std::vector<torch::Tensor>& ids);

/// Forward value is the quantized tensor; the gradient passes to `z`
/// unchanged and `zq` receives none.
torch::Tensor straight_through(const torch::Tensor& z, const torch::Tensor& zq);

// --- serialization ---------------------------------------------------------

/// Text header (D and layer sizes) followed by per-layer id grids as LE
/// int32. Batch size must be 1.
void save_pyramid(const TokenPyramid& pyr, const std::filesystem::path& path);

/// Loads id grids; pooled/embedding/cumulative tensors are rebuilt when a
/// codebook is supplied.
TokenPyramid load_pyramid(const std::filesystem::path& path, const LlmCodebook* cb = nullptr);

}  // namespace leda
