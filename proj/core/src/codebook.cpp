#include "leda/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace leda {

namespace F = torch::nn::functional;

namespace {

constexpr char kEmbeddingMagic[8] = {'L', 'E', 'D', 'A', 'E', 'M', 'B', '1'};

void finalize_caches(LlmCodebook& cb) {
  cb.embeddings = cb.embeddings.detach().contiguous();
  cb.embeddings.set_requires_grad(false);
  cb.embeddings_f64 = cb.embeddings.to(torch::kFloat64);
  cb.row_sqnorm_f64 = cb.embeddings_f64.square().sum(1);
}

const char* kWordList[] = {
    "lung",     "liver",    "kidney",  "spleen",   "aorta",    "bone",     "muscle",
    "fat",      "air",      "water",   "tissue",   "organ",    "vessel",   "cyst",
    "lesion",   "nodule",   "tumor",   "cancer",   "benign",   "abdomen",  "pelvis",
    "thorax",   "chest",    "spine",   "rib",      "vertebra", "stomach",  "bowel",
    "colon",    "bladder",  "pancreas", "adrenal", "gallbladder", "duct",  "artery",
    "vein",     "cortex",   "medulla", "hilum",    "scan",     "slice",    "dose",
    "noise",    "contrast", "density", "texture",  "edge",     "smooth",   "bright",
    "dark",     "round",    "oval",    "calcified", "fluid",   "solid",    "hollow",
    "thick",    "thin",     "left",    "right",    "anterior", "posterior", "superior",
    "inferior", "medial",   "lateral",
};

}  // namespace

LlmCodebook make_codebook(std::vector<std::string> tokens, torch::Tensor embeddings,
                          bool normalize) {
  if (embeddings.dim() != 2)
    throw ConfigError("codebook embeddings must be a 2-D matrix");
  const std::int64_t rows = embeddings.size(0);
  const std::int64_t dim = embeddings.size(1);
  if (rows != static_cast<std::int64_t>(tokens.size()))
    throw ConfigError("codebook has " + std::to_string(tokens.size()) + " tokens but " +
                      std::to_string(rows) + " embedding rows");
  if (rows < 2) throw ConfigError("codebook needs at least 2 tokens");
  if (dim < 1) throw ConfigError("codebook embedding dim must be >= 1");
  if (!embeddings.isfinite().all().item<bool>())
    throw ConfigError("codebook embeddings contain non-finite entries");

  std::set<std::string> seen;
  for (const auto& t : tokens) {
    if (!seen.insert(t).second) throw ConfigError("duplicate token '" + t + "' in vocabulary");
  }

  LlmCodebook cb;
  cb.tokens = std::move(tokens);
  cb.embeddings = embeddings.to(torch::kFloat32);
  if (normalize) {
    cb.embeddings = F::normalize(cb.embeddings, F::NormalizeFuncOptions().dim(1).eps(1e-12));
    cb.normalized = true;
  }
  finalize_caches(cb);
  return cb;
}

LlmCodebook load_codebook(const std::filesystem::path& vocab_path,
                          const std::filesystem::path& embedding_path, bool normalize) {
  std::ifstream vin(vocab_path);
  if (!vin) throw PrerequisiteError("cannot open vocabulary " + vocab_path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(vin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }

  std::ifstream ein(embedding_path, std::ios::binary);
  if (!ein) throw PrerequisiteError("cannot open embeddings " + embedding_path.string());
  char magic[8];
  ein.read(magic, 8);
  if (ein.gcount() != 8 || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
    throw FormatError(embedding_path.string() + ": bad embedding magic");
  std::uint32_t rows = 0, cols = 0;
  ein.read(reinterpret_cast<char*>(&rows), 4);
  ein.read(reinterpret_cast<char*>(&cols), 4);
  if (!ein) throw FormatError(embedding_path.string() + ": truncated dims header");
  if (rows != tokens.size())
    throw ConfigError("vocabulary has " + std::to_string(tokens.size()) +
                      " tokens but embedding file has " + std::to_string(rows) + " rows");

  torch::Tensor emb = torch::empty({static_cast<std::int64_t>(rows),
                                    static_cast<std::int64_t>(cols)}, torch::kFloat32);
  const std::streamsize nbytes =
      static_cast<std::streamsize>(rows) * cols * static_cast<std::streamsize>(sizeof(float));
  ein.read(static_cast<char*>(emb.data_ptr()), nbytes);
  if (ein.gcount() != nbytes)
    throw FormatError(embedding_path.string() + ": truncated embedding payload");
  return make_codebook(std::move(tokens), std::move(emb), normalize);
}

void save_codebook(const LlmCodebook& cb, const std::filesystem::path& vocab_path,
                   const std::filesystem::path& embedding_path) {
  std::ofstream vout(vocab_path);
  if (!vout) throw Error("cannot write " + vocab_path.string());
  for (const auto& t : cb.tokens) vout << t << "\n";

  std::ofstream eout(embedding_path, std::ios::binary);
  if (!eout) throw Error("cannot write " + embedding_path.string());
  eout.write(kEmbeddingMagic, 8);
  const std::uint32_t rows = static_cast<std::uint32_t>(cb.vocab_size());
  const std::uint32_t cols = static_cast<std::uint32_t>(cb.dim());
  eout.write(reinterpret_cast<const char*>(&rows), 4);
  eout.write(reinterpret_cast<const char*>(&cols), 4);
  torch::Tensor emb = cb.embeddings.contiguous();
  eout.write(static_cast<const char*>(emb.const_data_ptr()),
             static_cast<std::streamsize>(emb.numel() * sizeof(float)));
}

LlmCodebook make_synthetic_codebook(std::int64_t vocab, std::int64_t dim, std::uint64_t seed) {
  constexpr std::int64_t n_words = static_cast<std::int64_t>(std::size(kWordList));
  std::vector<std::string> tokens;
  tokens.reserve(vocab);
  for (std::int64_t i = 0; i < vocab; ++i) {
    std::string t = kWordList[i % n_words];
    if (i >= n_words) t += "-" + std::to_string(i / n_words);
    tokens.push_back(std::move(t));
  }
  torch::Tensor emb = torch::empty({vocab, dim}, torch::kFloat32);
  std::mt19937_64 rng(mix_seed(seed));
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  auto acc = emb.accessor<float, 2>();
  for (std::int64_t i = 0; i < vocab; ++i)
    for (std::int64_t j = 0; j < dim; ++j) acc[i][j] = gauss(rng);
  return make_codebook(std::move(tokens), std::move(emb));
}

// --- nearest-neighbor lookup ---------------------------------------------------

torch::Tensor nearest_tokens(const torch::Tensor& vecs, const LlmCodebook& cb) {
  if (vecs.dim() != 2 || vecs.size(1) != cb.dim())
    throw ConfigError("nearest_tokens expects N x " + std::to_string(cb.dim()) +
                      " input, got " + std::to_string(vecs.dim()) + "-D");
  if (!vecs.isfinite().all().item<bool>())
    throw Error("nearest_tokens: query contains non-finite values");

  torch::NoGradGuard no_grad;
  const std::int64_t n = vecs.size(0);
  const std::int64_t v = cb.vocab_size();
  torch::Tensor q = vecs.detach().to(torch::kFloat64).contiguous();
  torch::Tensor out = torch::empty({n}, torch::kInt64);
  auto* out_ptr = out.data_ptr<std::int64_t>();

  const std::int64_t chunk = std::max<std::int64_t>(1, (1 << 22) / std::max<std::int64_t>(v, 1));
  for (std::int64_t begin = 0; begin < n; begin += chunk) {
    const std::int64_t end = std::min(n, begin + chunk);
    torch::Tensor qc = q.slice(0, begin, end);
    // |z|^2 - 2 z.e + |e|^2 with precomputed row norms
    torch::Tensor dist = qc.square().sum(1, /*keepdim=*/true)
                         - 2.0 * qc.mm(cb.embeddings_f64.t())
                         + cb.row_sqnorm_f64.unsqueeze(0);
    dist = dist.contiguous();
    const double* d = dist.const_data_ptr<double>();
    for (std::int64_t i = 0; i < end - begin; ++i) {
      const double* row = d + i * v;
      std::int64_t best = 0;
      double best_d = row[0];
      for (std::int64_t k = 1; k < v; ++k) {
        if (row[k] < best_d) {  // strict: ties keep the lowest id
          best_d = row[k];
          best = k;
        }
      }
      out_ptr[begin + i] = best;
    }
  }
  return out;
}

std::int64_t nearest_token(const torch::Tensor& vec, const LlmCodebook& cb) {
  if (vec.dim() != 1)
    throw ConfigError("nearest_token expects a 1-D vector");
  return nearest_tokens(vec.unsqueeze(0), cb).item<std::int64_t>();
}

// --- token pyramid -------------------------------------------------------------

LayerSizes derive_layer_sizes(std::int64_t h, std::int64_t w, std::int64_t ratio) {
  if (h < 1 || w < 1) throw ConfigError("latent grid must be at least 1x1");
  if (ratio < 2) throw ConfigError("inter-layer ratio must be >= 2");
  LayerSizes sizes{{h, w}};
  while (h % ratio == 0 && w % ratio == 0 && h / ratio >= 1 && w / ratio >= 1) {
    h /= ratio;
    w /= ratio;
    sizes.insert(sizes.begin(), {h, w});
  }
  return sizes;
}

void validate_layer_sizes(const LayerSizes& sizes, std::int64_t h, std::int64_t w) {
  if (sizes.empty()) throw ConfigError("pyramid needs at least one layer");
  if (sizes.back()[0] != h || sizes.back()[1] != w)
    throw ConfigError("finest pyramid layer " + std::to_string(sizes.back()[0]) + "x" +
                      std::to_string(sizes.back()[1]) + " does not match latent grid " +
                      std::to_string(h) + "x" + std::to_string(w));
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto [h0, w0] = std::pair{sizes[l][0], sizes[l][1]};
    const auto [h1, w1] = std::pair{sizes[l + 1][0], sizes[l + 1][1]};
    if (h0 < 1 || w0 < 1 || h1 % h0 != 0 || w1 % w0 != 0 || h1 / h0 != w1 / w0 || h1 / h0 < 2)
      throw ConfigError("pyramid layers must grow by a uniform integer ratio per side");
  }
}

torch::Tensor pool_to_layer(const torch::Tensor& latent, std::int64_t h, std::int64_t w) {
  if (latent.dim() != 4) throw ConfigError("pool_to_layer expects B x C x H x W");
  const std::int64_t hh = latent.size(2), ww = latent.size(3);
  if (h < 1 || w < 1 || hh % h != 0 || ww % w != 0)
    throw ConfigError("latent " + std::to_string(hh) + "x" + std::to_string(ww) +
                      " is not divisible by layer " + std::to_string(h) + "x" +
                      std::to_string(w));
  if (h == hh && w == ww) return latent;
  return F::avg_pool2d(latent, F::AvgPool2dFuncOptions({hh / h, ww / w}).stride({hh / h, ww / w}));
}

namespace {

TokenPyramid build_pyramid(const torch::Tensor& latent, const LlmCodebook& cb,
                           const LayerSizes& sizes, const std::vector<torch::Tensor>* fixed_ids) {
  if (latent.dim() != 4) throw ConfigError("quantize_pyramid expects B x C x H x W");
  if (latent.size(1) != cb.dim())
    throw ConfigError("latent has " + std::to_string(latent.size(1)) +
                      " channels but codebook dim is " + std::to_string(cb.dim()));
  validate_layer_sizes(sizes, latent.size(2), latent.size(3));

  const std::int64_t batch = latent.size(0);
  const std::int64_t d = cb.dim();
  const std::int64_t fine_h = latent.size(2), fine_w = latent.size(3);
  torch::Tensor emb_src = latent.scalar_type() == torch::kFloat64 ? cb.embeddings_f64
                                                                  : cb.embeddings;

  TokenPyramid pyr;
  pyr.sizes = sizes;
  torch::Tensor running_sum;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    const std::int64_t h = sizes[l][0], w = sizes[l][1];
    torch::Tensor pooled = pool_to_layer(latent, h, w);

    torch::Tensor ids;
    if (fixed_ids != nullptr) {
      ids = (*fixed_ids)[l];
      if (ids.sizes() != torch::IntArrayRef({batch, h, w}))
        throw ConfigError("fixed id grid for layer " + std::to_string(l) + " has wrong shape");
      if ((ids.min().item<std::int64_t>() < 0) ||
          (ids.max().item<std::int64_t>() >= cb.vocab_size()))
        throw ConfigError("fixed id grid for layer " + std::to_string(l) +
                          " has ids outside the vocabulary");
    } else {
      torch::Tensor flat =
          pooled.detach().permute({0, 2, 3, 1}).reshape({batch * h * w, d});
      ids = nearest_tokens(flat, cb).view({batch, h, w});
    }

    torch::Tensor e = emb_src.index_select(0, ids.reshape({-1}))
                          .view({batch, h, w, d})
                          .permute({0, 3, 1, 2})
                          .contiguous();
    torch::Tensor up = (h == fine_h && w == fine_w)
                           ? e
                           : F::interpolate(e, F::InterpolateFuncOptions()
                                                   .size(std::vector<std::int64_t>{fine_h, fine_w})
                                                   .mode(torch::kNearest));
    running_sum = (l == 0) ? up : running_sum + up;

    pyr.ids.push_back(ids);
    pyr.pooled.push_back(pooled);
    pyr.embeddings.push_back(e);
    pyr.cumulative.push_back(running_sum / static_cast<double>(l + 1));
  }
  return pyr;
}

}  // namespace

TokenPyramid quantize_pyramid(const torch::Tensor& latent, const LlmCodebook& cb,
                              const LayerSizes& sizes) {
  return build_pyramid(latent, cb, sizes, nullptr);
}

TokenPyramid quantize_pyramid_with_ids(const torch::Tensor& latent, const LlmCodebook& cb,
                                       const LayerSizes& sizes,
                                       const std::vector<torch::Tensor>& ids) {
  if (ids.size() != sizes.size())
    throw ConfigError("quantize_pyramid_with_ids: id grid count does not match layer count");
  return build_pyramid(latent, cb, sizes, &ids);
}

torch::Tensor straight_through(const torch::Tensor& z, const torch::Tensor& zq) {
  if (z.sizes() != zq.sizes())
    throw ConfigError("straight_through: shape mismatch");
  return z + (zq - z).detach();
}

// --- serialization ---------------------------------------------------------

void save_pyramid(const TokenPyramid& pyr, const std::filesystem::path& path) {
  if (pyr.ids.empty()) throw ConfigError("cannot save an empty pyramid");
  if (pyr.ids.front().size(0) != 1)
    throw ConfigError("pyramid serialization expects batch size 1");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "LEDAPYR1 " << pyr.depth() << "\n";
  for (const auto& [h, w] : pyr.sizes) out << h << " " << w << "\n";
  for (const auto& ids : pyr.ids) {
    torch::Tensor grid = ids.to(torch::kInt32).contiguous();
    out.write(static_cast<const char*>(grid.const_data_ptr()),
              static_cast<std::streamsize>(grid.numel() * sizeof(std::int32_t)));
  }
}

TokenPyramid load_pyramid(const std::filesystem::path& path, const LlmCodebook* cb) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PrerequisiteError("cannot open pyramid " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream header(line);
  std::string magic;
  std::int64_t depth = 0;
  header >> magic >> depth;
  if (magic != "LEDAPYR1" || depth < 1)
    throw FormatError(path.string() + ": bad pyramid header");

  LayerSizes sizes(depth);
  for (auto& [h, w] : sizes) {
    std::getline(in, line);
    std::istringstream ss(line);
    ss >> h >> w;
    if (!ss || h < 1 || w < 1) throw FormatError(path.string() + ": bad layer size line");
  }

  std::vector<torch::Tensor> ids;
  for (const auto& [h, w] : sizes) {
    torch::Tensor grid = torch::empty({1, h, w}, torch::kInt32);
    const std::streamsize nbytes =
        static_cast<std::streamsize>(h) * w * static_cast<std::streamsize>(sizeof(std::int32_t));
    in.read(static_cast<char*>(grid.data_ptr()), nbytes);
    if (in.gcount() != nbytes) throw FormatError(path.string() + ": truncated id grid");
    ids.push_back(grid.to(torch::kInt64));
  }

  if (cb != nullptr) {
    torch::Tensor latent = torch::zeros(
        {1, cb->dim(), sizes.back()[0], sizes.back()[1]}, torch::kFloat32);
    TokenPyramid pyr = quantize_pyramid_with_ids(latent, *cb, sizes, ids);
    pyr.pooled.clear();  // pooled grids of a zero latent carry no information
    return pyr;
  }
  TokenPyramid pyr;
  pyr.sizes = std::move(sizes);
  for (auto& grid : ids) {
    if (grid.min().item<std::int64_t>() < 0)
      throw FormatError(path.string() + ": negative token id");
  }
  pyr.ids = std::move(ids);
  return pyr;
}

}  // namespace leda
