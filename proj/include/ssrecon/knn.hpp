#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>

#include "dataset.hpp"
#include "networks.hpp"

// Embedding-space nearest neighbours over the training set: one 128-d
// encoder embedding per train image, euclidean metric, exact linear scan.
// Built from a frozen snapshot of the reconstruction encoder.

namespace ssr::data {

struct KnnIndex {
  Array embeddings;      // [N,128]
  std::vector<int> ids;  // train-split indices, ids[row] == row's instance

  int size() const { return embeddings.ndim() == 2 ? embeddings.dim(0) : 0; }

  // K nearest by ascending euclidean distance, excluding `exclude_row`
  // (pass -1 to keep everything). Ties break to the lower row.
  std::vector<int> query(const Array& emb, int k, int exclude_row) const {
    SSR_CHECK(emb.numel() == net::kEmbedDim, "KnnIndex::query: want a 128-d embedding");
    int n = size();
    SSR_CHECK(k >= 1 && k <= n - (exclude_row >= 0 ? 1 : 0),
              "KnnIndex::query: k = " << k << " too large for index of " << n);
    std::vector<std::pair<double, int>> d;
    d.reserve(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
      if (r == exclude_row) continue;
      double s = 0;
      const double* e = embeddings.data() + static_cast<int64_t>(r) * net::kEmbedDim;
      for (int c = 0; c < net::kEmbedDim; ++c) {
        double diff = e[c] - emb[c];
        s += diff * diff;
      }
      d.push_back({s, r});
    }
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    std::vector<int> out;
    for (int i = 0; i < k; ++i) out.push_back(d[static_cast<size_t>(i)].second);
    return out;
  }

  Array row(int r) const {
    Array out({net::kEmbedDim});
    std::memcpy(out.data(), embeddings.data() + static_cast<int64_t>(r) * net::kEmbedDim,
                sizeof(double) * net::kEmbedDim);
    return out;
  }
};

// One embedding per training image, batched through the encoder snapshot.
inline KnnIndex build_knn_index(const net::ReconNet& snapshot, const Dataset& ds) {
  int n = ds.count(Split::kTrain);
  SSR_CHECK(n >= 2, "build_knn_index: need at least 2 train instances");
  KnnIndex index;
  index.embeddings = Array({n, net::kEmbedDim});
  const int kBatch = 16;
  for (int start = 0; start < n; start += kBatch) {
    int b = std::min(kBatch, n - start);
    Array batch({b, net::kImageSize, net::kImageSize, 3});
    int64_t per = batch.numel() / b;
    for (int i = 0; i < b; ++i)
      std::memcpy(batch.data() + i * per, ds.image(Split::kTrain, start + i).data(),
                  sizeof(double) * static_cast<size_t>(per));
    Array emb = net::embed(snapshot, batch);
    std::memcpy(index.embeddings.data() + static_cast<int64_t>(start) * net::kEmbedDim,
                emb.data(), sizeof(double) * static_cast<size_t>(emb.numel()));
  }
  index.ids.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) index.ids[static_cast<size_t>(i)] = i;
  return index;
}

// Flat binary persistence: magic, count, dim, id table, embedding matrix.
constexpr char kKnnMagic[8] = {'S', 'S', 'R', 'K', 'N', 'N', '1', '\n'};

inline void save_knn_index(const std::string& path, const KnnIndex& index) {
  std::ofstream f(path, std::ios::binary);
  SSR_CHECK(f.good(), "save_knn_index: cannot open " << path);
  f.write(kKnnMagic, 8);
  uint32_t n = static_cast<uint32_t>(index.size()), dim = net::kEmbedDim;
  f.write(reinterpret_cast<const char*>(&n), 4);
  f.write(reinterpret_cast<const char*>(&dim), 4);
  for (int id : index.ids) {
    int32_t v = id;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  f.write(reinterpret_cast<const char*>(index.embeddings.data()),
          static_cast<std::streamsize>(index.embeddings.numel() * 8));
  SSR_CHECK(f.good(), "save_knn_index: write failed");
}

inline KnnIndex load_knn_index(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SSR_CHECK(f.good(), "load_knn_index: cannot open " << path);
  char magic[8];
  f.read(magic, 8);
  SSR_CHECK(f.good() && std::memcmp(magic, kKnnMagic, 8) == 0,
            "load_knn_index: bad magic in " << path);
  uint32_t n = 0, dim = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  f.read(reinterpret_cast<char*>(&dim), 4);
  SSR_CHECK(dim == net::kEmbedDim, "load_knn_index: unexpected dim " << dim);
  KnnIndex index;
  index.ids.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    int32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    index.ids[i] = v;
  }
  index.embeddings = Array({static_cast<int>(n), static_cast<int>(dim)});
  f.read(reinterpret_cast<char*>(index.embeddings.data()),
         static_cast<std::streamsize>(index.embeddings.numel() * 8));
  SSR_CHECK(f.good(), "load_knn_index: truncated file");
  return index;
}

}  // namespace ssr::data
