#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tandem/error.hpp"
#include "tandem/mat.hpp"

namespace tandem {

// One published snapshot of the understanding stack: per-layer key/value
// projections over the full scene+text sequence, plus the reasoning-token
// hidden states consumers pool from. Immutable once published.
template <class S>
struct LayerKVCacheT {
  std::int64_t epoch = -1;  // tick at which the producing encode started
  int scene_len = 0;        // cached sequence length (all UE tokens)
  int width = 0;            // model width d
  std::vector<MatT<S>> k;   // per layer, scene_len x width
  std::vector<MatT<S>> v;   // per layer, scene_len x width
  MatT<S> reasoning;        // reasoning_len x width, final-layer hiddens

  int layer_count() const { return static_cast<int>(k.size()); }

  void validate() const {
    if (epoch < 0) throw CacheError("kv snapshot: negative epoch");
    if (k.size() != v.size())
      throw CacheError("kv snapshot: " + std::to_string(k.size()) + " K layers vs " +
                       std::to_string(v.size()) + " V layers");
    if (k.empty()) throw CacheError("kv snapshot: no layers");
    for (std::size_t l = 0; l < k.size(); ++l) {
      if (k[l].rows() != scene_len || k[l].cols() != width || k[l].rows() != v[l].rows() ||
          k[l].cols() != v[l].cols())
        throw CacheError("kv snapshot: layer " + std::to_string(l) + " shape " +
                         k[l].shape_str() + " does not match " + std::to_string(scene_len) +
                         "x" + std::to_string(width));
    }
  }

  std::uint64_t digest() const {
    std::uint64_t h = fnv1a_value(epoch);
    h = fnv1a_value(scene_len, h);
    h = fnv1a_value(width, h);
    for (std::size_t l = 0; l < k.size(); ++l) {
      h = mat_digest(k[l], h);
      h = mat_digest(v[l], h);
    }
    h = mat_digest(reasoning, h);
    return h;
  }
};

using LayerKVCache = LayerKVCacheT<double>;

// Single-writer / multi-reader snapshot cell. publish() swaps in a complete
// immutable snapshot; acquire() hands out a shared_ptr to whichever snapshot
// is current at that instant. Readers never observe a partially written
// snapshot because the unit of exchange is the pointer, not the payload.
template <class S>
class SnapshotStoreT {
 public:
  SnapshotStoreT() = default;
  SnapshotStoreT(const SnapshotStoreT&) = delete;
  SnapshotStoreT& operator=(const SnapshotStoreT&) = delete;

  // Writer side. Epochs must strictly increase; publishing an epoch at or
  // below the current one is a scheduling bug.
  void publish(std::shared_ptr<const LayerKVCacheT<S>> snap) {
    if (!snap) throw CacheError("snapshot store: publish of null snapshot");
    snap->validate();
    auto cur = load();
    if (cur && snap->epoch <= cur->epoch)
      throw CacheError("snapshot store: stale publish, epoch " +
                       std::to_string(snap->epoch) + " <= current " +
                       std::to_string(cur->epoch));
    store(std::move(snap));
  }

  bool warm() const { return load() != nullptr; }

  std::int64_t current_epoch() const {
    auto cur = load();
    return cur ? cur->epoch : -1;
  }

  // Reader side. Cold cache (nothing published yet) is an error: consumers
  // must force a synchronous publish at startup rather than act blind.
  std::shared_ptr<const LayerKVCacheT<S>> acquire() const {
    auto cur = load();
    if (!cur) throw CacheError("snapshot store: acquire before first publish (cold cache)");
    return cur;
  }

  // acquire() plus the staleness sanity check: a snapshot can only come from
  // the past of the requesting tick.
  std::shared_ptr<const LayerKVCacheT<S>> acquire_for(std::int64_t t) const {
    auto cur = acquire();
    if (cur->epoch > t)
      throw CacheError("snapshot store: snapshot epoch " + std::to_string(cur->epoch) +
                       " is ahead of tick " + std::to_string(t));
    return cur;
  }

 private:
  // gcc 11 has no std::atomic<std::shared_ptr>; the free-function form is
  // deprecated in C++20 but present and lock-consistent in libstdc++.
  std::shared_ptr<const LayerKVCacheT<S>> load() const {
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wdeprecated-declarations"
    return std::atomic_load(&cur_);
#pragma GCC diagnostic pop
  }

  void store(std::shared_ptr<const LayerKVCacheT<S>> p) {
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wdeprecated-declarations"
    std::atomic_store(&cur_, std::shared_ptr<const LayerKVCacheT<S>>(std::move(p)));
#pragma GCC diagnostic pop
  }

  std::shared_ptr<const LayerKVCacheT<S>> cur_;
};

using SnapshotStore = SnapshotStoreT<double>;

// Binary snapshot dump: header (epoch, layer count, sequence length, width,
// scalar width) followed by raw K/V payloads in layer order.
template <class S>
void dump_kv_snapshot(const std::string& path, const LayerKVCacheT<S>& snap);

template <class S>
LayerKVCacheT<S> load_kv_snapshot(const std::string& path);

}  // namespace tandem
