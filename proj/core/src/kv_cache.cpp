#include "tandem/kv_cache.hpp"

#include "tandem/binio.hpp"

namespace tandem {

namespace {
constexpr char kMagic[9] = "TDMKV001";
}

template <class S>
void dump_kv_snapshot(const std::string& path, const LayerKVCacheT<S>& snap) {
  snap.validate();
  BinWriter w(path);
  w.magic(kMagic);
  w.value<std::int64_t>(snap.epoch);
  w.value<std::int32_t>(snap.layer_count());
  w.value<std::int32_t>(snap.scene_len);
  w.value<std::int32_t>(snap.width);
  w.value<std::uint8_t>(static_cast<std::uint8_t>(sizeof(S)));
  for (int l = 0; l < snap.layer_count(); ++l) {
    w.bytes(snap.k[static_cast<std::size_t>(l)].data(),
            snap.k[static_cast<std::size_t>(l)].size() * sizeof(S));
    w.bytes(snap.v[static_cast<std::size_t>(l)].data(),
            snap.v[static_cast<std::size_t>(l)].size() * sizeof(S));
  }
  w.value<std::int32_t>(snap.reasoning.rows());
  w.bytes(snap.reasoning.data(), snap.reasoning.size() * sizeof(S));
  w.close();
}

template <class S>
LayerKVCacheT<S> load_kv_snapshot(const std::string& path) {
  BinReader r(path);
  r.expect_magic(kMagic);
  LayerKVCacheT<S> snap;
  snap.epoch = r.value<std::int64_t>();
  const auto layers = r.value<std::int32_t>();
  snap.scene_len = r.value<std::int32_t>();
  snap.width = r.value<std::int32_t>();
  const auto scalar = r.value<std::uint8_t>();
  if (scalar != sizeof(S))
    throw DataError("kv snapshot " + path + ": scalar width " + std::to_string(scalar) +
                    " does not match requested " + std::to_string(sizeof(S)));
  if (layers <= 0 || layers > 1024 || snap.scene_len < 0 || snap.width < 0)
    throw DataError("kv snapshot " + path + ": implausible header");
  snap.k.reserve(static_cast<std::size_t>(layers));
  snap.v.reserve(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    MatT<S> k(snap.scene_len, snap.width);
    r.bytes(k.data(), k.size() * sizeof(S));
    MatT<S> v(snap.scene_len, snap.width);
    r.bytes(v.data(), v.size() * sizeof(S));
    snap.k.push_back(std::move(k));
    snap.v.push_back(std::move(v));
  }
  const auto reason_rows = r.value<std::int32_t>();
  if (reason_rows < 0) throw DataError("kv snapshot " + path + ": negative reasoning rows");
  snap.reasoning = MatT<S>(reason_rows, snap.width);
  r.bytes(snap.reasoning.data(), snap.reasoning.size() * sizeof(S));
  snap.validate();
  return snap;
}

template void dump_kv_snapshot<double>(const std::string&, const LayerKVCacheT<double>&);
template void dump_kv_snapshot<float>(const std::string&, const LayerKVCacheT<float>&);
template LayerKVCacheT<double> load_kv_snapshot<double>(const std::string&);
template LayerKVCacheT<float> load_kv_snapshot<float>(const std::string&);

}  // namespace tandem
