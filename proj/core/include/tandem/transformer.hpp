#pragma once

#include <string>
#include <vector>

#include "tandem/kv_cache.hpp"
#include "tandem/masking.hpp"
#include "tandem/tape.hpp"

namespace tandem {

struct StackConfig {
  int layers = 4;
  int width = 64;
  int heads = 4;
  int hidden = 128;  // MLP inner width

  void validate() const {
    if (layers <= 0 || width <= 0 || heads <= 0 || hidden <= 0)
      throw ConfigError("stack: non-positive dimension");
    if (width % heads != 0)
      throw ConfigError("stack: width " + std::to_string(width) +
                        " not divisible by heads " + std::to_string(heads));
  }
};

// Pre-LN transformer block: x + attn(LN(x)), then x + mlp(LN(x)).
// Attention optionally prepends cached K/V rows (joint attention over a
// frozen prefix); the mask decides who sees what.
template <class S>
struct BlockT {
  ParamT<S> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  ParamT<S> ln2_g, ln2_b, w1, b1, w2, b2;

  void init(const std::string& prefix, const StackConfig& cfg, Rng& rng) {
    const int d = cfg.width;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    ln1_g.init_const(prefix + ".ln1.g", 1, d, S(1));
    ln1_b.init(prefix + ".ln1.b", 1, d);
    wq.init_gaussian(prefix + ".wq", d, d, rng, ws);
    bq.init(prefix + ".bq", 1, d);
    wk.init_gaussian(prefix + ".wk", d, d, rng, ws);
    bk.init(prefix + ".bk", 1, d);
    wv.init_gaussian(prefix + ".wv", d, d, rng, ws);
    bv.init(prefix + ".bv", 1, d);
    wo.init_gaussian(prefix + ".wo", d, d, rng, ws);
    bo.init(prefix + ".bo", 1, d);
    ln2_g.init_const(prefix + ".ln2.g", 1, d, S(1));
    ln2_b.init(prefix + ".ln2.b", 1, d);
    w1.init_gaussian(prefix + ".w1", d, cfg.hidden, rng, ws);
    b1.init(prefix + ".b1", 1, cfg.hidden);
    w2.init_gaussian(prefix + ".w2", cfg.hidden, d, rng,
                     1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
    b2.init(prefix + ".b2", 1, d);
  }

  void collect(std::vector<ParamT<S>*>& out) {
    for (ParamT<S>* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
                         &ln2_g, &ln2_b, &w1, &b1, &w2, &b2})
      out.push_back(p);
  }
};

template <class S>
class StackT {
 public:
  using Id = typename TapeT<S>::Id;

  void init(const std::string& prefix, const StackConfig& cfg, Rng& rng) {
    cfg.validate();
    cfg_ = cfg;
    blocks_.resize(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l)
      blocks_[static_cast<std::size_t>(l)].init(prefix + ".blk" + std::to_string(l), cfg, rng);
    lnf_g_.init_const(prefix + ".lnf.g", 1, cfg.width, S(1));
    lnf_b_.init(prefix + ".lnf.b", 1, cfg.width);
  }

  const StackConfig& config() const { return cfg_; }

  void collect(std::vector<ParamT<S>*>& out) {
    for (auto& b : blocks_) b.collect(out);
    out.push_back(&lnf_g_);
    out.push_back(&lnf_b_);
  }

  void set_trainable(bool v) {
    std::vector<ParamT<S>*> ps;
    collect(ps);
    for (auto* p : ps) p->trainable = v;
  }

  // x: (n x d) token matrix already embedded. mask: (n x cache_len + n),
  // cache_len = 0 when cache is null; the mask object must outlive the tape.
  // k_out / v_out, when given, receive each layer's live K/V values (the
  // cache producer path). Returns the final-LN hidden states (n x d).
  Id forward(TapeT<S>& t, Id x, const BoolMat& mask, const LayerKVCacheT<S>* cache,
             std::vector<MatT<S>>* k_out = nullptr,
             std::vector<MatT<S>>* v_out = nullptr) {
    const int n = t.value(x).rows();
    const int d = cfg_.width;
    const int dh = d / cfg_.heads;
    const int cache_len = cache ? cache->scene_len : 0;
    if (cache && cache->layer_count() != cfg_.layers)
      throw CacheError("stack: snapshot has " + std::to_string(cache->layer_count()) +
                       " layers, stack has " + std::to_string(cfg_.layers));
    if (cache && cache->width != d)
      throw CacheError("stack: snapshot width " + std::to_string(cache->width) +
                       " vs stack width " + std::to_string(d));
    if (mask.rows() != n || mask.cols() != cache_len + n)
      throw LayoutError("stack: mask " + std::to_string(mask.rows()) + "x" +
                        std::to_string(mask.cols()) + " does not cover " + std::to_string(n) +
                        " live tokens with " + std::to_string(cache_len) + " cached");

    const S inv_sqrt_dh = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
    for (int l = 0; l < cfg_.layers; ++l) {
      BlockT<S>& blk = blocks_[static_cast<std::size_t>(l)];
      const Id h = t.layernorm(x, t.param(blk.ln1_g), t.param(blk.ln1_b), S(1e-5));
      const Id q = affine(t, h, t.param(blk.wq), t.param(blk.bq));
      const Id k = affine(t, h, t.param(blk.wk), t.param(blk.bk));
      const Id v = affine(t, h, t.param(blk.wv), t.param(blk.bv));
      if (k_out) k_out->push_back(t.value(k));
      if (v_out) v_out->push_back(t.value(v));

      std::vector<Id> head_outs;
      head_outs.reserve(static_cast<std::size_t>(cfg_.heads));
      for (int hh = 0; hh < cfg_.heads; ++hh) {
        const int c0 = hh * dh;
        const Id qh = t.slice_cols(q, c0, dh);
        Id kh = t.slice_cols(k, c0, dh);
        Id vh = t.slice_cols(v, c0, dh);
        if (cache) {
          const Id ck = t.input(slice_cols(cache->k[static_cast<std::size_t>(l)], c0, dh));
          const Id cv = t.input(slice_cols(cache->v[static_cast<std::size_t>(l)], c0, dh));
          kh = t.concat_rows({ck, kh});
          vh = t.concat_rows({cv, vh});
        }
        const Id scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dh);
        const Id p = t.masked_softmax(scores, &mask);
        head_outs.push_back(t.matmul(p, vh));
      }
      const Id merged = t.concat_cols(head_outs);
      const Id attn = affine(t, merged, t.param(blk.wo), t.param(blk.bo));
      x = t.add(x, attn);

      const Id h2 = t.layernorm(x, t.param(blk.ln2_g), t.param(blk.ln2_b), S(1e-5));
      const Id f1 = t.gelu(affine(t, h2, t.param(blk.w1), t.param(blk.b1)));
      const Id f2 = affine(t, f1, t.param(blk.w2), t.param(blk.b2));
      x = t.add(x, f2);
    }
    return t.layernorm(x, t.param(lnf_g_), t.param(lnf_b_), S(1e-5));
  }

 private:
  StackConfig cfg_;
  std::vector<BlockT<S>> blocks_;
  ParamT<S> lnf_g_, lnf_b_;
};

}  // namespace tandem
