#pragma once

#include <string>
#include <vector>

#include "tandem/mat.hpp"

namespace tandem {

// Token segment kinds in rank order of information flow. A token may attend
// to any token of strictly lower rank; equal-rank visibility depends on the
// attention rule of the segments involved.
enum class SegmentKind {
  scene,          // rank 0, visual context processed by the understanding stack
  text,           // rank 0, prompt + reasoning slots
  observation,    // rank 1, ego-centric sensor tokens on the action side
  decision,       // rank 2, meta-action query tokens
  plan_temporal,  // rank 3, temporal waypoint queries
  plan_spatial,   // rank 3, spatial route queries
};

enum class AttentionRule { bidirectional, causal };

struct Segment {
  SegmentKind kind;
  AttentionRule rule;
  int length;
};

struct AttentionLayout {
  std::vector<Segment> segments;

  int total_tokens() const {
    int n = 0;
    for (const auto& s : segments) n += s.length;
    return n;
  }

  // Throws LayoutError on: negative lengths, zero total, causal rule on a
  // non-text segment.
  void validate() const;
};

int segment_rank(SegmentKind k);
const char* segment_name(SegmentKind k);
std::string layout_str(const AttentionLayout& layout);

AttentionLayout concat_layouts(const AttentionLayout& a, const AttentionLayout& b);

// Block-structured mask construction over a validated layout.
// permitted(i, j) is true iff
//   rank(j) < rank(i), or
//   rank(j) == rank(i) and both segments are bidirectional, or
//   i and j are in the same causal segment and j <= i.
BoolMat build_mask(const AttentionLayout& layout);

// Independent reference: evaluates the predicate above per token pair with
// its own token->segment resolution. Deliberately the dumb O(n^2) form.
BoolMat build_mask_oracle(const AttentionLayout& layout);

// Row block [r0, r0+n) of a mask; used to carve the live-token rows out of a
// joint (cache + live) mask.
BoolMat slice_mask_rows(const BoolMat& m, int r0, int n);

std::uint64_t mask_digest(const BoolMat& m);

}  // namespace tandem
