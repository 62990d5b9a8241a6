#include "tandem/masking.hpp"

#include <sstream>

#include "tandem/error.hpp"
#include "tandem/hash.hpp"

namespace tandem {

int segment_rank(SegmentKind k) {
  switch (k) {
    case SegmentKind::scene:
    case SegmentKind::text:
      return 0;
    case SegmentKind::observation:
      return 1;
    case SegmentKind::decision:
      return 2;
    case SegmentKind::plan_temporal:
    case SegmentKind::plan_spatial:
      return 3;
  }
  throw LayoutError("segment_rank: unknown segment kind");
}

const char* segment_name(SegmentKind k) {
  switch (k) {
    case SegmentKind::scene: return "scene";
    case SegmentKind::text: return "text";
    case SegmentKind::observation: return "observation";
    case SegmentKind::decision: return "decision";
    case SegmentKind::plan_temporal: return "plan_temporal";
    case SegmentKind::plan_spatial: return "plan_spatial";
  }
  return "?";
}

void AttentionLayout::validate() const {
  if (segments.empty()) throw LayoutError("layout: no segments");
  int total = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& s = segments[i];
    if (s.length < 0)
      throw LayoutError("layout: segment " + std::to_string(i) + " (" +
                        segment_name(s.kind) + ") has negative length");
    if (s.rule == AttentionRule::causal && s.kind != SegmentKind::text)
      throw LayoutError("layout: causal rule on non-text segment " +
                        std::string(segment_name(s.kind)));
    total += s.length;
  }
  if (total == 0) throw LayoutError("layout: zero tokens");
}

std::string layout_str(const AttentionLayout& layout) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layout.segments.size(); ++i) {
    const Segment& s = layout.segments[i];
    if (i) os << "+";
    os << segment_name(s.kind) << ":" << s.length
       << (s.rule == AttentionRule::causal ? "c" : "b");
  }
  return os.str();
}

AttentionLayout concat_layouts(const AttentionLayout& a, const AttentionLayout& b) {
  AttentionLayout out = a;
  out.segments.insert(out.segments.end(), b.segments.begin(), b.segments.end());
  return out;
}

BoolMat build_mask(const AttentionLayout& layout) {
  layout.validate();
  const int n = layout.total_tokens();
  BoolMat mask(n, n);

  // Segment offsets.
  const std::size_t ns = layout.segments.size();
  std::vector<int> start(ns + 1, 0);
  for (std::size_t s = 0; s < ns; ++s) start[s + 1] = start[s] + layout.segments[s].length;

  for (std::size_t si = 0; si < ns; ++si) {
    const Segment& a = layout.segments[si];
    const int rank_i = segment_rank(a.kind);
    for (std::size_t sj = 0; sj < ns; ++sj) {
      const Segment& b = layout.segments[sj];
      const int rank_j = segment_rank(b.kind);
      bool all = false;
      bool lower_triangle = false;
      if (rank_j < rank_i) {
        all = true;
      } else if (rank_j == rank_i) {
        if (a.rule == AttentionRule::bidirectional && b.rule == AttentionRule::bidirectional)
          all = true;
        else if (si == sj && a.rule == AttentionRule::causal)
          lower_triangle = true;
      }
      if (!all && !lower_triangle) continue;
      for (int i = 0; i < a.length; ++i) {
        const int gi = start[si] + i;
        const int jmax = lower_triangle ? i : b.length - 1;
        for (int j = 0; j <= jmax; ++j) mask(gi, start[sj] + j) = 1;
      }
    }
  }
  return mask;
}

BoolMat build_mask_oracle(const AttentionLayout& layout) {
  layout.validate();
  const int n = layout.total_tokens();

  auto segment_of = [&](int tok) {
    int acc = 0;
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
      acc += layout.segments[s].length;
      if (tok < acc) return static_cast<int>(s);
    }
    throw LayoutError("oracle: token index out of range");
  };

  BoolMat mask(n, n);
  for (int i = 0; i < n; ++i) {
    const int si = segment_of(i);
    const Segment& a = layout.segments[static_cast<std::size_t>(si)];
    for (int j = 0; j < n; ++j) {
      const int sj = segment_of(j);
      const Segment& b = layout.segments[static_cast<std::size_t>(sj)];
      bool ok = false;
      if (segment_rank(b.kind) < segment_rank(a.kind)) {
        ok = true;
      } else if (segment_rank(b.kind) == segment_rank(a.kind)) {
        if (a.rule == AttentionRule::bidirectional &&
            b.rule == AttentionRule::bidirectional) {
          ok = true;
        } else if (si == sj && a.rule == AttentionRule::causal &&
                   b.rule == AttentionRule::causal) {
          ok = j <= i;
        }
      }
      if (ok) mask(i, j) = 1;
    }
  }
  return mask;
}

BoolMat slice_mask_rows(const BoolMat& m, int r0, int n) {
  if (r0 < 0 || n < 0 || r0 + n > m.rows())
    throw LayoutError("slice_mask_rows: rows [" + std::to_string(r0) + ", " +
                      std::to_string(r0 + n) + ") out of " + std::to_string(m.rows()));
  BoolMat out(n, m.cols());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = m(r0 + i, j);
  return out;
}

std::uint64_t mask_digest(const BoolMat& m) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a_value(m.rows(), h);
  h = fnv1a_value(m.cols(), h);
  for (int i = 0; i < m.rows(); ++i) h = fnv1a(m.row(i), static_cast<std::size_t>(m.cols()), h);
  return h;
}

}  // namespace tandem
