#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "estkit/core/error.hpp"
#include "estkit/core/types.hpp"
#include "estkit/systems/system.hpp"

namespace estkit::neural {

// Window anchored at (0-based) step a: observations y_{a-T+1..a} and target
// states x_{a..a+T-1}.
struct WindowRef {
  std::size_t traj = 0;
  Index anchor = 0;
};

struct WindowBatch {
  std::vector<Series> obs_windows;    // each T x N
  std::vector<Series> state_targets;  // each T x M
  Index window_len = 0;
  std::vector<WindowRef> alignment;
};

// Anchors a with a - T + 1 >= 0 and a + T - 1 < length, advancing by stride.
inline std::vector<Index> window_anchors(Index length, Index T, Index stride) {
  if (T < 1) throw ConfigError("window length must be at least 1");
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (length < 2 * T - 1)
    throw ConfigError("trajectory of length " + std::to_string(length) + " is shorter than 2T-1 = " +
                      std::to_string(2 * T - 1));
  std::vector<Index> out;
  for (Index a = T - 1; a + T - 1 < length; a += stride) out.push_back(a);
  return out;
}

inline Series obs_window(const Trajectory& tr, Index anchor, Index T) {
  return tr.observations.middleRows(anchor - T + 1, T);
}

inline Series target_window(const Trajectory& tr, Index anchor, Index T) { return tr.states.middleRows(anchor, T); }

inline WindowBatch make_windows(const Trajectory& traj, Index T, Index stride, std::size_t traj_index = 0) {
  WindowBatch wb;
  wb.window_len = T;
  for (Index a : window_anchors(traj.length(), T, stride)) {
    wb.obs_windows.push_back(obs_window(traj, a, T));
    wb.state_targets.push_back(target_window(traj, a, T));
    wb.alignment.push_back({traj_index, a});
  }
  return wb;
}

inline constexpr double kSegmentStdFloor = 1e-6;

struct SegmentBatch {
  std::vector<Series> segments;  // N_s segments, each L x N, normalized, zero-padded
  Series mean;                   // N_s x N per-segment channel means
  Series std;                    // N_s x N per-segment channel std (floored)
  Index pad_len = 0;
  Index window_len = 0;

  Index count() const { return static_cast<Index>(segments.size()); }
};

inline Index segment_count(Index T, Index L) { return (T + L - 1) / L; }

// Raw split into ceil(T/L) segments of L rows; the last is zero-padded.
inline std::vector<Series> split_segments(const Series& win, Index L) {
  if (L < 1) throw ConfigError("segment length must be at least 1");
  const Index T = win.rows();
  if (T < 1) throw ShapeError("empty window");
  std::vector<Series> out;
  for (Index start = 0; start < T; start += L) {
    Series seg = Series::Zero(L, win.cols());
    const Index rows = std::min(L, T - start);
    seg.topRows(rows) = win.middleRows(start, rows);
    out.push_back(std::move(seg));
  }
  return out;
}

// Concatenates segments and strips padding; exact inverse of split_segments.
inline Series join_segments(const std::vector<Series>& segs, Index T) {
  if (segs.empty()) throw ShapeError("no segments");
  const Index L = segs[0].rows();
  Series out(T, segs[0].cols());
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const Index start = static_cast<Index>(s) * L;
    if (start >= T) break;
    out.middleRows(start, std::min(L, T - start)) = segs[s].topRows(std::min(L, T - start));
  }
  return out;
}

// split_segments followed by a per-segment, per-channel z-score over the
// valid rows; padding stays zero.
inline SegmentBatch segment_and_normalize(const Series& win, Index L) {
  const Index T = win.rows(), n = win.cols();
  SegmentBatch sb;
  sb.segments = split_segments(win, L);
  const Index ns = sb.count();
  sb.window_len = T;
  sb.pad_len = ns * L - T;
  sb.mean.resize(ns, n);
  sb.std.resize(ns, n);
  for (Index s = 0; s < ns; ++s) {
    const Index rows = std::min(L, T - s * L);
    Series& seg = sb.segments[static_cast<std::size_t>(s)];
    for (Index c = 0; c < n; ++c) {
      const auto valid = seg.col(c).head(rows);
      const double mean = valid.mean();
      const double var = (valid.array() - mean).square().mean();
      const double sd = std::max(std::sqrt(var), kSegmentStdFloor);
      sb.mean(s, c) = mean;
      sb.std(s, c) = sd;
      seg.col(c).head(rows) = (valid.array() - mean) / sd;
    }
  }
  return sb;
}

// De-normalizes and joins; inverse of segment_and_normalize up to rounding.
inline Series desegment(const SegmentBatch& sb) {
  std::vector<Series> raw = sb.segments;
  for (Index s = 0; s < sb.count(); ++s)
    for (Index c = 0; c < sb.mean.cols(); ++c)
      raw[static_cast<std::size_t>(s)].col(c) = raw[static_cast<std::size_t>(s)].col(c).array() * sb.std(s, c) + sb.mean(s, c);
  return join_segments(raw, sb.window_len);
}

}  // namespace estkit::neural
