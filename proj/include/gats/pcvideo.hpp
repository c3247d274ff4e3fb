#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace gats {

// One observation: a 3D position inside a specific frame, with an optional
// per-point feature vector. Positions are held at 64-bit precision.
struct Point4D {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  int frame_index = 0;
  std::vector<double> feature;
};

struct Frame {
  std::vector<Point4D> points;

  std::size_t count() const { return points.size(); }
};

// An ordered sequence of frames sampled at a fixed physical interval.
// Frames are synchronous: every point in frames[t] carries frame_index t.
struct PointCloudVideo {
  std::vector<Frame> frames;
  double frame_interval = 1.0 / 30.0;          // seconds between frames
  std::optional<double> segment_duration;      // seconds; (T-1)*dt when absent
  int feature_dim = 0;

  int frame_count() const { return static_cast<int>(frames.size()); }

  std::size_t total_points() const {
    std::size_t n = 0;
    for (const Frame& f : frames) n += f.points.size();
    return n;
  }

  double duration() const {
    if (segment_duration) return *segment_duration;
    return frames.empty() ? 0.0
                          : frame_interval * static_cast<double>(frames.size() - 1);
  }
};

// Throws std::domain_error when the video violates its structural invariants
// (non-positive interval, empty frame, stray frame index, inconsistent
// feature dimension, non-finite coordinate).
void validate(const PointCloudVideo& video);

enum class TemporalWindow { symmetric, past_only };

struct NeighborRef {
  int frame = 0;         // absolute frame index
  int point = 0;         // index within that frame
  int frame_offset = 0;  // frame - center frame
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

// Result of a spatio-temporal window query. Members are canonically ordered
// by ascending frame offset, then ascending point index, which makes query
// results reproducible across runs and platforms.
struct Neighborhood {
  Point4D center;
  std::vector<NeighborRef> members;
  double spatial_radius = 0.0;
  int temporal_radius = 0;
  bool undersized = false;  // set by k-NN queries with fewer candidates than k
};

// Immutable per-frame uniform grid over 3D coordinates. Temporal windows are
// handled by iterating the (small) frame range of a query.
class VideoIndex {
 public:
  explicit VideoIndex(const PointCloudVideo& video);

  const PointCloudVideo& video() const { return *video_; }

  // All points within the cylindrical window: Euclidean ball of
  // spatial_radius around center.position, frames within temporal_radius of
  // center.frame_index (past frames only under past_only).
  Neighborhood query_radius(const Point4D& center, double spatial_radius,
                            int temporal_radius,
                            TemporalWindow window = TemporalWindow::symmetric) const;

  // The k nearest points within the temporal window, ties broken by
  // (frame offset, point index). Flags `undersized` when fewer than k
  // candidates exist.
  Neighborhood query_knn(const Point4D& center, int k, int temporal_radius,
                         TemporalWindow window = TemporalWindow::symmetric) const;

  // Index of the point in `frame` closest to pos (ties -> lowest index).
  // Returns -1 for an empty frame.
  int nearest_in_frame(int frame, const Eigen::Vector3d& pos) const;

 private:
  struct FrameGrid {
    double cell_size = 1.0;
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    std::unordered_map<std::uint64_t, std::vector<int>> cells;
  };

  void gather_frame(int frame, const Eigen::Vector3d& pos, double radius,
                    std::vector<int>& out) const;

  const PointCloudVideo* video_;
  std::vector<FrameGrid> grids_;
};

// Convenience single-shot queries; batch callers should build a VideoIndex
// once and reuse it.
Neighborhood query_neighborhood(const PointCloudVideo& video, const Point4D& center,
                                double spatial_radius, int temporal_radius,
                                TemporalWindow window = TemporalWindow::symmetric);
Neighborhood query_knn(const PointCloudVideo& video, const Point4D& center, int k,
                       int temporal_radius,
                       TemporalWindow window = TemporalWindow::symmetric);

// ---------------------------------------------------------------------------
// Sequence I/O.
//
// Text format "PCV1": header line `PCV1 <T> <dt_seconds> <feature_dim>`, then
// per frame a line `FRAME <t> <N_t>` followed by N_t lines of
// `x y z [f1 ... fd]`. Values are written with 17 significant digits, so
// write -> read is the identity on the in-memory model.
//
// Binary format "PCVB": magic bytes `PCVB`, u32 frame count, f64 interval,
// u32 feature dim, then per frame u32 t, u32 N_t and N_t * (3 + d)
// little-endian 32-bit floats. Reads widen f32 -> f64 exactly; writes narrow
// with round-to-nearest, so the binary round trip is exact precisely for
// float32-representable values.
//
// read_video dispatches on the magic of either format.
// ---------------------------------------------------------------------------

enum class VideoFormat { text, binary };

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::int64_t byte_offset, int frame = -1);

  std::int64_t byte_offset() const { return byte_offset_; }
  int frame() const { return frame_; }

 private:
  std::int64_t byte_offset_;
  int frame_;
};

PointCloudVideo read_video(const std::filesystem::path& path);
void write_video(const PointCloudVideo& video, const std::filesystem::path& path,
                 VideoFormat format = VideoFormat::text);

// Dense per-point feature storage resolved by (frame, point) reference.
class FeatureSet {
 public:
  FeatureSet() = default;

  // Features embedded in the video points. Throws std::domain_error when the
  // video carries none.
  static FeatureSet from_video(const PointCloudVideo& video);

  // 3-dimensional positional features (the usual stand-in when a video has
  // no feature channel).
  static FeatureSet from_positions(const PointCloudVideo& video);

  int dim() const { return dim_; }

  std::span<const double> at(int frame, int point) const {
    const std::vector<double>& block = frames_[static_cast<std::size_t>(frame)];
    return {block.data() + static_cast<std::size_t>(point) * dim_,
            static_cast<std::size_t>(dim_)};
  }

 private:
  int dim_ = 0;
  std::vector<std::vector<double>> frames_;
};

}  // namespace gats
