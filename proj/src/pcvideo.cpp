#include "gats/pcvideo.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace gats {

namespace {

constexpr std::uint64_t kCellBits = 21;
constexpr std::uint64_t kCellMax = (1ULL << kCellBits) - 1;

std::uint64_t pack_cell(std::uint64_t cx, std::uint64_t cy, std::uint64_t cz) {
  return (cx << (2 * kCellBits)) | (cy << kCellBits) | cz;
}

std::uint64_t axis_cell(double coord, double origin, double cell_size) {
  const double raw = std::floor((coord - origin) / cell_size);
  if (!(raw > 0.0)) return 0;  // also catches NaN
  if (raw >= static_cast<double>(kCellMax)) return kCellMax;
  return static_cast<std::uint64_t>(raw);
}

}  // namespace

void validate(const PointCloudVideo& video) {
  if (!(video.frame_interval > 0.0))
    throw std::domain_error("video: frame_interval must be positive");
  if (video.segment_duration && !(*video.segment_duration > 0.0))
    throw std::domain_error("video: segment_duration must be positive");
  for (int t = 0; t < video.frame_count(); ++t) {
    const Frame& frame = video.frames[static_cast<std::size_t>(t)];
    if (frame.points.empty())
      throw std::domain_error("video: frame " + std::to_string(t) + " is empty");
    for (std::size_t i = 0; i < frame.points.size(); ++i) {
      const Point4D& p = frame.points[i];
      if (p.frame_index != t)
        throw std::domain_error("video: point " + std::to_string(i) + " in frame " +
                                std::to_string(t) + " carries frame_index " +
                                std::to_string(p.frame_index));
      if (!p.position.allFinite())
        throw std::domain_error("video: non-finite position in frame " +
                                std::to_string(t));
      if (static_cast<int>(p.feature.size()) != video.feature_dim)
        throw std::domain_error("video: feature dimension mismatch in frame " +
                                std::to_string(t));
      for (double f : p.feature)
        if (!std::isfinite(f))
          throw std::domain_error("video: non-finite feature in frame " +
                                  std::to_string(t));
    }
  }
}

VideoIndex::VideoIndex(const PointCloudVideo& video) : video_(&video) {
  grids_.resize(video.frames.size());
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    const std::vector<Point4D>& pts = video.frames[t].points;
    FrameGrid& grid = grids_[t];
    if (pts.empty()) continue;

    Eigen::Vector3d lo = pts.front().position;
    Eigen::Vector3d hi = pts.front().position;
    for (const Point4D& p : pts) {
      lo = lo.cwiseMin(p.position);
      hi = hi.cwiseMax(p.position);
    }
    grid.origin = lo;
    const double extent = (hi - lo).maxCoeff();
    const double target = extent / std::cbrt(static_cast<double>(pts.size()));
    grid.cell_size = std::max(target, std::max(extent * 1e-9, 1e-12));
    if (!(grid.cell_size > 0.0)) grid.cell_size = 1.0;

    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
      const Eigen::Vector3d& p = pts[static_cast<std::size_t>(i)].position;
      const std::uint64_t key = pack_cell(axis_cell(p.x(), lo.x(), grid.cell_size),
                                          axis_cell(p.y(), lo.y(), grid.cell_size),
                                          axis_cell(p.z(), lo.z(), grid.cell_size));
      grid.cells[key].push_back(i);
    }
  }
}

void VideoIndex::gather_frame(int frame, const Eigen::Vector3d& pos, double radius,
                              std::vector<int>& out) const {
  const std::vector<Point4D>& pts =
      video_->frames[static_cast<std::size_t>(frame)].points;
  const FrameGrid& grid = grids_[static_cast<std::size_t>(frame)];
  const double r2 = radius * radius;

  const std::uint64_t cx0 = axis_cell(pos.x() - radius, grid.origin.x(), grid.cell_size);
  const std::uint64_t cx1 = axis_cell(pos.x() + radius, grid.origin.x(), grid.cell_size);
  const std::uint64_t cy0 = axis_cell(pos.y() - radius, grid.origin.y(), grid.cell_size);
  const std::uint64_t cy1 = axis_cell(pos.y() + radius, grid.origin.y(), grid.cell_size);
  const std::uint64_t cz0 = axis_cell(pos.z() - radius, grid.origin.z(), grid.cell_size);
  const std::uint64_t cz1 = axis_cell(pos.z() + radius, grid.origin.z(), grid.cell_size);

  const double span = static_cast<double>(cx1 - cx0 + 1) *
                      static_cast<double>(cy1 - cy0 + 1) *
                      static_cast<double>(cz1 - cz0 + 1);
  if (span > static_cast<double>(pts.size())) {
    // Window covers more cells than there are points: scanning is cheaper.
    for (int i = 0; i < static_cast<int>(pts.size()); ++i)
      if ((pts[static_cast<std::size_t>(i)].position - pos).squaredNorm() <= r2)
        out.push_back(i);
    return;
  }

  std::vector<int> hits;
  for (std::uint64_t cx = cx0; cx <= cx1; ++cx)
    for (std::uint64_t cy = cy0; cy <= cy1; ++cy)
      for (std::uint64_t cz = cz0; cz <= cz1; ++cz) {
        const auto it = grid.cells.find(pack_cell(cx, cy, cz));
        if (it == grid.cells.end()) continue;
        for (int i : it->second)
          if ((pts[static_cast<std::size_t>(i)].position - pos).squaredNorm() <= r2)
            hits.push_back(i);
      }
  std::sort(hits.begin(), hits.end());
  out.insert(out.end(), hits.begin(), hits.end());
}

Neighborhood VideoIndex::query_radius(const Point4D& center, double spatial_radius,
                                      int temporal_radius, TemporalWindow window) const {
  if (video_->frames.empty())
    throw std::domain_error("query_radius: empty video");
  if (center.frame_index < 0 || center.frame_index >= video_->frame_count())
    throw std::domain_error("query_radius: center frame " +
                            std::to_string(center.frame_index) + " out of range");
  if (!(spatial_radius > 0.0) || temporal_radius < 0)
    throw std::domain_error("query_radius: radii must be positive");
  if (!center.position.allFinite())
    throw std::domain_error("query_radius: non-finite center position");

  Neighborhood result;
  result.center = center;
  result.spatial_radius = spatial_radius;
  result.temporal_radius = temporal_radius;

  const int t0 = std::max(0, center.frame_index - temporal_radius);
  const int t1 = window == TemporalWindow::past_only
                     ? center.frame_index
                     : std::min(video_->frame_count() - 1,
                                center.frame_index + temporal_radius);

  std::vector<int> hits;
  for (int t = t0; t <= t1; ++t) {
    hits.clear();
    gather_frame(t, center.position, spatial_radius, hits);
    for (int i : hits)
      result.members.push_back(
          {t, i, t - center.frame_index,
           video_->frames[static_cast<std::size_t>(t)].points[static_cast<std::size_t>(i)]
               .position});
  }
  return result;
}

Neighborhood VideoIndex::query_knn(const Point4D& center, int k, int temporal_radius,
                                   TemporalWindow window) const {
  if (video_->frames.empty())
    throw std::domain_error("query_knn: empty video");
  if (center.frame_index < 0 || center.frame_index >= video_->frame_count())
    throw std::domain_error("query_knn: center frame " +
                            std::to_string(center.frame_index) + " out of range");
  if (k < 1) throw std::domain_error("query_knn: k must be >= 1");

  const int t0 = std::max(0, center.frame_index - temporal_radius);
  const int t1 = window == TemporalWindow::past_only
                     ? center.frame_index
                     : std::min(video_->frame_count() - 1,
                                center.frame_index + temporal_radius);

  struct Candidate {
    double dist2;
    int frame_offset;
    int frame;
    int point;
  };
  std::vector<Candidate> candidates;
  for (int t = t0; t <= t1; ++t) {
    const std::vector<Point4D>& pts = video_->frames[static_cast<std::size_t>(t)].points;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
      const double d2 =
          (pts[static_cast<std::size_t>(i)].position - center.position).squaredNorm();
      candidates.push_back({d2, t - center.frame_index, t, i});
    }
  }

  const auto by_rank = [](const Candidate& a, const Candidate& b) {
    if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
    if (a.frame_offset != b.frame_offset) return a.frame_offset < b.frame_offset;
    return a.point < b.point;
  };
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k),
                                                 candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep),
                    candidates.end(), by_rank);
  candidates.resize(keep);

  Neighborhood result;
  result.center = center;
  result.temporal_radius = temporal_radius;
  result.undersized = keep < static_cast<std::size_t>(k);
  double max_d2 = 0.0;
  for (const Candidate& c : candidates) max_d2 = std::max(max_d2, c.dist2);
  result.spatial_radius = std::sqrt(max_d2);

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.frame_offset != b.frame_offset) return a.frame_offset < b.frame_offset;
    return a.point < b.point;
  });
  for (const Candidate& c : candidates)
    result.members.push_back(
        {c.frame, c.point, c.frame_offset,
         video_->frames[static_cast<std::size_t>(c.frame)]
             .points[static_cast<std::size_t>(c.point)]
             .position});
  return result;
}

int VideoIndex::nearest_in_frame(int frame, const Eigen::Vector3d& pos) const {
  const std::vector<Point4D>& pts =
      video_->frames[static_cast<std::size_t>(frame)].points;
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    const double d2 = (pts[static_cast<std::size_t>(i)].position - pos).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

Neighborhood query_neighborhood(const PointCloudVideo& video, const Point4D& center,
                                double spatial_radius, int temporal_radius,
                                TemporalWindow window) {
  return VideoIndex(video).query_radius(center, spatial_radius, temporal_radius, window);
}

Neighborhood query_knn(const PointCloudVideo& video, const Point4D& center, int k,
                       int temporal_radius, TemporalWindow window) {
  return VideoIndex(video).query_knn(center, k, temporal_radius, window);
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

ParseError::ParseError(const std::string& message, std::int64_t byte_offset, int frame)
    : std::runtime_error(message + " (byte offset " + std::to_string(byte_offset) +
                         (frame >= 0 ? ", frame " + std::to_string(frame) : "") + ")"),
      byte_offset_(byte_offset),
      frame_(frame) {}

namespace {

struct TextCursor {
  const std::string& content;
  std::size_t pos = 0;

  bool eof() const { return pos >= content.size(); }

  // Returns the next line (without newline); offset_out is the line start.
  bool next_line(std::string_view& line, std::int64_t& offset_out) {
    while (pos < content.size() &&
           (content[pos] == '\n' || content[pos] == '\r'))
      ++pos;
    if (pos >= content.size()) return false;
    offset_out = static_cast<std::int64_t>(pos);
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    std::size_t stop = end;
    if (stop > pos && content[stop - 1] == '\r') --stop;
    line = std::string_view(content).substr(pos, stop - pos);
    pos = end;
    return true;
  }
};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

double parse_double(std::string_view field, std::int64_t offset, int frame) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ParseError("invalid number '" + std::string(field) + "'", offset, frame);
  return value;
}

long parse_int(std::string_view field, std::int64_t offset, int frame) {
  long value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ParseError("invalid integer '" + std::string(field) + "'", offset, frame);
  return value;
}

PointCloudVideo parse_text(const std::string& content) {
  TextCursor cursor{content};
  std::string_view line;
  std::int64_t offset = 0;

  if (!cursor.next_line(line, offset)) throw ParseError("empty file", 0);
  auto header = split_fields(line);
  if (header.size() != 4 || header[0] != "PCV1")
    throw ParseError("malformed header, expected 'PCV1 <T> <dt> <feature_dim>'", offset);

  PointCloudVideo video;
  const long frame_count = parse_int(header[1], offset, -1);
  video.frame_interval = parse_double(header[2], offset, -1);
  const long feature_dim = parse_int(header[3], offset, -1);
  if (frame_count < 0 || feature_dim < 0 || !(video.frame_interval > 0.0) ||
      !std::isfinite(video.frame_interval))
    throw ParseError("malformed header values", offset);
  video.feature_dim = static_cast<int>(feature_dim);
  video.frames.resize(static_cast<std::size_t>(frame_count));

  for (long t = 0; t < frame_count; ++t) {
    if (!cursor.next_line(line, offset))
      throw ParseError("truncated file: missing FRAME record", offset,
                       static_cast<int>(t));
    auto fields = split_fields(line);
    if (fields.size() != 3 || fields[0] != "FRAME")
      throw ParseError("expected 'FRAME <t> <N>'", offset, static_cast<int>(t));
    const long frame_id = parse_int(fields[1], offset, static_cast<int>(t));
    const long point_count = parse_int(fields[2], offset, static_cast<int>(t));
    if (frame_id != t)
      throw ParseError("frame indices must be consecutive: expected " +
                           std::to_string(t) + ", got " + std::to_string(frame_id),
                       offset, static_cast<int>(t));
    if (point_count < 1)
      throw ParseError("frame must contain at least one point", offset,
                       static_cast<int>(t));

    Frame& frame = video.frames[static_cast<std::size_t>(t)];
    frame.points.resize(static_cast<std::size_t>(point_count));
    for (long i = 0; i < point_count; ++i) {
      if (!cursor.next_line(line, offset))
        throw ParseError("truncated frame: expected " + std::to_string(point_count) +
                             " points, got " + std::to_string(i),
                         offset, static_cast<int>(t));
      auto values = split_fields(line);
      if (values.size() != static_cast<std::size_t>(3 + feature_dim))
        throw ParseError("expected " + std::to_string(3 + feature_dim) +
                             " values per point line",
                         offset, static_cast<int>(t));
      Point4D& p = frame.points[static_cast<std::size_t>(i)];
      p.frame_index = static_cast<int>(t);
      for (int c = 0; c < 3; ++c) {
        p.position[c] = parse_double(values[static_cast<std::size_t>(c)], offset,
                                     static_cast<int>(t));
        if (!std::isfinite(p.position[c]))
          throw ParseError("non-finite coordinate", offset, static_cast<int>(t));
      }
      p.feature.resize(static_cast<std::size_t>(feature_dim));
      for (long c = 0; c < feature_dim; ++c) {
        p.feature[static_cast<std::size_t>(c)] =
            parse_double(values[static_cast<std::size_t>(3 + c)], offset,
                         static_cast<int>(t));
        if (!std::isfinite(p.feature[static_cast<std::size_t>(c)]))
          throw ParseError("non-finite feature value", offset, static_cast<int>(t));
      }
    }
  }
  if (cursor.next_line(line, offset))
    throw ParseError("trailing content after last frame", offset);
  return video;
}

struct BinaryCursor {
  const std::string& content;
  std::size_t pos = 0;

  void require(std::size_t bytes, const char* what, int frame) const {
    if (pos + bytes > content.size())
      throw ParseError(std::string("truncated file reading ") + what,
                       static_cast<std::int64_t>(pos), frame);
  }

  std::uint32_t read_u32(const char* what, int frame) {
    require(4, what, frame);
    std::uint32_t v = 0;
    std::memcpy(&v, content.data() + pos, 4);
    pos += 4;
    return v;
  }

  double read_f64(const char* what, int frame) {
    require(8, what, frame);
    double v = 0;
    std::memcpy(&v, content.data() + pos, 8);
    pos += 8;
    return v;
  }

  float read_f32(const char* what, int frame) {
    require(4, what, frame);
    float v = 0;
    std::memcpy(&v, content.data() + pos, 4);
    pos += 4;
    return v;
  }
};

PointCloudVideo parse_binary(const std::string& content) {
  BinaryCursor cursor{content, 4};  // magic already checked

  PointCloudVideo video;
  const std::uint32_t frame_count = cursor.read_u32("frame count", -1);
  video.frame_interval = cursor.read_f64("frame interval", -1);
  const std::uint32_t feature_dim = cursor.read_u32("feature dim", -1);
  if (!(video.frame_interval > 0.0) || !std::isfinite(video.frame_interval))
    throw ParseError("malformed header values", 4);
  if (frame_count > (1u << 24) || feature_dim > (1u << 16))
    throw ParseError("implausible header values", 4);
  video.feature_dim = static_cast<int>(feature_dim);
  video.frames.resize(frame_count);

  for (std::uint32_t t = 0; t < frame_count; ++t) {
    const std::int64_t frame_offset = static_cast<std::int64_t>(cursor.pos);
    const std::uint32_t frame_id = cursor.read_u32("frame id", static_cast<int>(t));
    const std::uint32_t point_count = cursor.read_u32("point count", static_cast<int>(t));
    if (frame_id != t)
      throw ParseError("frame indices must be consecutive", frame_offset,
                       static_cast<int>(t));
    if (point_count < 1)
      throw ParseError("frame must contain at least one point", frame_offset,
                       static_cast<int>(t));
    Frame& frame = video.frames[t];
    frame.points.resize(point_count);
    for (std::uint32_t i = 0; i < point_count; ++i) {
      Point4D& p = frame.points[i];
      p.frame_index = static_cast<int>(t);
      for (int c = 0; c < 3; ++c) {
        p.position[c] = static_cast<double>(cursor.read_f32("coordinate",
                                                            static_cast<int>(t)));
        if (!std::isfinite(p.position[c]))
          throw ParseError("non-finite coordinate",
                           static_cast<std::int64_t>(cursor.pos) - 4,
                           static_cast<int>(t));
      }
      p.feature.resize(feature_dim);
      for (std::uint32_t c = 0; c < feature_dim; ++c) {
        p.feature[c] = static_cast<double>(cursor.read_f32("feature",
                                                           static_cast<int>(t)));
        if (!std::isfinite(p.feature[c]))
          throw ParseError("non-finite feature value",
                           static_cast<std::int64_t>(cursor.pos) - 4,
                           static_cast<int>(t));
      }
    }
  }
  if (cursor.pos != content.size())
    throw ParseError("trailing content after last frame",
                     static_cast<std::int64_t>(cursor.pos));
  return video;
}

void append_number(std::string& out, double value) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", value);
  out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

PointCloudVideo read_video(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  if (content.size() >= 4 && content.compare(0, 4, "PCVB") == 0)
    return parse_binary(content);
  return parse_text(content);
}

void write_video(const PointCloudVideo& video, const std::filesystem::path& path,
                 VideoFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");

  if (format == VideoFormat::text) {
    std::string text;
    text.reserve(64 + video.total_points() * 32);
    text += "PCV1 " + std::to_string(video.frame_count()) + " ";
    append_number(text, video.frame_interval);
    text += " " + std::to_string(video.feature_dim) + "\n";
    for (int t = 0; t < video.frame_count(); ++t) {
      const Frame& frame = video.frames[static_cast<std::size_t>(t)];
      text += "FRAME " + std::to_string(t) + " " +
              std::to_string(frame.points.size()) + "\n";
      for (const Point4D& p : frame.points) {
        for (int c = 0; c < 3; ++c) {
          if (c) text += ' ';
          append_number(text, p.position[c]);
        }
        for (double f : p.feature) {
          text += ' ';
          append_number(text, f);
        }
        text += '\n';
      }
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
  } else {
    std::string bytes;
    bytes.reserve(16 + video.total_points() * (3 + video.feature_dim) * 4);
    const auto put_u32 = [&bytes](std::uint32_t v) {
      char buf[4];
      std::memcpy(buf, &v, 4);
      bytes.append(buf, 4);
    };
    const auto put_f64 = [&bytes](double v) {
      char buf[8];
      std::memcpy(buf, &v, 8);
      bytes.append(buf, 8);
    };
    const auto put_f32 = [&bytes](double v) {
      const float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      bytes.append(buf, 4);
    };
    bytes += "PCVB";
    put_u32(static_cast<std::uint32_t>(video.frame_count()));
    put_f64(video.frame_interval);
    put_u32(static_cast<std::uint32_t>(video.feature_dim));
    for (int t = 0; t < video.frame_count(); ++t) {
      const Frame& frame = video.frames[static_cast<std::size_t>(t)];
      put_u32(static_cast<std::uint32_t>(t));
      put_u32(static_cast<std::uint32_t>(frame.points.size()));
      for (const Point4D& p : frame.points) {
        for (int c = 0; c < 3; ++c) put_f32(p.position[c]);
        for (double f : p.feature) put_f32(f);
      }
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

FeatureSet FeatureSet::from_video(const PointCloudVideo& video) {
  if (video.feature_dim <= 0)
    throw std::domain_error("FeatureSet::from_video: video carries no features");
  FeatureSet set;
  set.dim_ = video.feature_dim;
  set.frames_.reserve(video.frames.size());
  for (const Frame& frame : video.frames) {
    std::vector<double> block;
    block.reserve(frame.points.size() * static_cast<std::size_t>(set.dim_));
    for (const Point4D& p : frame.points)
      block.insert(block.end(), p.feature.begin(), p.feature.end());
    set.frames_.push_back(std::move(block));
  }
  return set;
}

FeatureSet FeatureSet::from_positions(const PointCloudVideo& video) {
  FeatureSet set;
  set.dim_ = 3;
  set.frames_.reserve(video.frames.size());
  for (const Frame& frame : video.frames) {
    std::vector<double> block;
    block.reserve(frame.points.size() * 3);
    for (const Point4D& p : frame.points) {
      block.push_back(p.position.x());
      block.push_back(p.position.y());
      block.push_back(p.position.z());
    }
    set.frames_.push_back(std::move(block));
  }
  return set;
}

}  // namespace gats
