#include <algorithm>
#include <limits>
#include <cctype>
#include <cmath>
#include <string>

#include "mvp/error.hpp"
#include "mvp/timeline/timeline.hpp"
#include "mvp/util/files.hpp"

namespace mvp::timeline {

namespace {

constexpr double kEps = 1e-9;

std::string trim(const std::string& s) {
  auto first = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto last = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); });
  if (first >= last.base()) return {};
  return std::string(first, last.base());
}

std::string join_indices(const std::vector<std::size_t>& idx) {
  std::string out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(idx[i]);
  }
  return out;
}

}  // namespace

TranscriptResult parse_transcript(const nlohmann::json& document) {
  const nlohmann::json* segments = &document;
  if (document.is_object()) {
    if (!document.contains("segments")) {
      throw Error(ErrorKind::Parse, "transcript: missing \"segments\" array");
    }
    segments = &document["segments"];
  }
  if (!segments->is_array()) throw Error(ErrorKind::Parse, "transcript: segments must be an array");

  struct Raw {
    std::size_t index;
    LyricEvent event;
  };
  std::vector<Raw> kept;
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < segments->size(); ++i) {
    const auto& seg = (*segments)[i];
    double start, end;
    std::string text;
    try {
      start = seg.at("start").get<double>();
      end = seg.at("end").get<double>();
      text = seg.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, "transcript segment " + std::to_string(i) + ": " + e.what());
    }
    text = trim(text);
    if (text.empty()) continue;
    const bool invalid = !std::isfinite(start) || !std::isfinite(end) || start < 0.0 ||
                         end <= start || (!kept.empty() && start <= kept.back().event.start);
    if (invalid) bad.push_back(i);
    kept.push_back({i, {start, end, std::move(text)}});
  }
  if (!bad.empty()) {
    throw Error(ErrorKind::Validation,
                "transcript has negative or non-monotonic timestamps at segment indices: " +
                    join_indices(bad));
  }

  TranscriptResult result;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    LyricEvent ev = kept[k].event;
    if (k + 1 < kept.size() && ev.end > kept[k + 1].event.start) {
      result.warnings.push_back("segment " + std::to_string(kept[k].index) + " overlaps segment " +
                                std::to_string(kept[k + 1].index) + "; end clipped from " +
                                std::to_string(ev.end) + " to " +
                                std::to_string(kept[k + 1].event.start));
      ev.end = kept[k + 1].event.start;
    }
    result.events.push_back(std::move(ev));
  }
  return result;
}

TranscriptResult load_transcript(const std::string& path) {
  return parse_transcript(util::read_json(path));
}

std::vector<double> raw_boundaries(const std::vector<LyricEvent>& lyrics,
                                   const std::vector<emotion::EmotionEvent>& emotions,
                                   double duration) {
  std::vector<double> b{0.0, duration};
  auto add = [&](double t) { b.push_back(std::clamp(t, 0.0, duration)); };
  for (const auto& l : lyrics) {
    add(l.start);
    add(l.end);
  }
  for (const auto& e : emotions) add(e.time);
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end(), [](double x, double y) { return y - x <= kEps; }),
          b.end());
  if (b.back() != duration) b.back() = duration;
  return b;
}

std::vector<MergedInterval> merge_events(const std::vector<LyricEvent>& lyrics,
                                         const std::vector<emotion::EmotionEvent>& emotions,
                                         const audio::BeatGrid& beats, double duration,
                                         const MergeOptions& options) {
  if (!(duration > 0.0)) throw Error(ErrorKind::InvalidArgument, "duration must be > 0");
  const std::vector<double> raw = raw_boundaries(lyrics, emotions, duration);

  // Label each elementary interval before snapping.
  std::vector<MergedInterval> elementary;
  for (std::size_t k = 0; k + 1 < raw.size(); ++k) {
    MergedInterval iv{raw[k], raw[k + 1], std::nullopt, Quadrant::Serene};
    double best_overlap = 0.0;
    for (const auto& l : lyrics) {
      const double overlap = std::min(iv.end, l.end) - std::max(iv.start, l.start);
      if (overlap > best_overlap + kEps) {
        best_overlap = overlap;
        iv.lyric = l.text;
      }
    }
    for (const auto& e : emotions) {
      if (e.time <= iv.start + kEps) iv.emotion = e.quadrant;
    }
    elementary.push_back(std::move(iv));
  }

  // Snap interior boundaries to the nearest beat within tolerance. Nearest-
  // beat mapping is monotone, so order is preserved.
  const auto& bt = beats.beat_times;
  std::vector<double> snapped = raw;
  for (std::size_t k = 1; k + 1 < snapped.size(); ++k) {
    if (bt.empty()) break;
    const double t = raw[k];
    auto it = std::lower_bound(bt.begin(), bt.end(), t);
    double best = std::numeric_limits<double>::infinity();
    if (it != bt.end()) best = *it;
    if (it != bt.begin() && t - *std::prev(it) <= best - t) best = *std::prev(it);
    if (std::abs(best - t) <= options.snap_tolerance + kEps) {
      snapped[k] = std::clamp(best, 0.0, duration);
    }
  }

  std::vector<MergedInterval> out;
  for (std::size_t k = 0; k < elementary.size(); ++k) {
    if (snapped[k + 1] - snapped[k] <= kEps) continue;  // collapsed by snapping
    MergedInterval iv = elementary[k];
    iv.start = out.empty() ? 0.0 : out.back().end;
    iv.end = snapped[k + 1];
    out.push_back(std::move(iv));
  }
  if (out.empty()) {
    out.push_back({0.0, duration, std::nullopt, Quadrant::Serene});
  }
  out.back().end = duration;

  // Absorb short intervals into their predecessor (the first into its successor).
  std::vector<MergedInterval> merged;
  for (auto& iv : out) {
    const bool short_iv = iv.end - iv.start < options.min_segment - kEps;
    if (short_iv && !merged.empty()) {
      merged.back().end = iv.end;
    } else {
      merged.push_back(std::move(iv));
    }
  }
  if (merged.size() > 1 && merged[0].end - merged[0].start < options.min_segment - kEps) {
    merged[1].start = 0.0;
    merged.erase(merged.begin());
  }
  return merged;
}

}  // namespace mvp::timeline
