#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>

#include "mvp/error.hpp"
#include "mvp/eval/eval.hpp"
#include "mvp/render/render.hpp"
#include "mvp/util/files.hpp"
#include "mvp/util/hash.hpp"
#include "mvp/util/http.hpp"
#include "mvp/util/parallel.hpp"
#include "mvp/util/random.hpp"

namespace mvp::eval {

namespace fs = std::filesystem;

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json j{{"total_frames", total},
                   {"no_face_frames", no_face},
                   {"verified_frames", verified},
                   {"pct_frames_with_participant", pct_frames_with_participant},
                   {"pct_frames_no_face", pct_frames_no_face}};
  if (pct_face_frames_with_participant) {
    j["pct_face_frames_with_participant"] = *pct_face_frames_with_participant;
  } else {
    j["pct_face_frames_with_participant"] = "undefined";
  }
  return j;
}

VerificationReport face_frame_metrics(const std::vector<FrameVerification>& frames) {
  if (frames.empty()) throw Error(ErrorKind::InvalidArgument, "no frames to evaluate");
  VerificationReport r;
  r.total = frames.size();
  for (const auto& f : frames) {
    if (f.verified && !f.face_present) {
      throw Error(ErrorKind::Validation,
                  "frame " + std::to_string(f.frame_index) + " verified without a face");
    }
    if (!f.face_present) ++r.no_face;
    if (f.verified) ++r.verified;
  }
  const double total = static_cast<double>(r.total);
  r.pct_frames_with_participant = static_cast<double>(r.verified) / total * 100.0;
  r.pct_frames_no_face = static_cast<double>(r.no_face) / total * 100.0;
  if (r.no_face < r.total) {
    r.pct_face_frames_with_participant =
        static_cast<double>(r.verified) / static_cast<double>(r.total - r.no_face) * 100.0;
  }
  return r;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorKind::Domain, "embedding dimensions differ (" + std::to_string(a.size()) +
                                       " vs " + std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorKind::Domain, "zero-norm embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double character_similarity(std::span<const double> frame,
                            const std::vector<std::vector<double>>& references) {
  if (references.empty()) throw Error(ErrorKind::Domain, "no reference embeddings");
  double sum = 0.0;
  for (const auto& r : references) sum += cosine_similarity(frame, r);
  return sum / static_cast<double>(references.size());
}

double SimilarityTrack::mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : points) {
    if (p.similarity) {
      sum += *p.similarity;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double SimilarityTrack::variance() const {
  const double m = mean();
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : points) {
    if (p.similarity) {
      sum += (*p.similarity - m) * (*p.similarity - m);
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

nlohmann::json SimilarityTrack::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) {
    pts.push_back({{"t", p.t},
                   {"character_similarity",
                    p.similarity ? nlohmann::json(*p.similarity) : nlohmann::json(nullptr)},
                   {"gap", !p.similarity.has_value()}});
  }
  return {{"points", pts}, {"mean", mean()}, {"variance", variance()}};
}

std::string SimilarityTrack::to_csv() const {
  std::string out = "t,similarity\n";
  char buf[64];
  for (const auto& p : points) {
    if (p.similarity) {
      std::snprintf(buf, sizeof buf, "%.3f,%.9f\n", p.t, *p.similarity);
    } else {
      std::snprintf(buf, sizeof buf, "%.3f,\n", p.t);
    }
    out += buf;
  }
  return out;
}

MockEmbeddingClient::MockEmbeddingClient(std::size_t dim, bool constant)
    : dim_(dim), constant_(constant) {
  if (dim_ == 0) throw Error(ErrorKind::InvalidArgument, "embedding dim must be > 0");
}

std::vector<double> MockEmbeddingClient::embed(std::span<const std::uint8_t> image) {
  const std::uint64_t seed = constant_ ? 0x5EEDULL : util::stable_hash64(util::sha256_hex(image));
  return util::random_unit_vector(seed, dim_);
}

HttpEmbeddingClient::HttpEmbeddingClient(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {}

std::vector<double> HttpEmbeddingClient::embed(std::span<const std::uint8_t> image) {
  const auto reply = util::post_json(url_, {{"image_b64", util::base64_encode(image)}}, timeout_ms_);
  if (!reply.contains("embedding") || !reply["embedding"].is_array()) {
    throw Error(ErrorKind::Parse, "embedding reply has no \"embedding\" array");
  }
  return reply["embedding"].get<std::vector<double>>();
}

MockFaceVerifyClient::MockFaceVerifyClient(double no_face_rate, double unverified_rate)
    : no_face_rate_(no_face_rate), unverified_rate_(unverified_rate) {}

FaceCheck MockFaceVerifyClient::check(std::span<const std::uint8_t> frame,
                                      const std::vector<std::vector<std::uint8_t>>&) {
  util::Rng rng(util::stable_hash64(util::sha256_hex(frame)));
  FaceCheck c;
  c.face_present = rng.uniform() >= no_face_rate_;
  c.verified = c.face_present && rng.uniform() >= unverified_rate_;
  return c;
}

HttpFaceVerifyClient::HttpFaceVerifyClient(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {}

FaceCheck HttpFaceVerifyClient::check(std::span<const std::uint8_t> frame,
                                      const std::vector<std::vector<std::uint8_t>>& references) {
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& r : references) refs.push_back(util::base64_encode(r));
  const auto reply = util::post_json(
      url_, {{"frame_b64", util::base64_encode(frame)}, {"references_b64", refs}}, timeout_ms_);
  FaceCheck c;
  c.face_present = reply.value("face_present", false);
  c.verified = c.face_present && reply.value("verified", false);
  return c;
}

SimilarityTrack similarity_track(const std::vector<TimedImage>& frames,
                                 const std::vector<std::vector<double>>& reference_embeddings,
                                 EmbeddingClient& client, int workers) {
  SimilarityTrack track;
  track.points.resize(frames.size());
  util::parallel_for(frames.size(), workers, [&](std::size_t i) {
    track.points[i].t = frames[i].t;
    try {
      const auto e = client.embed(frames[i].bytes);
      track.points[i].similarity = character_similarity(e, reference_embeddings);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Domain) throw;
      // Transport or reply failures become gaps.
    }
  });
  return track;
}

TrackSummary summarize_tracks(const std::vector<SimilarityTrack>& tracks) {
  if (tracks.empty()) throw Error(ErrorKind::InvalidArgument, "no tracks to summarise");
  std::size_t len = 0;
  for (const auto& t : tracks) len = std::max(len, t.points.size());
  TrackSummary s;
  s.mean.resize(len);
  for (std::size_t k = 0; k < len; ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : tracks) {
      if (k < t.points.size()) {
        s.mean[k].t = t.points[k].t;
        if (t.points[k].similarity) {
          sum += *t.points[k].similarity;
          ++n;
        }
      }
    }
    if (n) s.mean[k].similarity = sum / static_cast<double>(n);
  }
  for (const auto& t : tracks) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < t.points.size(); ++k) {
      if (t.points[k].similarity && s.mean[k].similarity) {
        const double d = *t.points[k].similarity - *s.mean[k].similarity;
        d2 += d * d;
      }
    }
    s.deviation.push_back(std::sqrt(d2));
  }
  s.max_deviation = static_cast<std::size_t>(
      std::max_element(s.deviation.begin(), s.deviation.end()) - s.deviation.begin());
  s.min_deviation = static_cast<std::size_t>(
      std::min_element(s.deviation.begin(), s.deviation.end()) - s.deviation.begin());
  return s;
}

bool replication_flag(const SimilarityTrack& track, const ReplicationOptions& options) {
  const bool any = std::any_of(track.points.begin(), track.points.end(),
                               [](const SimilarityPoint& p) { return p.similarity.has_value(); });
  return any && track.variance() < options.max_variance && track.mean() > options.min_mean;
}

nlohmann::json EvalReport::to_json() const {
  return {{"job_id", job_id},
          {"reference_count", reference_count},
          {"verification", verification.to_json()},
          {"similarity", similarity.to_json()},
          {"replication_flag", replication},
          {"verification_cached", cached}};
}

EvalReport evaluate_job(const fs::path& job_dir, const fs::path& refs_dir, EvalClients clients,
                        int workers) {
  if (!fs::exists(job_dir / "manifest.json")) {
    throw Error(ErrorKind::NotFound, "job has no manifest (not Done?): " + job_dir.string());
  }
  if (!fs::is_directory(refs_dir)) {
    throw Error(ErrorKind::NotFound, "reference directory not found: " + refs_dir.string());
  }
  const auto manifest = render::FrameManifest::from_json(util::read_json(job_dir / "manifest.json"));
  if (manifest.frames.empty()) throw Error(ErrorKind::Validation, "manifest has no frames");

  std::vector<fs::path> ref_paths;
  for (const auto& e : fs::directory_iterator(refs_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") ref_paths.push_back(e.path());
  }
  std::sort(ref_paths.begin(), ref_paths.end());
  if (ref_paths.empty()) throw Error(ErrorKind::NotFound, "no .png references in " + refs_dir.string());
  std::vector<std::vector<std::uint8_t>> refs;
  std::string ref_chain;
  for (const auto& p : ref_paths) {
    refs.push_back(util::read_bytes(p));
    ref_chain += util::sha256_hex(refs.back()) + "\n";
  }
  const std::string refs_digest = util::sha256_hex(ref_chain);

  EvalReport report;
  report.job_id = manifest.job_id;
  report.reference_count = refs.size();

  const fs::path eval_dir = job_dir / "eval";
  fs::create_directories(eval_dir);
  const fs::path cache = eval_dir / "verification.json";
  std::vector<FrameVerification> results;
  if (fs::exists(cache)) {
    const auto doc = util::read_json(cache);
    if (doc.value("refs_digest", "") == refs_digest &&
        doc.value("frames_digest", "") == manifest.digest) {
      for (const auto& r : doc.at("results")) {
        results.push_back({r.at("frame").get<std::size_t>(), r.at("face_present").get<bool>(),
                           r.at("verified").get<bool>()});
      }
      report.cached = true;
    }
  }
  if (!report.cached) {
    results.resize(manifest.frames.size());
    util::parallel_for(manifest.frames.size(), workers, [&](std::size_t i) {
      const auto bytes = util::read_bytes(job_dir / manifest.frames[i].image);
      const auto c = clients.face.check(bytes, refs);
      results[i] = {manifest.frames[i].index, c.face_present, c.verified};
    });
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : results) {
      rs.push_back({{"frame", r.frame_index}, {"face_present", r.face_present}, {"verified", r.verified}});
    }
    util::write_json(cache, {{"refs_digest", refs_digest},
                             {"frames_digest", manifest.digest},
                             {"results", rs}});
  }
  report.verification = face_frame_metrics(results);

  std::vector<std::vector<double>> ref_embeddings;
  for (const auto& r : refs) ref_embeddings.push_back(clients.embedding.embed(r));

  // One frame per second of video: the first frame at or after each second.
  std::vector<TimedImage> sampled;
  const double duration = static_cast<double>(manifest.frames.size()) / manifest.fps;
  for (std::size_t s = 0; static_cast<double>(s) < duration; ++s) {
    const auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(s) * manifest.fps - 1e-9));
    if (k >= manifest.frames.size()) break;
    sampled.push_back({static_cast<double>(s), util::read_bytes(job_dir / manifest.frames[k].image)});
  }
  report.similarity = similarity_track(sampled, ref_embeddings, clients.embedding, workers);
  report.replication = replication_flag(report.similarity);

  util::write_json(eval_dir / "report.json", report.to_json());
  util::write_atomic(eval_dir / "similarity.csv", report.similarity.to_csv());
  return report;
}

}  // namespace mvp::eval
