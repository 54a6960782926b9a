#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mvp::eval {

struct FrameVerification {
  std::size_t frame_index = 0;
  bool face_present = false;
  bool verified = false;  // participant's face matched; implies face_present
};

struct VerificationReport {
  std::size_t total = 0;
  std::size_t no_face = 0;
  std::size_t verified = 0;
  double pct_frames_with_participant = 0.0;
  double pct_frames_no_face = 0.0;
  // verified / (total - no_face) * 100; nullopt when no frame has a face.
  std::optional<double> pct_face_frames_with_participant;

  // The undefined metric is written as the string "undefined".
  nlohmann::json to_json() const;
};

// Throws InvalidArgument on an empty list, Validation when a frame is
// verified without a face.
VerificationReport face_frame_metrics(const std::vector<FrameVerification>& frames);

// Throws Domain on zero-norm vectors or mismatched dimensions.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
// Mean cosine similarity of the frame against each reference.
double character_similarity(std::span<const double> frame,
                            const std::vector<std::vector<double>>& references);

struct SimilarityPoint {
  double t = 0.0;
  std::optional<double> similarity;  // nullopt marks a gap (client failure)
};

struct SimilarityTrack {
  std::vector<SimilarityPoint> points;

  double mean() const;      // over defined points
  double variance() const;  // population variance over defined points
  nlohmann::json to_json() const;
  std::string to_csv() const;  // "t,similarity" with an empty field for gaps
};

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  virtual std::vector<double> embed(std::span<const std::uint8_t> image) = 0;
};

// Unit vector seeded by a hash of the image bytes; `constant` returns the
// same vector for every input.
class MockEmbeddingClient final : public EmbeddingClient {
 public:
  explicit MockEmbeddingClient(std::size_t dim = 64, bool constant = false);
  std::vector<double> embed(std::span<const std::uint8_t> image) override;

 private:
  std::size_t dim_;
  bool constant_;
};

// POST {"image_b64"} -> {"embedding": [...]}
class HttpEmbeddingClient final : public EmbeddingClient {
 public:
  HttpEmbeddingClient(std::string url, int timeout_ms);
  std::vector<double> embed(std::span<const std::uint8_t> image) override;

 private:
  std::string url_;
  int timeout_ms_;
};

struct FaceCheck {
  bool face_present = false;
  bool verified = false;
};

// Face detection and verification against the reference set in one call.
class FaceVerifyClient {
 public:
  virtual ~FaceVerifyClient() = default;
  virtual FaceCheck check(std::span<const std::uint8_t> frame,
                          const std::vector<std::vector<std::uint8_t>>& references) = 0;
};

// Deterministic per frame bytes: about `no_face_rate` of frames report no
// face and `unverified_rate` of the rest fail verification.
class MockFaceVerifyClient final : public FaceVerifyClient {
 public:
  explicit MockFaceVerifyClient(double no_face_rate = 0.1, double unverified_rate = 0.1);
  FaceCheck check(std::span<const std::uint8_t> frame,
                  const std::vector<std::vector<std::uint8_t>>& references) override;

 private:
  double no_face_rate_;
  double unverified_rate_;
};

// POST {"frame_b64", "references_b64": [...]} -> {"face_present", "verified"}
class HttpFaceVerifyClient final : public FaceVerifyClient {
 public:
  HttpFaceVerifyClient(std::string url, int timeout_ms);
  FaceCheck check(std::span<const std::uint8_t> frame,
                  const std::vector<std::vector<std::uint8_t>>& references) override;

 private:
  std::string url_;
  int timeout_ms_;
};

struct TimedImage {
  double t = 0.0;
  std::vector<std::uint8_t> bytes;
};

// One point per image. A failing embedding call leaves a gap instead of
// aborting the track.
SimilarityTrack similarity_track(const std::vector<TimedImage>& frames,
                                 const std::vector<std::vector<double>>& reference_embeddings,
                                 EmbeddingClient& client, int workers = 2);

struct TrackSummary {
  std::vector<SimilarityPoint> mean;  // per second across participants
  std::vector<double> deviation;      // L2 distance of each track from the mean
  std::size_t max_deviation = 0;      // index into the input tracks
  std::size_t min_deviation = 0;
};

// Tracks are aligned by position. Seconds where a track has a gap are left
// out of its deviation and of the mean at that second.
TrackSummary summarize_tracks(const std::vector<SimilarityTrack>& tracks);

struct ReplicationOptions {
  double max_variance = 1e-4;
  double min_mean = 0.98;
};

// A near-constant, near-perfect similarity track suggests the generator is
// reproducing a reference image rather than rendering a new scene.
bool replication_flag(const SimilarityTrack& track, const ReplicationOptions& options = {});

struct EvalClients {
  FaceVerifyClient& face;
  EmbeddingClient& embedding;
};

struct EvalReport {
  std::string job_id;
  std::size_t reference_count = 0;
  VerificationReport verification;
  SimilarityTrack similarity;
  bool replication = false;
  bool cached = false;  // verification read from the cache

  nlohmann::json to_json() const;
};

// Evaluates a finished job's frames against the *.png references in
// refs_dir. Verification results are cached in <job_dir>/eval/ keyed by the
// reference set digest; the report and a CSV plot series are written there
// too.
EvalReport evaluate_job(const std::filesystem::path& job_dir,
                        const std::filesystem::path& refs_dir, EvalClients clients,
                        int workers = 2);

}  // namespace mvp::eval
