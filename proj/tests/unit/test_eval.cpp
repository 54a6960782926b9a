#include <cmath>

#include <gtest/gtest.h>

#include "mvp/error.hpp"
#include "mvp/eval/eval.hpp"
#include "mvp/render/png.hpp"
#include "mvp/render/render.hpp"
#include "mvp/util/files.hpp"
#include "mvp/util/random.hpp"
#include "test_util.hpp"

using namespace mvp;
using namespace mvp::eval;
namespace fs = std::filesystem;

namespace {

std::vector<FrameVerification> frames(std::size_t total, std::size_t no_face, std::size_t verified) {
  std::vector<FrameVerification> out(total);
  for (std::size_t i = 0; i < total; ++i) {
    out[i].frame_index = i;
    out[i].face_present = i >= no_face;
    out[i].verified = i >= no_face && i < no_face + verified;
  }
  return out;
}

SimilarityTrack constant_track(double v, std::size_t n) {
  SimilarityTrack t;
  for (std::size_t i = 0; i < n; ++i) t.points.push_back({static_cast<double>(i), v});
  return t;
}

class FailingEmbedding final : public EmbeddingClient {
 public:
  explicit FailingEmbedding(std::size_t fail_every) : every_(fail_every) {}
  std::vector<double> embed(std::span<const std::uint8_t> image) override {
    if (!image.empty() && image[0] % every_ == 0) throw Error(ErrorKind::Unavailable, "embedding down");
    return {1.0, 0.0};
  }

 private:
  std::size_t every_;
};

class CountingFace final : public FaceVerifyClient {
 public:
  FaceCheck check(std::span<const std::uint8_t> frame, const std::vector<std::vector<std::uint8_t>>& refs) override {
    ++calls;
    return inner.check(frame, refs);
  }
  MockFaceVerifyClient inner;
  std::atomic<int> calls{0};
};

std::vector<std::uint8_t> solid_png(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  render::RgbImage img{8, 8, {}};
  for (int i = 0; i < 64; ++i) img.pixels.insert(img.pixels.end(), {r, g, b});
  return render::encode_png(img);
}

}  // namespace

TEST(FaceMetrics, PublishedRatesReconstruction) {
  const auto r = face_frame_metrics(frames(1000, 111, 810));
  EXPECT_NEAR(r.pct_frames_with_participant, 81.0, 1e-9);
  EXPECT_NEAR(r.pct_frames_no_face, 11.1, 1e-9);
  ASSERT_TRUE(r.pct_face_frames_with_participant);
  EXPECT_NEAR(*r.pct_face_frames_with_participant, 810.0 / 889.0 * 100.0, 1e-9);
  EXPECT_NEAR(std::round(*r.pct_face_frames_with_participant * 10) / 10, 91.1, 1e-9);
  EXPECT_LE(std::abs(*r.pct_face_frames_with_participant - 92.0), 1.0);
}

TEST(FaceMetrics, AllVerified) {
  const auto r = face_frame_metrics(frames(50, 0, 50));
  EXPECT_EQ(r.pct_frames_with_participant, 100.0);
  EXPECT_EQ(r.pct_frames_no_face, 0.0);
  EXPECT_EQ(r.pct_face_frames_with_participant, 100.0);
}

TEST(FaceMetrics, AllFacelessIsUndefined) {
  const auto r = face_frame_metrics(frames(20, 20, 0));
  EXPECT_EQ(r.pct_frames_with_participant, 0.0);
  EXPECT_EQ(r.pct_frames_no_face, 100.0);
  EXPECT_FALSE(r.pct_face_frames_with_participant);
  EXPECT_EQ(r.to_json()["pct_face_frames_with_participant"], "undefined");
}

TEST(FaceMetrics, Errors) {
  EXPECT_THROW(face_frame_metrics({}), Error);
  EXPECT_THROW(face_frame_metrics({{0, false, true}}), Error);
}

TEST(FaceMetrics, ConsistencyOverRandomInputs) {
  util::Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto total = 1 + rng.below(500);
    const auto no_face = rng.below(total + 1);
    const auto verified = rng.below(total - no_face + 1);
    const auto r = face_frame_metrics(frames(total, no_face, verified));
    EXPECT_LE(r.pct_frames_with_participant, 100.0 - r.pct_frames_no_face + 1e-9);
    if (r.pct_face_frames_with_participant) {
      EXPECT_GE(*r.pct_face_frames_with_participant, 0.0);
      EXPECT_LE(*r.pct_face_frames_with_participant, 100.0);
    }
  }
}

TEST(Similarity, IdenticalOrthogonalOpposite) {
  const std::vector<double> r{0.3, -0.4, 0.5};
  EXPECT_NEAR(character_similarity(r, {r, r, r}), 1.0, 1e-12);
  EXPECT_NEAR(character_similarity(std::vector<double>{1.0, 0.0}, {{0.0, 1.0}, {0.0, -2.0}}), 0.0, 1e-12);
  EXPECT_NEAR(character_similarity(r, {r, {-0.3, 0.4, -0.5}}), 0.0, 1e-12);
}

TEST(Similarity, ScaleInvariant) {
  util::Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    auto a = util::random_unit_vector(rng.next_u64(), 16);
    auto b = util::random_unit_vector(rng.next_u64(), 16);
    auto scaled = a;
    for (auto& x : scaled) x *= 7.5;
    EXPECT_NEAR(cosine_similarity(a, b), cosine_similarity(scaled, b), 1e-12);
  }
}

TEST(Similarity, DomainErrors) {
  EXPECT_THROW(cosine_similarity(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 0.0}), Error);
  EXPECT_THROW(cosine_similarity(std::vector<double>{1.0}, std::vector<double>{1.0, 0.0}), Error);
  EXPECT_THROW(character_similarity(std::vector<double>{1.0}, {}), Error);
}

TEST(Track, ConstantMockEmbeddingIsFlatAtOne) {
  MockEmbeddingClient client(32, true);
  std::vector<TimedImage> imgs;
  for (int i = 0; i < 60; ++i) imgs.push_back({static_cast<double>(i), {static_cast<std::uint8_t>(i), 1, 2}});
  const auto ref = client.embed(std::vector<std::uint8_t>{9});
  const auto t = similarity_track(imgs, {ref}, client, 4);
  ASSERT_EQ(t.points.size(), 60u);
  for (const auto& p : t.points) EXPECT_NEAR(*p.similarity, 1.0, 1e-12);
  EXPECT_TRUE(replication_flag(t));
}

TEST(Track, HashEmbeddingsAreStable) {
  MockEmbeddingClient client(64);
  const std::vector<std::uint8_t> a{1, 2, 3}, b{1, 2, 4};
  EXPECT_EQ(client.embed(a), client.embed(a));
  EXPECT_NE(client.embed(a), client.embed(b));
  double n = 0.0;
  for (double x : client.embed(a)) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
}

TEST(Track, ClientFailureLeavesGaps) {
  FailingEmbedding client(3);
  std::vector<TimedImage> imgs;
  for (int i = 0; i < 9; ++i) imgs.push_back({static_cast<double>(i), {static_cast<std::uint8_t>(i)}});
  const auto t = similarity_track(imgs, {{1.0, 0.0}}, client);
  ASSERT_EQ(t.points.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(t.points[i].similarity.has_value(), i % 3 != 0) << i;
  EXPECT_NEAR(t.mean(), 1.0, 1e-12);
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.rfind("t,similarity\n", 0), 0u);
  EXPECT_NE(csv.find("0.000,\n"), std::string::npos);
  EXPECT_TRUE(t.to_json()["points"][0]["character_similarity"].is_null());
}

TEST(Track, SummaryOfTwoConstantParticipants) {
  const auto s = summarize_tracks({constant_track(0.8, 10), constant_track(0.6, 10)});
  ASSERT_EQ(s.mean.size(), 10u);
  for (const auto& p : s.mean) EXPECT_NEAR(*p.similarity, 0.7, 1e-12);
  EXPECT_NEAR(s.deviation[0], std::sqrt(10 * 0.01), 1e-12);
  EXPECT_NE(s.max_deviation, s.min_deviation);
}

TEST(Track, SummaryPicksOutlier) {
  const auto s = summarize_tracks({constant_track(0.7, 5), constant_track(0.72, 5), constant_track(0.2, 5)});
  EXPECT_EQ(s.max_deviation, 2u);
  EXPECT_EQ(s.min_deviation, 0u);
}

TEST(Track, ReplicationFlagThresholds) {
  EXPECT_TRUE(replication_flag(constant_track(0.99, 30)));
  EXPECT_FALSE(replication_flag(constant_track(0.9, 30)));
  SimilarityTrack wobbly;
  for (int i = 0; i < 30; ++i) wobbly.points.push_back({double(i), i % 2 ? 1.0 : 0.96});
  EXPECT_FALSE(replication_flag(wobbly));  // variance 4e-4
  EXPECT_FALSE(replication_flag(SimilarityTrack{}));
}

TEST(MockFace, RatesRoughlyHonoured) {
  MockFaceVerifyClient face(0.2, 0.25);
  int no_face = 0, unverified = 0;
  for (int i = 0; i < 4000; ++i) {
    const std::vector<std::uint8_t> bytes{static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(i >> 8)};
    const auto c = face.check(bytes, {});
    EXPECT_TRUE(c.face_present || !c.verified);
    if (!c.face_present) ++no_face;
    else if (!c.verified) ++unverified;
    EXPECT_EQ(c.verified, face.check(bytes, {}).verified);
  }
  EXPECT_NEAR(no_face / 4000.0, 0.2, 0.03);
  EXPECT_NEAR(unverified / double(4000 - no_face), 0.25, 0.03);
}

TEST(EvaluateJob, ReportCacheAndErrors) {
  mvp::testing::TempDir dir;
  render::JobStore store(dir / "jobs");
  auto jc = render::JobConfig::from_json(util::read_json(mvp::testing::fixture("job10.json")),
                                         mvp::testing::fixture("").parent_path());
  const auto job = render::submit_job(store, jc, render::ModelRegistry::defaults());
  render::MockGenerator gen;
  timeline::MockLlmClient llm;
  render::run_job(store, job.id, {gen, llm, nullptr});

  fs::create_directories(dir / "refs");
  util::write_atomic(dir / "refs/a.png", solid_png(200, 10, 10));
  util::write_atomic(dir / "refs/b.png", solid_png(10, 200, 10));
  util::write_atomic(dir / "refs/notes.txt", std::string("ignored"));

  CountingFace face;
  MockEmbeddingClient emb;
  const auto report = evaluate_job(store.job_dir(job.id), dir / "refs", {face, emb});
  EXPECT_EQ(report.job_id, job.id);
  EXPECT_EQ(report.reference_count, 2u);
  EXPECT_EQ(report.verification.total, 120u);
  EXPECT_FALSE(report.cached);
  EXPECT_EQ(report.similarity.points.size(), 10u);  // 1 sample per second
  EXPECT_EQ(face.calls.load(), 120);
  EXPECT_TRUE(fs::exists(store.job_dir(job.id) / "eval/report.json"));
  EXPECT_TRUE(fs::exists(store.job_dir(job.id) / "eval/similarity.csv"));

  const auto again = evaluate_job(store.job_dir(job.id), dir / "refs", {face, emb});
  EXPECT_TRUE(again.cached);
  EXPECT_EQ(face.calls.load(), 120);
  EXPECT_EQ(again.verification.verified, report.verification.verified);

  util::write_atomic(dir / "refs/c.png", solid_png(1, 2, 3));
  EXPECT_FALSE(evaluate_job(store.job_dir(job.id), dir / "refs", {face, emb}).cached);

  fs::create_directories(dir / "empty");
  EXPECT_THROW(evaluate_job(store.job_dir(job.id), dir / "empty", {face, emb}), Error);
  EXPECT_THROW(evaluate_job(dir / "nope", dir / "refs", {face, emb}), Error);
}
