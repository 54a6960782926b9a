// Writes the deterministic fixture set: synthetic songs, transcripts, job
// configs and golden CHARCHA traces.
//
//   make_fixtures <out_dir>

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "mvp/audio/wav.hpp"
#include "mvp/charcha/charcha.hpp"
#include "mvp/util/files.hpp"
#include "mvp/util/random.hpp"
#include "synthetic_face.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvp;
using testing::AttemptPlan;
using testing::TracePlan;

namespace {

// 120 BPM clicks over a pad that changes register and loudness every
// quarter, so both the beat tracker and the emotion tracker have work.
audio::AudioBuffer song(double seconds, std::uint64_t seed) {
  audio::AudioBuffer a;
  a.sample_rate = 22050;
  const auto n = static_cast<std::size_t>(seconds * a.sample_rate);
  a.samples.resize(n);
  util::Rng rng(seed);
  const double section = seconds / 4.0;
  const double pads[4][3] = {{110.0, 138.6, 164.8}, {440.0, 554.4, 659.3}, {220.0, 277.2, 329.6}, {98.0, 123.5, 146.8}};
  const double gains[4] = {0.08, 0.30, 0.10, 0.28};
  const double beat = 0.5;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / a.sample_rate;
    const auto s = std::min<std::size_t>(3, static_cast<std::size_t>(t / section));
    double v = 0.0;
    for (double f : pads[s]) v += std::sin(2.0 * std::numbers::pi * f * t);
    v *= gains[s] / 3.0;
    const double since = std::fmod(t, beat);
    if (since < 0.03) v += 0.6 * std::exp(-since / 0.006) * std::sin(2.0 * std::numbers::pi * 1000.0 * t);
    v += 0.01 * rng.normal();
    a.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return a;
}

json transcript(double seconds) {
  const char* lines[] = {"walking through the empty city", "lights are burning in the sky",
                         "we were dancing on the wire", "hold on to the morning fire"};
  const double q = seconds / 4.0;
  json segs = json::array();
  for (int i = 0; i < 4; ++i) {
    segs.push_back({{"start", i * q + 0.2 * q}, {"end", (i + 1) * q - 0.1 * q}, {"text", lines[i]}});
  }
  return {{"segments", segs}};
}

void trace_file(const fs::path& path, const TracePlan& plan) {
  std::ofstream out(path);
  charcha::write_trace(out, testing::make_trace(plan));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <out_dir>\n";
    return 2;
  }
  try {
    const fs::path out = argv[1];
    fs::create_directories(out);

    for (const double secs : {30.0, 10.0}) {
      const std::string stem = "song" + std::to_string(static_cast<int>(secs));
      audio::write_wav(out / (stem + ".wav"), song(secs, 17));
      util::write_json(out / (stem + ".json"), transcript(secs));
      util::write_json(out / ("job" + std::to_string(static_cast<int>(secs)) + ".json"),
                       {{"audio", stem + ".wav"}, {"transcript", stem + ".json"}, {"fps", 12}, {"master_seed", 7}});
    }
    audio::AudioBuffer silence;
    silence.samples.assign(22050 * 10, 0.0f);
    audio::write_wav(out / "silence.wav", silence);

    TracePlan pass;
    trace_file(out / "golden-pass.trace", pass);

    // Every action exactly at the threshold.
    TracePlan six;
    AttemptPlan at_six;
    at_six.seconds.fill(testing::first_seconds(6));
    six.attempts = {at_six};
    trace_file(out / "golden-score6.trace", six);

    // One action at 5/10 in both attempts: retry, then terminal failure.
    TracePlan five;
    AttemptPlan one_short;
    one_short.seconds[2] = testing::first_seconds(5);
    five.attempts = {one_short, one_short};
    trace_file(out / "golden-score5-fail.trace", five);

    // Fails once, passes on the retry.
    TracePlan retry;
    retry.attempts = {one_short, AttemptPlan{}};
    trace_file(out / "golden-retry-pass.trace", retry);

    // Ends halfway through the third action window.
    TracePlan truncated;
    truncated.truncate_ms = 2000 + 2 * 11000 + 5000 + 4500;
    trace_file(out / "golden-truncated.trace", truncated);
  } catch (const std::exception& e) {
    std::cerr << "make_fixtures: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
