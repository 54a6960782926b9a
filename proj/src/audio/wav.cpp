#include "mvp/audio/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mvp/error.hpp"
#include "mvp/util/files.hpp"

namespace mvp::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t le32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint16_t le16(const std::uint8_t* p) { return std::uint16_t(p[0] | p[1] << 8); }

struct ParsedWav {
  WavInfo info;
  std::size_t data_offset = 0;
  std::size_t data_size = 0;
};

ParsedWav parse_header(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  auto fail = [&](const std::string& why) {
    return Error(ErrorKind::Parse, name + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  ParsedWav out;
  bool have_fmt = false;
  std::uint16_t format = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::size_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw fail("truncated fmt chunk");
      format = le16(bytes.data() + body);
      out.info.channels = le16(bytes.data() + body + 2);
      out.info.sample_rate = static_cast<int>(le32(bytes.data() + body + 4));
      out.info.bits_per_sample = le16(bytes.data() + body + 14);
      if (format == kFormatExtensible && size >= 26) {
        format = le16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      out.data_offset = body;
      out.data_size = std::min(size, bytes.size() - body);
      break;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt || out.data_offset == 0) throw fail("missing fmt or data chunk");
  if (format != kFormatPcm && format != kFormatFloat) {
    throw fail("unsupported sample format " + std::to_string(format));
  }
  out.info.is_float = format == kFormatFloat;
  const int bits = out.info.bits_per_sample;
  const bool supported = out.info.is_float ? bits == 32 : (bits == 16 || bits == 24 || bits == 32);
  if (!supported) throw fail("unsupported bit depth " + std::to_string(bits));
  if (out.info.channels <= 0 || out.info.sample_rate <= 0) throw fail("invalid fmt chunk");
  const std::size_t frame_bytes = static_cast<std::size_t>(out.info.channels) * (bits / 8);
  out.info.frames = out.data_size / frame_bytes;
  return out;
}

float decode_sample(const std::uint8_t* p, const WavInfo& info) {
  if (info.is_float) {
    float f;
    std::uint32_t u = le32(p);
    std::memcpy(&f, &u, sizeof f);
    return f;
  }
  switch (info.bits_per_sample) {
    case 16:
      return static_cast<float>(static_cast<std::int16_t>(le16(p))) / 32768.0f;
    case 24: {
      std::int32_t v = std::int32_t(p[0]) | std::int32_t(p[1]) << 8 | std::int32_t(p[2]) << 16;
      if (v & 0x800000) v |= ~0xFFFFFF;
      return static_cast<float>(v) / 8388608.0f;
    }
    default:
      return static_cast<float>(static_cast<double>(static_cast<std::int32_t>(le32(p))) /
                                2147483648.0);
  }
}

}  // namespace

void validate(const AudioBuffer& audio) {
  if (audio.sample_rate <= 0) throw Error(ErrorKind::InvalidArgument, "sample_rate must be > 0");
  for (float s : audio.samples) {
    if (!std::isfinite(s)) throw Error(ErrorKind::InvalidArgument, "non-finite audio sample");
  }
}

WavInfo probe_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  // Header chunks in ordinary files sit well within the first 64 KiB.
  std::vector<std::uint8_t> head(65536);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  in.clear();
  in.seekg(0, std::ios::end);
  const auto total = static_cast<std::size_t>(in.tellg());
  ParsedWav parsed = parse_header(head, path.string());
  const std::size_t declared = le32(head.data() + parsed.data_offset - 4);
  const std::size_t available = total - parsed.data_offset;
  const std::size_t frame_bytes =
      static_cast<std::size_t>(parsed.info.channels) * (parsed.info.bits_per_sample / 8);
  parsed.info.frames = std::min(declared, available) / frame_bytes;
  return parsed.info;
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  const auto bytes = util::read_bytes(path);
  const ParsedWav parsed = parse_header(bytes, path.string());
  const WavInfo& info = parsed.info;
  const std::size_t sample_bytes = static_cast<std::size_t>(info.bits_per_sample / 8);
  AudioBuffer audio;
  audio.sample_rate = info.sample_rate;
  audio.samples.resize(info.frames);
  const std::uint8_t* data = bytes.data() + parsed.data_offset;
  for (std::size_t f = 0; f < info.frames; ++f) {
    double acc = 0.0;
    for (int c = 0; c < info.channels; ++c) {
      acc += decode_sample(data + (f * info.channels + c) * sample_bytes, info);
    }
    audio.samples[f] = std::clamp(static_cast<float>(acc / info.channels), -1.0f, 1.0f);
  }
  validate(audio);
  return audio;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  const std::uint32_t data_size = static_cast<std::uint32_t>(audio.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
  tag("RIFF");
  put32(36 + data_size);
  tag("WAVE");
  tag("fmt ");
  put32(16);
  put16(kFormatPcm);
  put16(1);
  put32(static_cast<std::uint32_t>(audio.sample_rate));
  put32(static_cast<std::uint32_t>(audio.sample_rate) * 2);
  put16(2);
  put16(16);
  tag("data");
  put32(data_size);
  for (float s : audio.samples) {
    const double scaled = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  util::write_atomic(path, out);
}

AudioBuffer resample(const AudioBuffer& audio, int target_rate) {
  if (target_rate <= 0) throw Error(ErrorKind::InvalidArgument, "target rate must be > 0");
  if (audio.sample_rate == target_rate || audio.samples.empty()) {
    AudioBuffer copy = audio;
    copy.sample_rate = target_rate;
    return copy;
  }
  const double ratio = static_cast<double>(audio.sample_rate) / target_rate;
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(audio.samples.size()) / ratio));
  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  const std::size_t last = audio.samples.size() - 1;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double src = static_cast<double>(i) * ratio;
    const auto i0 = std::min(static_cast<std::size_t>(src), last);
    const std::size_t i1 = std::min(i0 + 1, last);
    const double frac = src - static_cast<double>(i0);
    out.samples[i] = static_cast<float>((1.0 - frac) * audio.samples[i0] + frac * audio.samples[i1]);
  }
  return out;
}

AudioBuffer load_for_analysis(const std::filesystem::path& path) {
  return resample(read_wav(path), kSampleRate);
}

}  // namespace mvp::audio
