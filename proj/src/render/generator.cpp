#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

#include "mvp/error.hpp"
#include "mvp/render/png.hpp"
#include "mvp/render/render.hpp"
#include "mvp/util/hash.hpp"
#include "mvp/util/http.hpp"
#include "mvp/util/random.hpp"

namespace mvp::render {

MockGenerator::MockGenerator(MockGeneratorOptions options) : options_(options) {
  if (options_.latent_dim == 0) throw Error(ErrorKind::InvalidArgument, "latent_dim must be > 0");
  if (options_.image_size < 8) throw Error(ErrorKind::InvalidArgument, "image_size must be >= 8");
}

interp::LatentVector MockGenerator::keyframe(const KeyframeRequest& request) {
  // Unit separator keeps ("ab", "c") and ("a", "bc") apart.
  std::string key = request.prompt;
  key += '\x1f';
  key += std::to_string(request.seed);
  key += '\x1f';
  key += request.checkpoint;
  key += '\x1f';
  key += request.lora ? request.lora->id : std::string{};
  return {util::random_unit_vector(util::stable_hash64(key), options_.latent_dim)};
}

std::vector<std::uint8_t> MockGenerator::decode(const interp::LatentVector& latent) {
  if (latent.values.empty()) throw Error(ErrorKind::InvalidArgument, "empty latent");
  if (options_.decode_delay_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(options_.decode_delay_ms));
  }
  std::vector<std::uint8_t> raw(latent.values.size() * sizeof(double));
  std::memcpy(raw.data(), latent.values.data(), raw.size());
  const std::string digest = util::sha256_hex(raw);

  // Components of a unit vector are ~1/sqrt(dim); rescale so colours spread.
  const double spread = std::sqrt(static_cast<double>(latent.dim())) * 64.0;
  auto channel = [&](std::size_t i) {
    const double v = i < latent.dim() ? latent.values[i] : 0.0;
    return static_cast<std::uint8_t>(std::clamp(128.0 + v * spread, 0.0, 255.0));
  };
  const std::uint8_t base[3] = {channel(0), channel(1), channel(2)};

  RgbImage img;
  img.width = img.height = options_.image_size;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  const int stripe = img.height / 8;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      std::uint8_t* px = &img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3];
      std::copy(base, base + 3, px);
      if (y < stripe) {
        // Top band: one cell per hex digit of the digest.
        const int cell = x * 32 / img.width;
        const int nibble = std::stoi(digest.substr(static_cast<std::size_t>(cell), 1), nullptr, 16);
        const std::uint8_t shade = static_cast<std::uint8_t>(nibble * 17);
        px[0] = px[1] = px[2] = shade;
      }
    }
  }
  return encode_png(img);
}

HttpGenerator::HttpGenerator(std::string url, int timeout_ms, GeneratorParams params)
    : url_(std::move(url)), timeout_ms_(timeout_ms), params_(std::move(params)) {
  if (url_.empty()) throw Error(ErrorKind::Config, "generator url is empty");
  while (!url_.empty() && url_.back() == '/') url_.pop_back();
  if (params_.space != "latent" && params_.space != "prompt_embedding") {
    throw Error(ErrorKind::Config, "generator space must be \"latent\" or \"prompt_embedding\"");
  }
}

interp::LatentVector HttpGenerator::keyframe(const KeyframeRequest& request) {
  nlohmann::json lora = nlohmann::json::array();
  if (request.lora) lora.push_back({{"name", request.lora->id}, {"weight", request.lora->scale}});
  const nlohmann::json body{{"prompt", request.prompt},
                            {"negative_prompt", request.negative_prompt},
                            {"seed", request.seed},
                            {"steps", params_.steps},
                            {"guidance", params_.guidance},
                            {"width", params_.width},
                            {"height", params_.height},
                            {"checkpoint", request.checkpoint},
                            {"lora", lora},
                            {"space", params_.space}};
  const auto reply = util::post_json(url_ + "/keyframe", body, timeout_ms_);
  if (!reply.contains("latent") || !reply["latent"].is_array() || reply["latent"].empty()) {
    throw Error(ErrorKind::Parse, "generator keyframe reply has no \"latent\" array");
  }
  try {
    return {reply["latent"].get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("generator latent: ") + e.what());
  }
}

std::vector<std::uint8_t> HttpGenerator::decode(const interp::LatentVector& latent) {
  const auto reply = util::post_json(url_ + "/decode",
                                     {{"latent", latent.values}, {"space", params_.space}},
                                     timeout_ms_);
  if (!reply.contains("image_b64") || !reply["image_b64"].is_string()) {
    throw Error(ErrorKind::Parse, "generator decode reply has no \"image_b64\" string");
  }
  return util::base64_decode(reply["image_b64"].get<std::string>());
}

}  // namespace mvp::render
