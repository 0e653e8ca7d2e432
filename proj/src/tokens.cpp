#include "fptt/tokens.hpp"

#include <string>

#include "fptt/errors.hpp"

namespace fptt {

std::vector<FrameTokens> number_frames(const std::vector<std::vector<int>>& ids) {
  std::vector<FrameTokens> out;
  out.reserve(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) out.push_back({ids[t], t + 1});
  return out;
}

std::vector<FrameTokens> first_frames(const TokenVideo& video, std::size_t n) {
  if (n > video.frames.size())
    throw InputError("first_frames: asked for " + std::to_string(n) + " of " + std::to_string(video.frames.size()));
  std::vector<FrameTokens> out(video.frames.begin(), video.frames.begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t t = 0; t < n; ++t) out[t].index = t + 1;
  return out;
}

TokenVideo tokenize_video(const Tokenizer& tok, const physics::VideoSample& video) {
  TokenVideo out;
  out.label = video.label;
  for (std::size_t t = 0; t < video.frames; ++t) out.frames.push_back({tok.tokenize(video.frame(t)), t + 1});
  return out;
}

std::vector<TokenVideo> tokenize_videos(const Tokenizer& tok, const std::vector<physics::VideoSample>& videos) {
  std::vector<TokenVideo> out(videos.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < videos.size(); ++i) out[i] = tokenize_video(tok, videos[i]);
  return out;
}

void check_ids(const FrameTokens& frame, std::size_t length, std::size_t vocab, const char* where) {
  if (frame.ids.size() != length)
    throw DimensionError(std::string(where) + ": expected " + std::to_string(length) + " tokens, got " +
                         std::to_string(frame.ids.size()));
  for (int id : frame.ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw IndexError(std::string(where) + ": token id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
}

}  // namespace fptt
