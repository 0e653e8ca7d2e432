#pragma once

#include <cstdint>
#include <vector>

#include "fptt/dataset.hpp"
#include "fptt/tokenizer.hpp"

namespace fptt {

// Token ids of one frame plus its 1-based frame index.
struct FrameTokens {
  std::vector<int> ids;
  std::size_t index = 1;
};

struct TokenVideo {
  std::vector<FrameTokens> frames;
  physics::Label label = physics::Label::Failure;
};

// Frames numbered 1..T.
std::vector<FrameTokens> number_frames(const std::vector<std::vector<int>>& ids);

// The first n frames, renumbered from 1.
std::vector<FrameTokens> first_frames(const TokenVideo& video, std::size_t n);

TokenVideo tokenize_video(const Tokenizer& tok, const physics::VideoSample& video);
std::vector<TokenVideo> tokenize_videos(const Tokenizer& tok, const std::vector<physics::VideoSample>& videos);

// Throws IndexError unless every id is in [0, vocab).
void check_ids(const FrameTokens& frame, std::size_t length, std::size_t vocab, const char* where);

}  // namespace fptt
