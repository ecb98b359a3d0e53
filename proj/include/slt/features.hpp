#pragma once

#include <map>
#include <string>
#include <vector>

#include "slt/tensor.hpp"

namespace slt {

enum class CueChannel { Skeleton, Face, Hand };

// Per-frame feature stream for one cue channel. `detected[i]` is false for
// frames where the upstream detector failed; repair_missing_frames fills those.
struct CueFeatureSequence {
    Tensor frames;               // (m, d_feat)
    int valid_len = 0;           // rows beyond this are padding
    CueChannel channel = CueChannel::Skeleton;
    std::vector<bool> detected;  // size m; empty means all detected

    int frame_count() const { return frames.rows(); }
    int feature_dim() const { return frames.cols(); }
};

struct TextFeatureSequence {
    Tensor tokens;  // (l, d_feat)
    int valid_len = 0;
};

// Ordered so checkpoints serialize deterministically.
using ParamMap = std::map<std::string, Tensor>;

}  // namespace slt
