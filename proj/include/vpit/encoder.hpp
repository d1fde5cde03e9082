#pragma once

#include "vpit/scene.hpp"
#include "vpit/tensor.hpp"

namespace vpit {

// Frozen stand-in for a pretrained vision encoder: patchify -> linear
// projection (+ frozen positional offsets) -> two frozen attention blocks
// -> per-token zero-mean/unit-variance normalization. All weights come
// from a fixed seed and never receive gradients.

constexpr size_t kVisualDim = 32;     // d_v
constexpr size_t kPatchCount = 16;    // 4x4 patches of 4x4 px
constexpr size_t kPatchDim = 48;      // 4*4 px * 3 channels
constexpr size_t kDefaultTokens = 16; // desk-scale m (m = 64 supported via config)

using VisualTokens = Tensor;  // [n, kVisualDim]

struct EncoderBlock {
    Tensor wq, wk, wv, wo;  // [d_v, d_v]
    Tensor w1, w2;          // [d_v, 2*d_v], [2*d_v, d_v]
};

struct EncoderParams {
    uint64_t seed = 0;
    Tensor patch_proj;  // [kPatchDim, d_v]
    Tensor pos;         // [kPatchCount, d_v] frozen positional offsets
    EncoderBlock blocks[2];

    static EncoderParams make(uint64_t seed);
    uint64_t weights_hash() const;
};

VisualTokens encode(const Image& image, const EncoderParams& params);

// Per-channel 1-D linear interpolation along the token axis, endpoints
// aligned. m == n returns a bit-equal copy.
VisualTokens interpolate_tokens(const VisualTokens& tokens, size_t m);

// encode(render(scene)) with interpolation to m tokens, memoized by scene
// key (the encoder is frozen, so the cache is sound for a fixed params).
VisualTokens scene_tokens(const Scene& scene, const EncoderParams& params, size_t m);

}  // namespace vpit
