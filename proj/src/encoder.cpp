#include "vpit/encoder.hpp"

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

namespace vpit {

EncoderParams EncoderParams::make(uint64_t seed) {
    EncoderParams p;
    p.seed = seed;
    Rng rng(derive_seed(seed, "toy-vision-encoder"));
    double d = static_cast<double>(kVisualDim);
    p.patch_proj = Tensor::randn({kPatchDim, kVisualDim}, rng, 1.0 / std::sqrt(static_cast<double>(kPatchDim)));
    p.pos = Tensor::randn({kPatchCount, kVisualDim}, rng, 0.5);
    for (auto& b : p.blocks) {
        b.wq = Tensor::randn({kVisualDim, kVisualDim}, rng, 1.0 / std::sqrt(d));
        b.wk = Tensor::randn({kVisualDim, kVisualDim}, rng, 1.0 / std::sqrt(d));
        b.wv = Tensor::randn({kVisualDim, kVisualDim}, rng, 1.0 / std::sqrt(d));
        b.wo = Tensor::randn({kVisualDim, kVisualDim}, rng, 1.0 / std::sqrt(d));
        b.w1 = Tensor::randn({kVisualDim, 2 * kVisualDim}, rng, 1.0 / std::sqrt(d));
        b.w2 = Tensor::randn({2 * kVisualDim, kVisualDim}, rng, 1.0 / std::sqrt(2.0 * d));
    }
    return p;
}

uint64_t EncoderParams::weights_hash() const {
    uint64_t h = fnv1a(&seed, sizeof(seed));
    h = hash_doubles(patch_proj.data(), h);
    h = hash_doubles(pos.data(), h);
    for (const auto& b : blocks) {
        for (const Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) {
            h = hash_doubles(t->data(), h);
        }
    }
    return h;
}

VisualTokens encode(const Image& image, const EncoderParams& params) {
    // patchify: patch p covers cell (p/4, p%4); values ordered [c][py][px]
    std::vector<double> patches(kPatchCount * kPatchDim);
    for (size_t p = 0; p < kPatchCount; ++p) {
        int cy = static_cast<int>(p) / kGrid;
        int cx = static_cast<int>(p) % kGrid;
        size_t k = 0;
        for (int c = 0; c < 3; ++c)
            for (int py = 0; py < kCellPx; ++py)
                for (int px = 0; px < kCellPx; ++px)
                    patches[p * kPatchDim + k++] =
                        image.at(c, cy * kCellPx + py, cx * kCellPx + px);
    }
    Tensor x = add(matmul(Tensor::from_data({kPatchCount, kPatchDim}, std::move(patches)),
                          params.patch_proj),
                   params.pos);
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(kVisualDim));
    for (const auto& b : params.blocks) {
        Tensor q = matmul(x, b.wq);
        Tensor k = matmul(x, b.wk);
        Tensor v = matmul(x, b.wv);
        Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
        x = add(x, matmul(matmul(attn, v), b.wo));
        x = add(x, matmul(gelu(matmul(x, b.w1)), b.w2));
    }
    return rownorm_zm(x);
}

VisualTokens interpolate_tokens(const VisualTokens& tokens, size_t m) {
    size_t n = tokens.rows();
    size_t d = tokens.cols();
    if (n < 2 || m < 2) throw std::invalid_argument("interpolate_tokens: need n >= 2 and m >= 2");
    if (m == n) return Tensor::from_data(tokens.shape(), tokens.data());
    std::vector<double> out(m * d);
    const auto& in = tokens.data();
    for (size_t r = 0; r < m; ++r) {
        double pos = static_cast<double>(r) * static_cast<double>(n - 1) /
                     static_cast<double>(m - 1);
        size_t i0 = static_cast<size_t>(pos);
        if (i0 >= n - 1) i0 = n - 2;
        double f = pos - static_cast<double>(i0);
        const double* a = in.data() + i0 * d;
        const double* b = in.data() + (i0 + 1) * d;
        for (size_t j = 0; j < d; ++j) out[r * d + j] = (1.0 - f) * a[j] + f * b[j];
    }
    return Tensor::from_data({m, d}, std::move(out));
}

VisualTokens scene_tokens(const Scene& scene, const EncoderParams& params, size_t m) {
    struct Key {
        uint64_t seed, scene_key;
        size_t m;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        size_t operator()(const Key& k) const {
            uint64_t h = fnv1a(&k.seed, sizeof(k.seed));
            h = fnv1a(&k.scene_key, sizeof(k.scene_key), h);
            h = fnv1a(&k.m, sizeof(k.m), h);
            return static_cast<size_t>(h);
        }
    };
    static std::mutex mu;
    static std::unordered_map<Key, Tensor, KeyHash> cache;

    Key key{params.seed, scene.key(), m};
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    Tensor toks = interpolate_tokens(encode(render(scene), params), m);
    std::lock_guard<std::mutex> lock(mu);
    auto [it, inserted] = cache.emplace(key, toks);
    return it->second;
}

}  // namespace vpit
