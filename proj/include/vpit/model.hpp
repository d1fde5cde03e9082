#pragma once

#include <map>
#include <string>
#include <vector>

#include "vpit/sequencer.hpp"
#include "vpit/tensor.hpp"

namespace vpit {

struct ModelConfig {
    size_t d_model = 128;
    size_t layers = 4;
    size_t heads = 4;
    size_t d_v = kVisualDim;
    size_t vocab_size = 80;
    size_t m = kDefaultTokens;
    size_t max_len = 512;

    void validate() const;
};

struct LayerParams {
    Tensor attn_gain;        // [d]
    Tensor wq, wk, wv, wo;   // [d,d]
    Tensor bq, bk, bv, bo;   // [d]
    Tensor ffn_gain;         // [d]
    Tensor w1, b1;           // [d,4d],[4d]
    Tensor w2, b2;           // [4d,d],[d]
};

// Parameter group names: "embedding", "adapter", "trunk", "lang_head",
// "vision_head". Frozen groups never receive optimizer updates and their
// leaves do not require grad.
struct ModelParams {
    ModelConfig config;
    Tensor tok_embed;                 // [V, d]
    Tensor pos_embed;                 // [max_len, d]
    Tensor adapter_w1, adapter_b1;    // [d_v, d], [d]
    Tensor adapter_w2, adapter_b2;    // [d, d], [d]
    std::vector<LayerParams> trunk;
    Tensor final_gain;                // [d]
    Tensor lang_w, lang_b;            // [d, V], [V]
    Tensor vis_w, vis_b;              // [d, d_v], [d_v]
    std::map<std::string, bool> frozen;  // group -> frozen flag

    static ModelParams init(const ModelConfig& cfg, uint64_t seed);

    struct Named {
        std::string group;
        std::string name;
        Tensor tensor;
    };
    std::vector<Named> named_tensors() const;  // stable order
    std::vector<Tensor> trainable() const;     // tensors of unfrozen groups
    void set_frozen(const std::string& group, bool value);
    bool is_frozen(const std::string& group) const;
    uint64_t group_hash(const std::string& group) const;
    uint64_t weights_hash() const;
};

// Two affine layers with a GELU between, applied rowwise: [m, d_v] -> [m, d].
Tensor adapter_project(const Tensor& tokens, const ModelParams& params);

// Forward over one sequence (its real length; pads excluded). Both heads
// are evaluated at every position; the loss selects per next-position kind.
struct SeqOutput {
    Tensor text_logits;  // [T, V]
    Tensor visual_pred;  // [T, d_v]
};
SeqOutput forward_seq(const MMSequence& seq, size_t len, const ModelParams& params);

// Batched forward: one SeqOutput per sequence, rows = original length.
std::vector<SeqOutput> forward(const Batch& batch, const ModelParams& params);

struct GenConfig {
    size_t max_new = 128;
    double temperature = 0.0;  // 0 = argmax
    size_t m_max = kDefaultTokens;
    uint64_t seed = 0;
};

// Autoregressive mixed-modality decoding: text mode samples the language
// head; emitting IMG_START switches to vision mode, where the vision head's
// output becomes the next input and the language head is consulted every
// step for IMG_END (forced after m_max vectors). Stops at EOS or max_new.
MMSequence generate(const MMSequence& prompt, const ModelParams& params, const GenConfig& cfg);

// Checkpoints: versioned little-endian binary; save/load is bit-exact.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace vpit
