#pragma once

#include <span>
#include <string>
#include <vector>

#include "vpit/corpus.hpp"
#include "vpit/encoder.hpp"

namespace vpit {

// Char-level vocabulary over a fixed ASCII subset plus the special tokens
// that structure multimodal sequences. Specials are never produced by
// tokenizing content strings.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kImgStart = 3;
    static constexpr int kImgEnd = 4;
    static constexpr int kUser = 5;
    static constexpr int kAssistant = 6;
    static constexpr size_t kNumSpecials = 7;

    Vocab();

    size_t size() const { return chars_.size() + kNumSpecials; }
    bool is_special(int id) const { return id >= 0 && id < static_cast<int>(kNumSpecials); }
    bool is_char(int id) const {
        return id >= static_cast<int>(kNumSpecials) && id < static_cast<int>(size());
    }

    std::vector<int> tokenize(const std::string& s) const;
    // Inverse of tokenize; rejects special ids.
    std::string detokenize(std::span<const int> ids) const;
    char char_of(int id) const;
    const char* token_name(int id) const;  // specials only

private:
    std::string chars_;
    int char_to_id_[128];
};

const Vocab& vocab();  // the fixed global vocabulary

// One position of a flattened multimodal training sequence.
struct MMItem {
    bool is_visual = false;
    int id = 0;               // text token id when !is_visual
    std::vector<double> vec;  // d_v-dim visual vector when is_visual
    bool loss = false;
    int round = 0;
};

struct MMSequence {
    std::vector<MMItem> items;
    size_t length() const { return items.size(); }
};

struct PackOptions {
    size_t m = kDefaultTokens;      // visual tokens per image
    bool loss_on_boundaries = true; // IMG_START/IMG_END in responses carry loss
};

// Flatten a conversation: BOS, then per round USER + prompt parts,
// ASSISTANT + response parts, with EOS closing the sequence. Images become
// IMG_START + m visual vectors + IMG_END. Loss flags are true exactly on
// response positions (visual vectors always; boundary tokens per options;
// the final EOS belongs to the last response).
MMSequence pack_conversation(const Conversation& c, const EncoderParams& encoder,
                             const PackOptions& opts = {});

// Prompt-only packing for decoding: BOS + USER + prompt parts + ASSISTANT.
MMSequence pack_prompt(const Conversation& c, const EncoderParams& encoder,
                       const PackOptions& opts = {});

struct Batch {
    std::vector<MMSequence> seqs;  // right-padded with PAD items
    std::vector<size_t> lengths;   // original lengths
    size_t padded_len = 0;

    bool valid(size_t s, size_t t) const { return t < lengths[s]; }
};

Batch collate(const std::vector<MMSequence>& seqs);

// Boundary integrity: IMG_START / IMG_END properly nested around visual
// runs; no stray visual positions. When exact_m, every run has length
// exactly m; otherwise runs may be up to m (generation bound m_max).
bool boundary_integrity(const MMSequence& seq, size_t m, bool exact_m,
                        std::string* why = nullptr);

// Versioned little-endian binary cache of packed sequences.
void write_sequence_cache(const std::string& path, const std::vector<MMSequence>& seqs);
std::vector<MMSequence> read_sequence_cache(const std::string& path);

}  // namespace vpit
