#include "vpit/sequencer.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vpit {

Vocab::Vocab() {
    chars_ = " ";
    for (char c = 'a'; c <= 'z'; ++c) chars_.push_back(c);
    for (char c = 'A'; c <= 'Z'; ++c) chars_.push_back(c);
    for (char c = '0'; c <= '9'; ++c) chars_.push_back(c);
    chars_ += ".,?!:;'-()";
    for (int& v : char_to_id_) v = -1;
    for (size_t i = 0; i < chars_.size(); ++i) {
        char_to_id_[static_cast<unsigned char>(chars_[i])] = static_cast<int>(kNumSpecials + i);
    }
}

std::vector<int> Vocab::tokenize(const std::string& s) const {
    std::vector<int> out;
    out.reserve(s.size());
    for (char c : s) {
        unsigned char uc = static_cast<unsigned char>(c);
        int id = uc < 128 ? char_to_id_[uc] : -1;
        if (id < 0)
            throw std::invalid_argument(std::string("tokenize: character outside alphabet: '") +
                                        c + "'");
        out.push_back(id);
    }
    return out;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(char_of(id));
    return out;
}

char Vocab::char_of(int id) const {
    if (!is_char(id)) throw std::invalid_argument("detokenize: id is not a text character");
    return chars_[static_cast<size_t>(id) - kNumSpecials];
}

const char* Vocab::token_name(int id) const {
    switch (id) {
        case kPad: return "PAD";
        case kBos: return "BOS";
        case kEos: return "EOS";
        case kImgStart: return "IMG_START";
        case kImgEnd: return "IMG_END";
        case kUser: return "USER";
        case kAssistant: return "ASSISTANT";
        default: return "?";
    }
}

const Vocab& vocab() {
    static Vocab v;
    return v;
}

namespace {

MMItem text_item(int id, bool loss, int round) {
    MMItem it;
    it.is_visual = false;
    it.id = id;
    it.loss = loss;
    it.round = round;
    return it;
}

void append_parts(MMSequence& seq, const std::vector<Part>& parts, bool response,
                  const EncoderParams& encoder, const PackOptions& opts, int round) {
    for (const Part& p : parts) {
        if (const auto* t = std::get_if<TextPart>(&p)) {
            for (int id : vocab().tokenize(t->text))
                seq.items.push_back(text_item(id, response, round));
        } else {
            const Scene& scene = std::get<ImagePart>(p).scene;
            if (!scene.valid())
                throw std::invalid_argument("pack_conversation: unresolvable image reference");
            Tensor toks = scene_tokens(scene, encoder, opts.m);
            bool btok_loss = response && opts.loss_on_boundaries;
            seq.items.push_back(text_item(Vocab::kImgStart, btok_loss, round));
            for (size_t r = 0; r < opts.m; ++r) {
                MMItem it;
                it.is_visual = true;
                it.vec.assign(toks.data().begin() + static_cast<long>(r * kVisualDim),
                              toks.data().begin() + static_cast<long>((r + 1) * kVisualDim));
                it.loss = response;
                it.round = round;
                seq.items.push_back(std::move(it));
            }
            seq.items.push_back(text_item(Vocab::kImgEnd, btok_loss, round));
        }
    }
}

}  // namespace

MMSequence pack_conversation(const Conversation& c, const EncoderParams& encoder,
                             const PackOptions& opts) {
    if (opts.m < 2) throw std::invalid_argument("pack_conversation: m must be >= 2");
    if (c.rounds.empty()) throw std::invalid_argument("pack_conversation: empty conversation");
    MMSequence seq;
    seq.items.push_back(text_item(Vocab::kBos, false, 0));
    for (size_t ri = 0; ri < c.rounds.size(); ++ri) {
        int round = static_cast<int>(ri);
        seq.items.push_back(text_item(Vocab::kUser, false, round));
        append_parts(seq, c.rounds[ri].prompt, false, encoder, opts, round);
        seq.items.push_back(text_item(Vocab::kAssistant, false, round));
        append_parts(seq, c.rounds[ri].response, true, encoder, opts, round);
    }
    // the closing EOS is the last prediction of the final response
    seq.items.push_back(text_item(Vocab::kEos, true, static_cast<int>(c.rounds.size()) - 1));
    return seq;
}

MMSequence pack_prompt(const Conversation& c, const EncoderParams& encoder,
                       const PackOptions& opts) {
    if (opts.m < 2) throw std::invalid_argument("pack_prompt: m must be >= 2");
    if (c.rounds.empty()) throw std::invalid_argument("pack_prompt: empty conversation");
    MMSequence seq;
    seq.items.push_back(text_item(Vocab::kBos, false, 0));
    seq.items.push_back(text_item(Vocab::kUser, false, 0));
    append_parts(seq, c.rounds[0].prompt, false, encoder, opts, 0);
    seq.items.push_back(text_item(Vocab::kAssistant, false, 0));
    return seq;
}

Batch collate(const std::vector<MMSequence>& seqs) {
    if (seqs.empty()) throw std::invalid_argument("collate: empty sequence list");
    Batch b;
    b.seqs = seqs;
    for (const auto& s : seqs) {
        b.lengths.push_back(s.length());
        b.padded_len = std::max(b.padded_len, s.length());
    }
    for (auto& s : b.seqs) {
        while (s.items.size() < b.padded_len)
            s.items.push_back(text_item(Vocab::kPad, false, 0));
    }
    return b;
}

bool boundary_integrity(const MMSequence& seq, size_t m, bool exact_m, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    bool in_run = false;
    size_t run_len = 0;
    for (size_t t = 0; t < seq.items.size(); ++t) {
        const MMItem& it = seq.items[t];
        if (it.is_visual) {
            if (!in_run) return fail("visual vector outside IMG_START/IMG_END at " + std::to_string(t));
            ++run_len;
            if (run_len > m) return fail("visual run longer than bound at " + std::to_string(t));
        } else if (it.id == Vocab::kImgStart) {
            if (in_run) return fail("nested IMG_START at " + std::to_string(t));
            in_run = true;
            run_len = 0;
        } else if (it.id == Vocab::kImgEnd) {
            if (!in_run) return fail("IMG_END without IMG_START at " + std::to_string(t));
            if (exact_m && run_len != m)
                return fail("visual run length " + std::to_string(run_len) + " != m");
            in_run = false;
        } else {
            if (in_run) return fail("text token inside a visual run at " + std::to_string(t));
        }
    }
    if (in_run) return fail("unterminated visual run");
    return true;
}

// ---- binary cache ----

namespace {

constexpr char kCacheMagic[8] = {'V', 'P', 'I', 'T', 'S', 'E', 'Q', '1'};

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("sequence cache: truncated file");
    return v;
}

}  // namespace

void write_sequence_cache(const std::string& path, const std::vector<MMSequence>& seqs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_sequence_cache: cannot open " + path);
    f.write(kCacheMagic, sizeof(kCacheMagic));
    put<uint32_t>(f, 1);  // version
    put<uint64_t>(f, seqs.size());
    for (const auto& s : seqs) {
        put<uint64_t>(f, s.items.size());
        for (const auto& it : s.items) {
            put<uint8_t>(f, it.is_visual ? 1 : 0);
            put<uint8_t>(f, it.loss ? 1 : 0);
            put<uint16_t>(f, static_cast<uint16_t>(it.round));
            if (it.is_visual) {
                put<uint16_t>(f, static_cast<uint16_t>(it.vec.size()));
                f.write(reinterpret_cast<const char*>(it.vec.data()),
                        static_cast<std::streamsize>(it.vec.size() * sizeof(double)));
            } else {
                put<uint32_t>(f, static_cast<uint32_t>(it.id));
            }
        }
    }
}

std::vector<MMSequence> read_sequence_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_sequence_cache: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCacheMagic, 8) != 0)
        throw std::runtime_error("read_sequence_cache: bad magic");
    if (get<uint32_t>(f) != 1) throw std::runtime_error("read_sequence_cache: bad version");
    uint64_t count = get<uint64_t>(f);
    std::vector<MMSequence> seqs;
    seqs.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        MMSequence s;
        uint64_t len = get<uint64_t>(f);
        s.items.reserve(len);
        for (uint64_t t = 0; t < len; ++t) {
            MMItem it;
            it.is_visual = get<uint8_t>(f) != 0;
            it.loss = get<uint8_t>(f) != 0;
            it.round = get<uint16_t>(f);
            if (it.is_visual) {
                uint16_t dim = get<uint16_t>(f);
                it.vec.resize(dim);
                f.read(reinterpret_cast<char*>(it.vec.data()),
                       static_cast<std::streamsize>(dim * sizeof(double)));
                if (!f) throw std::runtime_error("read_sequence_cache: truncated vector");
            } else {
                it.id = static_cast<int>(get<uint32_t>(f));
            }
            s.items.push_back(std::move(it));
        }
        seqs.push_back(std::move(s));
    }
    return seqs;
}

}  // namespace vpit
