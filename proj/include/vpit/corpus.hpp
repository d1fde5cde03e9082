#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vpit/scene.hpp"

namespace vpit {

// Instruction-tuning conversations generated from symbolic scenes. Every
// answer is computed from the symbols, so labels are exact by construction.

struct TextPart {
    std::string text;
    bool operator==(const TextPart&) const = default;
};
struct ImagePart {
    Scene scene;
    bool operator==(const ImagePart&) const = default;
};
using Part = std::variant<TextPart, ImagePart>;

struct ConversationRound {
    std::vector<Part> prompt;
    std::vector<Part> response;
};

enum class Category : uint8_t {
    ImageQA = 0,
    VideoQA = 1,
    Generation = 2,
    VisualThinking = 3,
    ImageToImage = 4,
    PureVideo = 5,
};

const char* to_string(Category c);
std::optional<Category> category_from_string(const std::string& s);

struct Conversation {
    Category category = Category::ImageQA;
    uint64_t seed = 0;  // provenance
    std::vector<ConversationRound> rounds;
};

// ---- generators ----

Conversation make_imageqa(const Scene& scene, uint64_t seed);
Conversation make_videoqa(const VideoScene& video, uint64_t seed);
Conversation make_generation(const Scene& scene);

enum class VideoTaskKind : uint8_t { Forward = 0, Partial = 1, Reverse = 2, Reorder = 3 };
Conversation make_video_task(VideoTaskKind kind, const VideoScene& video, uint64_t seed);

Conversation make_visual_thinking(const Scene& scene, uint64_t seed);

struct Edit {
    enum Kind { Recolor, Move, Grow, Shrink } kind = Recolor;
    ObjColor to = ObjColor::Red;  // Recolor
    int dx = 0, dy = 0;           // Move (unit step)
};
Conversation make_image_to_image(const Scene& scene, const Edit& edit, uint64_t seed);

// ---- structural validation (independent of the generators) ----

bool validate_conversation(const Conversation& c, std::string* why = nullptr);

// ---- eval helpers ----

enum class QuestionKind : uint8_t { Color = 0, Shape = 1, Count = 2, Motion = 3, Other = 4 };
const char* to_string(QuestionKind k);

// Classify a QA conversation's question by its template.
QuestionKind classify_question(const Conversation& c);
// The ground-truth answer text of a QA conversation (its response text).
std::string reference_answer(const Conversation& c);
// The target scene of a generation conversation.
const Scene* generation_target(const Conversation& c);

// ---- mixture sampling ----

struct MixtureCounts {
    size_t imageqa = 0;
    size_t videoqa = 0;
    size_t generation = 0;
    size_t visual_thinking = 0;
    size_t image_to_image = 0;
    size_t pure_video = 0;

    size_t total() const {
        return imageqa + videoqa + generation + visual_thinking + image_to_image + pure_video;
    }
};

struct Corpus {
    std::vector<Conversation> conversations;
    uint64_t content_hash() const;
};

// Deterministic corpus with exactly the requested per-category counts,
// shuffled with the given seed. Scenes come from the requested pool.
Corpus sample_mixture(const MixtureCounts& counts, uint64_t seed, Pool pool = Pool::Train);

// ---- corpus files: versioned header line + one JSON record per line ----

std::string conversation_to_json(const Conversation& c);
Conversation conversation_from_json(const std::string& line);
void write_corpus(const std::string& path, const Corpus& corpus);
Corpus read_corpus(const std::string& path);

}  // namespace vpit
