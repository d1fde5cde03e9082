#include "vpit/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace vpit {

namespace {

using json = nlohmann::json;

// Shapes that appear exactly once in the scene (unambiguous "the <shape>").
std::vector<size_t> unique_shape_objects(const Scene& s) {
    std::vector<size_t> out;
    for (size_t i = 0; i < s.objects.size(); ++i) {
        int count = 0;
        for (const auto& o : s.objects)
            if (o.shape == s.objects[i].shape) ++count;
        if (count == 1) out.push_back(i);
    }
    return out;
}

std::string color_question(ObjShape shape) {
    return std::string("What is the color of the ") + to_string(shape) + "?";
}

}  // namespace

const char* to_string(Category c) {
    switch (c) {
        case Category::ImageQA: return "imageqa";
        case Category::VideoQA: return "videoqa";
        case Category::Generation: return "generation";
        case Category::VisualThinking: return "visual_thinking";
        case Category::ImageToImage: return "image_to_image";
        case Category::PureVideo: return "pure_video";
    }
    return "?";
}

std::optional<Category> category_from_string(const std::string& s) {
    for (auto c : {Category::ImageQA, Category::VideoQA, Category::Generation,
                   Category::VisualThinking, Category::ImageToImage, Category::PureVideo})
        if (s == to_string(c)) return c;
    return std::nullopt;
}

const char* to_string(QuestionKind k) {
    switch (k) {
        case QuestionKind::Color: return "color";
        case QuestionKind::Shape: return "shape";
        case QuestionKind::Count: return "count";
        case QuestionKind::Motion: return "motion";
        case QuestionKind::Other: return "other";
    }
    return "?";
}

// ---- generators ----

Conversation make_imageqa(const Scene& scene, uint64_t seed) {
    if (scene.objects.empty())
        throw std::invalid_argument("make_imageqa: empty scene has no attribute questions");
    Rng rng(derive_seed(seed, "imageqa"));

    std::vector<size_t> uniq = unique_shape_objects(scene);
    // templates: 0 = color-of-shape (needs a unique shape), 1 = shape-at-cell, 2 = count
    int tmpl;
    do {
        tmpl = static_cast<int>(rng.below(3));
    } while (tmpl == 0 && uniq.empty());

    std::string question, answer;
    if (tmpl == 0) {
        const auto& o = scene.objects[uniq[rng.below(uniq.size())]];
        question = color_question(o.shape);
        answer = to_string(o.color);
    } else if (tmpl == 1) {
        const auto& o = scene.objects[rng.below(scene.objects.size())];
        question = "What shape is at row " + std::to_string(o.row) + " column " +
                   std::to_string(o.col) + "?";
        answer = to_string(o.shape);
    } else {
        question = "How many objects are in the image?";
        answer = std::to_string(scene.objects.size());
    }

    Conversation c;
    c.category = Category::ImageQA;
    c.seed = seed;
    ConversationRound r;
    r.prompt = {ImagePart{scene}, TextPart{question}};
    r.response = {TextPart{answer}};
    c.rounds.push_back(std::move(r));
    return c;
}

Conversation make_videoqa(const VideoScene& video, uint64_t seed) {
    if (!video.valid()) throw std::invalid_argument("make_videoqa: invalid video");
    Rng rng(derive_seed(seed, "videoqa"));
    const auto& mover = video.initial.objects[video.moving_index];

    int tmpl = static_cast<int>(rng.below(3));
    std::string question, answer;
    if (tmpl == 0) {
        question = "Which direction is the moving object moving?";
        answer = to_string(video.first_step_direction());
    } else if (tmpl == 1) {
        question = "What is the color of the moving object?";
        answer = to_string(mover.color);
    } else {
        question = "What shape is the moving object?";
        answer = to_string(mover.shape);
    }

    Conversation c;
    c.category = Category::VideoQA;
    c.seed = seed;
    ConversationRound r;
    for (int t = 0; t < video.frame_count; ++t) r.prompt.push_back(ImagePart{video.frame(t)});
    r.prompt.push_back(TextPart{question});
    r.response = {TextPart{answer}};
    c.rounds.push_back(std::move(r));
    return c;
}

Conversation make_generation(const Scene& scene) {
    if (!scene.valid()) throw std::invalid_argument("make_generation: invalid scene");
    Conversation c;
    c.category = Category::Generation;
    c.seed = scene.key();
    ConversationRound r;
    r.prompt = {TextPart{"Generate an image of " + describe(scene) + "."}};
    r.response = {TextPart{"Here is an image based on your request: "}, ImagePart{scene}};
    c.rounds.push_back(std::move(r));
    return c;
}

Conversation make_video_task(VideoTaskKind kind, const VideoScene& video, uint64_t seed) {
    if (!video.valid() || video.frame_count < 4)
        throw std::invalid_argument("make_video_task: need at least 4 frames");
    Rng rng(derive_seed(seed, "pure_video"));
    int n = video.frame_count;

    Conversation c;
    c.category = Category::PureVideo;
    c.seed = seed;
    ConversationRound r;
    switch (kind) {
        case VideoTaskKind::Forward: {
            int k = n - 1;
            r.prompt = {ImagePart{video.frame(0)},
                        TextPart{"Can you predict what happens in the next " + std::to_string(k) +
                                 " frames?"}};
            for (int t = 1; t < n; ++t) r.response.push_back(ImagePart{video.frame(t)});
            break;
        }
        case VideoTaskKind::Partial: {
            // prompt holds the even-indexed frames; the gaps are the answer
            std::vector<int> missing;
            for (int t = 0; t < n; ++t) {
                if (t % 2 == 0) {
                    r.prompt.push_back(ImagePart{video.frame(t)});
                } else {
                    missing.push_back(t);
                }
            }
            r.prompt.push_back(TextPart{"Can you predict the " + std::to_string(missing.size()) +
                                        " missing frames in this sequence?"});
            for (int t : missing) r.response.push_back(ImagePart{video.frame(t)});
            break;
        }
        case VideoTaskKind::Reverse: {
            int k = n - 1;
            r.prompt = {ImagePart{video.frame(n - 1)},
                        TextPart{"Work backwards to predict the previous " + std::to_string(k) +
                                 " frames."}};
            for (int t = n - 2; t >= 0; --t) r.response.push_back(ImagePart{video.frame(t)});
            break;
        }
        case VideoTaskKind::Reorder: {
            std::vector<int> perm(static_cast<size_t>(n));
            for (int t = 0; t < n; ++t) perm[static_cast<size_t>(t)] = t;
            do {
                rng.shuffle(perm);
            } while (std::is_sorted(perm.begin(), perm.end()));
            for (int t : perm) r.prompt.push_back(ImagePart{video.frame(t)});
            r.prompt.push_back(TextPart{"Arrange these frames in their correct temporal sequence."});
            for (int t = 0; t < n; ++t) r.response.push_back(ImagePart{video.frame(t)});
            break;
        }
    }
    c.rounds.push_back(std::move(r));
    return c;
}

Conversation make_visual_thinking(const Scene& scene, uint64_t seed) {
    if (scene.objects.empty())
        throw std::invalid_argument("make_visual_thinking: empty scene");
    std::vector<size_t> uniq = unique_shape_objects(scene);
    if (uniq.empty())
        throw std::invalid_argument("make_visual_thinking: no unambiguous target object");
    Rng rng(derive_seed(seed, "visual_thinking"));
    const auto& target = scene.objects[uniq[rng.below(uniq.size())]];

    // zoom: the target object alone, large, re-rendered near the center
    Scene zoom;
    zoom.background = scene.background;
    zoom.objects.push_back({target.shape, target.color, 1, 1, ObjSize::Large});

    Conversation c;
    c.category = Category::VisualThinking;
    c.seed = seed;
    ConversationRound r;
    r.prompt = {ImagePart{scene},
                TextPart{"Think visually before you answer the question: what is the color of the " +
                         std::string(to_string(target.shape)) + "?"}};
    r.response = {TextPart{"I will think about it visually: "}, ImagePart{zoom},
                  TextPart{to_string(target.color)}};
    c.rounds.push_back(std::move(r));
    return c;
}

namespace {

const SceneObject* edit_target(const Scene& scene, uint64_t seed) {
    std::vector<size_t> uniq = unique_shape_objects(scene);
    if (uniq.empty()) return nullptr;
    Rng rng(derive_seed(seed, "edit_target"));
    return &scene.objects[uniq[rng.below(uniq.size())]];
}

}  // namespace

Conversation make_image_to_image(const Scene& scene, const Edit& edit, uint64_t seed) {
    if (scene.objects.empty()) throw std::invalid_argument("make_image_to_image: empty scene");
    const SceneObject* target = edit_target(scene, seed);
    if (!target) throw std::invalid_argument("make_image_to_image: no unambiguous target object");
    size_t ti = static_cast<size_t>(target - scene.objects.data());

    Scene edited = scene;
    SceneObject& obj = edited.objects[ti];
    std::string instruction;
    switch (edit.kind) {
        case Edit::Recolor:
            if (edit.to == obj.color)
                throw std::invalid_argument("make_image_to_image: recolor must change the color");
            instruction = "Recolor the " + std::string(to_string(obj.shape)) + " to " +
                          to_string(edit.to) + ".";
            obj.color = edit.to;
            break;
        case Edit::Move: {
            if (std::abs(edit.dx) + std::abs(edit.dy) != 1)
                throw std::invalid_argument("make_image_to_image: move must be a unit step");
            int nr = obj.row + edit.dy, nc = obj.col + edit.dx;
            if (nr < 0 || nr >= kGrid || nc < 0 || nc >= kGrid)
                throw std::invalid_argument("make_image_to_image: move leaves the grid");
            if (scene.object_at(nr, nc))
                throw std::invalid_argument("make_image_to_image: destination cell occupied");
            const char* dir = edit.dy == -1 ? "up" : edit.dy == 1 ? "down"
                                            : edit.dx == -1       ? "left"
                                                                  : "right";
            instruction = "Move the " + std::string(to_string(obj.shape)) + " " + dir +
                          " by one cell.";
            obj.row = nr;
            obj.col = nc;
            break;
        }
        case Edit::Grow:
            if (obj.size == ObjSize::Large)
                throw std::invalid_argument("make_image_to_image: object is already large");
            instruction = "Make the " + std::string(to_string(obj.shape)) + " larger.";
            obj.size = ObjSize::Large;
            break;
        case Edit::Shrink:
            if (obj.size == ObjSize::Small)
                throw std::invalid_argument("make_image_to_image: object is already small");
            instruction = "Make the " + std::string(to_string(obj.shape)) + " smaller.";
            obj.size = ObjSize::Small;
            break;
    }

    Conversation c;
    c.category = Category::ImageToImage;
    c.seed = seed;
    ConversationRound r;
    r.prompt = {ImagePart{scene}, TextPart{instruction}};
    r.response = {ImagePart{edited}};
    c.rounds.push_back(std::move(r));
    return c;
}

// ---- validation ----

namespace {

bool parts_pattern(const std::vector<Part>& parts, const char* pattern) {
    // pattern chars: 't' text, 'i' image, 'I' one-or-more images
    size_t pi = 0;
    for (const char* p = pattern; *p; ++p) {
        if (*p == 'I') {
            size_t start = pi;
            while (pi < parts.size() && std::holds_alternative<ImagePart>(parts[pi])) ++pi;
            if (pi == start) return false;
        } else if (*p == 'i') {
            if (pi >= parts.size() || !std::holds_alternative<ImagePart>(parts[pi])) return false;
            ++pi;
        } else {
            if (pi >= parts.size() || !std::holds_alternative<TextPart>(parts[pi])) return false;
            ++pi;
        }
    }
    return pi == parts.size();
}

size_t image_count(const std::vector<Part>& parts) {
    size_t n = 0;
    for (const auto& p : parts) n += std::holds_alternative<ImagePart>(p);
    return n;
}

}  // namespace

bool validate_conversation(const Conversation& c, std::string* why) {
    auto fail = [&](const char* msg) {
        if (why) *why = msg;
        return false;
    };
    if (c.rounds.empty()) return fail("no rounds");
    for (const auto& r : c.rounds) {
        if (r.prompt.empty()) return fail("empty prompt");
        for (const auto* parts : {&r.prompt, &r.response}) {
            for (const auto& p : *parts) {
                if (const auto* img = std::get_if<ImagePart>(&p)) {
                    if (!img->scene.valid()) return fail("unrenderable scene");
                }
            }
        }
    }
    const auto& r = c.rounds[0];
    switch (c.category) {
        case Category::ImageQA:
            if (!parts_pattern(r.prompt, "it")) return fail("imageqa prompt must be [image, text]");
            if (!parts_pattern(r.response, "t")) return fail("imageqa response must be text-only");
            break;
        case Category::VideoQA:
            if (!parts_pattern(r.prompt, "It") || image_count(r.prompt) < 2)
                return fail("videoqa prompt must be [frames..., text]");
            if (!parts_pattern(r.response, "t")) return fail("videoqa response must be text-only");
            break;
        case Category::Generation:
            if (!parts_pattern(r.prompt, "t")) return fail("generation prompt must be text-only");
            if (!parts_pattern(r.response, "ti") || image_count(r.response) != 1)
                return fail("generation response must be [text, image]");
            break;
        case Category::VisualThinking:
            if (!parts_pattern(r.prompt, "it"))
                return fail("visual_thinking prompt must be [image, text]");
            if (!parts_pattern(r.response, "tit"))
                return fail("visual_thinking response must be [text, image, text]");
            break;
        case Category::ImageToImage:
            if (!parts_pattern(r.prompt, "it"))
                return fail("image_to_image prompt must be [image, text]");
            if (!parts_pattern(r.response, "i"))
                return fail("image_to_image response must be a single image");
            break;
        case Category::PureVideo:
            if (!parts_pattern(r.prompt, "It"))
                return fail("pure_video prompt must be [frames..., text]");
            if (!parts_pattern(r.response, "I"))
                return fail("pure_video response must be images only");
            break;
    }
    return true;
}

// ---- eval helpers ----

QuestionKind classify_question(const Conversation& c) {
    for (const auto& p : c.rounds[0].prompt) {
        if (const auto* t = std::get_if<TextPart>(&p)) {
            const std::string& q = t->text;
            if (q.rfind("What is the color", 0) == 0) return QuestionKind::Color;
            if (q.rfind("What shape", 0) == 0) return QuestionKind::Shape;
            if (q.rfind("How many", 0) == 0) return QuestionKind::Count;
            if (q.rfind("Which direction", 0) == 0) return QuestionKind::Motion;
        }
    }
    return QuestionKind::Other;
}

std::string reference_answer(const Conversation& c) {
    if (c.rounds.empty() || c.rounds[0].response.empty()) return {};
    if (const auto* t = std::get_if<TextPart>(&c.rounds[0].response.back())) return t->text;
    return {};
}

const Scene* generation_target(const Conversation& c) {
    if (c.category != Category::Generation || c.rounds.empty()) return nullptr;
    for (const auto& p : c.rounds[0].response) {
        if (const auto* img = std::get_if<ImagePart>(&p)) return &img->scene;
    }
    return nullptr;
}

// ---- mixture ----

namespace {

Scene sample_scene_with_unique_shape(Rng& rng, Pool pool) {
    for (;;) {
        Scene s = sample_scene(rng, pool, 1);
        if (!unique_shape_objects(s).empty()) return s;
    }
}

// Derived scenes (zoom views, edited scenes) must stay in the pool too;
// otherwise a train conversation could carry an eval-pool scene.
bool conversation_in_pool(const Conversation& c, Pool pool) {
    for (const auto& r : c.rounds)
        for (const auto* parts : {&r.prompt, &r.response})
            for (const auto& p : *parts)
                if (const auto* img = std::get_if<ImagePart>(&p))
                    if (!in_pool(img->scene, pool)) return false;
    return true;
}

Edit sample_applicable_edit(const Scene& scene, uint64_t seed) {
    Rng rng(derive_seed(seed, "edit"));
    const SceneObject* target = edit_target(scene, seed);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Edit e;
        switch (rng.below(4)) {
            case 0: {
                e.kind = Edit::Recolor;
                e.to = static_cast<ObjColor>(rng.below(4));
                if (e.to != target->color) return e;
                break;
            }
            case 1: {
                e.kind = Edit::Move;
                int axis = static_cast<int>(rng.below(4));
                e.dx = axis == 0 ? 1 : axis == 1 ? -1 : 0;
                e.dy = axis == 2 ? 1 : axis == 3 ? -1 : 0;
                int nr = target->row + e.dy, nc = target->col + e.dx;
                if (nr >= 0 && nr < kGrid && nc >= 0 && nc < kGrid &&
                    !scene.object_at(nr, nc))
                    return e;
                break;
            }
            case 2:
                if (target->size == ObjSize::Small) {
                    e.kind = Edit::Grow;
                    return e;
                }
                break;
            default:
                if (target->size == ObjSize::Large) {
                    e.kind = Edit::Shrink;
                    return e;
                }
                break;
        }
    }
    // every object admits a recolor
    Edit e;
    e.kind = Edit::Recolor;
    e.to = static_cast<ObjColor>((static_cast<int>(target->color) + 1) % 4);
    return e;
}

}  // namespace

Corpus sample_mixture(const MixtureCounts& counts, uint64_t seed, Pool pool) {
    Corpus corpus;
    corpus.conversations.reserve(counts.total());

    auto cat_seed = [&](Category cat, size_t i) {
        return derive_seed(derive_seed(seed, to_string(cat)), i);
    };

    for (size_t i = 0; i < counts.imageqa; ++i) {
        uint64_t s = cat_seed(Category::ImageQA, i);
        Rng rng(s);
        corpus.conversations.push_back(make_imageqa(sample_scene(rng, pool, 1), s));
    }
    for (size_t i = 0; i < counts.videoqa; ++i) {
        uint64_t s = cat_seed(Category::VideoQA, i);
        Rng rng(s);
        corpus.conversations.push_back(make_videoqa(sample_video(rng, pool), s));
    }
    for (size_t i = 0; i < counts.generation; ++i) {
        uint64_t s = cat_seed(Category::Generation, i);
        Rng rng(s);
        corpus.conversations.push_back(make_generation(sample_scene(rng, pool)));
    }
    for (size_t i = 0; i < counts.visual_thinking; ++i) {
        uint64_t s = cat_seed(Category::VisualThinking, i);
        Rng rng(s);
        for (int attempt = 0;; ++attempt) {
            Conversation c = make_visual_thinking(sample_scene_with_unique_shape(rng, pool),
                                                  derive_seed(s, uint64_t(attempt)));
            if (conversation_in_pool(c, pool)) {
                corpus.conversations.push_back(std::move(c));
                break;
            }
        }
    }
    for (size_t i = 0; i < counts.image_to_image; ++i) {
        uint64_t s = cat_seed(Category::ImageToImage, i);
        Rng rng(s);
        for (int attempt = 0;; ++attempt) {
            uint64_t as = derive_seed(s, uint64_t(attempt));
            Scene scene = sample_scene_with_unique_shape(rng, pool);
            Conversation c = make_image_to_image(scene, sample_applicable_edit(scene, as), as);
            if (conversation_in_pool(c, pool)) {
                corpus.conversations.push_back(std::move(c));
                break;
            }
        }
    }
    for (size_t i = 0; i < counts.pure_video; ++i) {
        uint64_t s = cat_seed(Category::PureVideo, i);
        Rng rng(s);
        auto kind = static_cast<VideoTaskKind>(rng.below(4));
        corpus.conversations.push_back(make_video_task(kind, sample_video(rng, pool), s));
    }

    Rng shuffle_rng(derive_seed(seed, "mixture-shuffle"));
    shuffle_rng.shuffle(corpus.conversations);
    return corpus;
}

// ---- serialization ----

namespace {

json part_to_json(const Part& p) {
    if (const auto* t = std::get_if<TextPart>(&p)) return json{{"t", t->text}};
    return json{{"img", json::parse(scene_to_json(std::get<ImagePart>(p).scene))}};
}

Part part_from_json(const json& j) {
    if (j.contains("t")) return TextPart{j.at("t").get<std::string>()};
    return ImagePart{scene_from_json(j.at("img").dump())};
}

}  // namespace

std::string conversation_to_json(const Conversation& c) {
    json rounds = json::array();
    for (const auto& r : c.rounds) {
        json p = json::array(), resp = json::array();
        for (const auto& part : r.prompt) p.push_back(part_to_json(part));
        for (const auto& part : r.response) resp.push_back(part_to_json(part));
        rounds.push_back(json{{"p", p}, {"r", resp}});
    }
    return json{{"category", to_string(c.category)}, {"seed", c.seed}, {"rounds", rounds}}.dump();
}

Conversation conversation_from_json(const std::string& line) {
    json j = json::parse(line);
    Conversation c;
    auto cat = category_from_string(j.at("category").get<std::string>());
    if (!cat) throw std::runtime_error("corpus: unknown category");
    c.category = *cat;
    c.seed = j.at("seed").get<uint64_t>();
    for (const auto& rj : j.at("rounds")) {
        ConversationRound r;
        for (const auto& pj : rj.at("p")) r.prompt.push_back(part_from_json(pj));
        for (const auto& pj : rj.at("r")) r.response.push_back(part_from_json(pj));
        c.rounds.push_back(std::move(r));
    }
    return c;
}

uint64_t Corpus::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& c : conversations) h = fnv1a(conversation_to_json(c), h);
    return h;
}

void write_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_corpus: cannot open " + path);
    f << R"({"format":"vpit-corpus","version":1,"count":)" << corpus.conversations.size()
      << "}\n";
    for (const auto& c : corpus.conversations) f << conversation_to_json(c) << "\n";
}

Corpus read_corpus(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_corpus: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("read_corpus: missing header");
    json header = json::parse(line);
    if (header.at("format") != "vpit-corpus" || header.at("version") != 1)
        throw std::runtime_error("read_corpus: unsupported format/version");
    Corpus corpus;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        corpus.conversations.push_back(conversation_from_json(line));
    }
    if (header.contains("count") &&
        header.at("count").get<size_t>() != corpus.conversations.size())
        throw std::runtime_error("read_corpus: record count mismatch");
    return corpus;
}

}  // namespace vpit
