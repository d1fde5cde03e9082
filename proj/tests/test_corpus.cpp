#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "vpit/corpus.hpp"

using namespace vpit;

namespace {

const std::string* first_text(const std::vector<Part>& parts) {
    for (const auto& p : parts)
        if (const auto* t = std::get_if<TextPart>(&p)) return &t->text;
    return nullptr;
}

const Scene* first_scene(const std::vector<Part>& parts) {
    for (const auto& p : parts)
        if (const auto* i = std::get_if<ImagePart>(&p)) return &i->scene;
    return nullptr;
}

std::vector<Scene> all_scenes(const std::vector<Part>& parts) {
    std::vector<Scene> out;
    for (const auto& p : parts)
        if (const auto* i = std::get_if<ImagePart>(&p)) out.push_back(i->scene);
    return out;
}

// Independent answer oracle: recomputes the answer from the question text
// and the symbolic scenes carried by the conversation itself.
std::string qa_oracle(const Conversation& c) {
    const auto& round = c.rounds.at(0);
    const std::string& q = *first_text(round.prompt);
    std::vector<Scene> frames = all_scenes(round.prompt);

    auto word_after = [&](const std::string& marker) {
        size_t pos = q.find(marker);
        REQUIRE(pos != std::string::npos);
        pos += marker.size();
        size_t end = q.find_first_of(" ?", pos);
        return q.substr(pos, end - pos);
    };

    if (q.rfind("What is the color of the ", 0) == 0 && c.category == Category::ImageQA) {
        std::string shape_word = word_after("color of the ");
        for (const auto& o : frames.at(0).objects)
            if (shape_word == to_string(o.shape)) return to_string(o.color);
        FAIL("oracle: shape not found");
    }
    if (q.rfind("What shape is at row ", 0) == 0) {
        int r = q[21] - '0';
        size_t cpos = q.find("column ") + 7;
        int col = q[cpos] - '0';
        const SceneObject* o = frames.at(0).object_at(r, col);
        REQUIRE(o != nullptr);
        return to_string(o->shape);
    }
    if (q.rfind("How many objects", 0) == 0) {
        return std::to_string(frames.at(0).objects.size());
    }
    // video questions: identify the moved object between frames 0 and 1
    REQUIRE(frames.size() >= 2);
    const Scene& f0 = frames[0];
    const Scene& f1 = frames[1];
    const SceneObject* moved = nullptr;
    int src_r = -1, src_c = -1;
    for (const auto& o : f1.objects) {
        if (!f0.object_at(o.row, o.col)) moved = &o;
    }
    for (const auto& o : f0.objects) {
        if (!f1.object_at(o.row, o.col)) {
            src_r = o.row;
            src_c = o.col;
        }
    }
    REQUIRE(moved != nullptr);
    if (q.rfind("Which direction", 0) == 0) {
        int dr = moved->row - src_r, dc = moved->col - src_c;
        if (dr == -1) return "up";
        if (dr == 1) return "down";
        if (dc == -1) return "left";
        return "right";
    }
    if (q.rfind("What is the color", 0) == 0) return to_string(moved->color);
    return to_string(moved->shape);
}

// Description parser oracle for one-object generation prompts.
Scene parse_generation_prompt(const std::string& prompt) {
    std::string body = prompt;
    REQUIRE(body.rfind("Generate an image of ", 0) == 0);
    body = body.substr(21);
    REQUIRE(body.back() == '.');
    body.pop_back();
    std::istringstream ss(body);
    std::string a, size_w, color_w, shape_w, at, row_w, r_d, column_w, c_d, on, a2, bg_w, background_w;
    ss >> a >> size_w >> color_w >> shape_w >> at >> row_w >> r_d >> column_w >> c_d >> on >> a2 >>
        bg_w >> background_w;
    REQUIRE(a == "a");
    REQUIRE(at == "at");
    REQUIRE(background_w == "background");
    Scene s;
    s.background = *bg_from_string(bg_w);
    SceneObject o;
    o.size = *size_from_string(size_w);
    o.color = *color_from_string(color_w);
    o.shape = *shape_from_string(shape_w);
    o.row = r_d[0] - '0';
    o.col = c_d[0] - '0';
    s.objects.push_back(o);
    return s;
}

}  // namespace

TEST_CASE("imageqa color question on a red circle answers red") {
    Scene s;
    s.objects.push_back({ObjShape::Circle, ObjColor::Red, 1, 1, ObjSize::Large});
    bool saw_color_template = false;
    for (uint64_t seed = 0; seed < 30 && !saw_color_template; ++seed) {
        Conversation c = make_imageqa(s, seed);
        const std::string& q = *first_text(c.rounds[0].prompt);
        if (q == "What is the color of the circle?") {
            saw_color_template = true;
            CHECK(reference_answer(c) == "red");
            CHECK(c.rounds[0].response.size() == 1);
        }
    }
    CHECK(saw_color_template);
}

TEST_CASE("imageqa count question answers the object count") {
    Scene s;
    s.objects.push_back({ObjShape::Circle, ObjColor::Red, 0, 0, ObjSize::Large});
    s.objects.push_back({ObjShape::Square, ObjColor::Blue, 1, 2, ObjSize::Small});
    s.objects.push_back({ObjShape::Triangle, ObjColor::Green, 3, 3, ObjSize::Large});
    bool saw_count = false;
    for (uint64_t seed = 0; seed < 30 && !saw_count; ++seed) {
        Conversation c = make_imageqa(s, seed);
        if (first_text(c.rounds[0].prompt)->rfind("How many", 0) == 0) {
            saw_count = true;
            CHECK(reference_answer(c) == "3");
        }
    }
    CHECK(saw_count);
}

TEST_CASE("imageqa rejects empty scenes") {
    CHECK_THROWS_AS((void)make_imageqa(Scene{}, 1), std::invalid_argument);
}

TEST_CASE("1000 seeded QA conversations agree with the independent oracle") {
    Rng rng(21);
    for (uint64_t i = 0; i < 700; ++i) {
        Conversation c = make_imageqa(sample_scene(rng, Pool::Any, 1), derive_seed(800, i));
        CHECK(qa_oracle(c) == reference_answer(c));
    }
    for (uint64_t i = 0; i < 300; ++i) {
        Conversation c = make_videoqa(sample_video(rng), derive_seed(900, i));
        CHECK(qa_oracle(c) == reference_answer(c));
    }
}

TEST_CASE("generation conversation structure and prompt text") {
    Scene s;
    s.objects.push_back({ObjShape::Square, ObjColor::Blue, 2, 0, ObjSize::Small});
    Conversation c = make_generation(s);
    const std::string& prompt = *first_text(c.rounds[0].prompt);
    CHECK(prompt.find("blue square") != std::string::npos);
    CHECK(prompt.rfind("Generate an image of ", 0) == 0);
    size_t images = 0;
    for (const auto& p : c.rounds[0].response) images += std::holds_alternative<ImagePart>(p);
    CHECK(images == 1);
    CHECK(*first_text(c.rounds[0].response) == "Here is an image based on your request: ");
}

TEST_CASE("generation prompts round-trip through the description parser") {
    for (const Scene& s : enumerate_one_object_scenes()) {
        Conversation c = make_generation(s);
        Scene parsed = parse_generation_prompt(*first_text(c.rounds[0].prompt));
        CHECK(parsed == s);
    }
}

TEST_CASE("distinct one-object scenes produce distinct prompts") {
    std::set<std::string> prompts;
    auto scenes = enumerate_one_object_scenes();
    for (const Scene& s : scenes) {
        prompts.insert(*first_text(make_generation(s).rounds[0].prompt));
    }
    CHECK(prompts.size() == scenes.size());
}

TEST_CASE("video task: forward emits the remaining frames in order") {
    Rng rng(31);
    VideoScene v = sample_video(rng);
    Conversation c = make_video_task(VideoTaskKind::Forward, v, 5);
    auto rscenes = all_scenes(c.rounds[0].response);
    REQUIRE(static_cast<int>(rscenes.size()) == v.frame_count - 1);
    for (int t = 1; t < v.frame_count; ++t) CHECK(rscenes[size_t(t - 1)] == v.frame(t));
    auto pscenes = all_scenes(c.rounds[0].prompt);
    REQUIRE(pscenes.size() == 1);
    CHECK(pscenes[0] == v.frame(0));
}

TEST_CASE("video task: partial prompt holds even frames, response the gaps in order") {
    Rng rng(32);
    for (int i = 0; i < 20; ++i) {
        VideoScene v = sample_video(rng);
        Conversation c = make_video_task(VideoTaskKind::Partial, v, uint64_t(i));
        auto pscenes = all_scenes(c.rounds[0].prompt);
        auto rscenes = all_scenes(c.rounds[0].response);
        size_t pi = 0, ri = 0;
        for (int t = 0; t < v.frame_count; ++t) {
            if (t % 2 == 0) {
                CHECK(pscenes.at(pi++) == v.frame(t));
            } else {
                CHECK(rscenes.at(ri++) == v.frame(t));
            }
        }
        CHECK(pi == pscenes.size());
        CHECK(ri == rscenes.size());
    }
}

TEST_CASE("video task: reverse prompt is the last frame, response walks backwards") {
    Rng rng(33);
    VideoScene v = sample_video(rng);
    Conversation c = make_video_task(VideoTaskKind::Reverse, v, 6);
    auto pscenes = all_scenes(c.rounds[0].prompt);
    REQUIRE(pscenes.size() == 1);
    CHECK(pscenes[0] == v.frame(v.frame_count - 1));
    auto rscenes = all_scenes(c.rounds[0].response);
    REQUIRE(static_cast<int>(rscenes.size()) == v.frame_count - 1);
    for (int t = 0; t < v.frame_count - 1; ++t)
        CHECK(rscenes[size_t(t)] == v.frame(v.frame_count - 2 - t));
}

TEST_CASE("video task: reorder response is the frames in true temporal order") {
    Rng rng(34);
    for (int i = 0; i < 20; ++i) {
        VideoScene v = sample_video(rng);
        Conversation c = make_video_task(VideoTaskKind::Reorder, v, uint64_t(i) + 100);
        auto rscenes = all_scenes(c.rounds[0].response);
        REQUIRE(static_cast<int>(rscenes.size()) == v.frame_count);
        for (int t = 0; t < v.frame_count; ++t) CHECK(rscenes[size_t(t)] == v.frame(t));
        // prompt is a permutation of the frames, never already sorted
        auto pscenes = all_scenes(c.rounds[0].prompt);
        REQUIRE(pscenes.size() == rscenes.size());
        bool sorted = true;
        for (int t = 0; t < v.frame_count; ++t)
            if (!(pscenes[size_t(t)] == v.frame(t))) sorted = false;
        CHECK(!sorted);
    }
}

TEST_CASE("visual thinking: zoom holds exactly the target object, answer matches oracle") {
    Rng rng(35);
    for (int i = 0; i < 100; ++i) {
        Scene s = sample_scene(rng, Pool::Any, 1);
        Conversation c;
        try {
            c = make_visual_thinking(s, uint64_t(i));
        } catch (const std::invalid_argument&) {
            continue;  // no unambiguous target in this scene
        }
        auto rscenes = all_scenes(c.rounds[0].response);
        REQUIRE(rscenes.size() == 1);
        CHECK(rscenes[0].objects.size() == 1);
        const std::string& q = *first_text(c.rounds[0].prompt);
        CHECK(q.rfind("Think visually before you answer the question: ", 0) == 0);
        CHECK(*first_text(c.rounds[0].response) == "I will think about it visually: ");
        // answer agrees with the color of the queried shape in the original scene
        size_t pos = q.find("color of the ") + 13;
        std::string shape_word = q.substr(pos, q.find('?') - pos);
        for (const auto& o : s.objects) {
            if (shape_word == to_string(o.shape)) CHECK(reference_answer(c) == to_string(o.color));
        }
        CHECK(rscenes[0].objects[0].color == *color_from_string(reference_answer(c)));
    }
}

TEST_CASE("image-to-image recolor keeps cell and size") {
    Scene s;
    s.objects.push_back({ObjShape::Circle, ObjColor::Red, 2, 2, ObjSize::Small});
    Edit e;
    e.kind = Edit::Recolor;
    e.to = ObjColor::Blue;
    Conversation c = make_image_to_image(s, e, 7);
    auto rscenes = all_scenes(c.rounds[0].response);
    REQUIRE(rscenes.size() == 1);
    REQUIRE(rscenes[0].objects.size() == 1);
    CHECK(rscenes[0].objects[0].color == ObjColor::Blue);
    CHECK(rscenes[0].objects[0].row == 2);
    CHECK(rscenes[0].objects[0].col == 2);
    CHECK(rscenes[0].objects[0].size == ObjSize::Small);
}

TEST_CASE("image-to-image move off the grid is rejected") {
    Scene s;
    s.objects.push_back({ObjShape::Square, ObjColor::Green, 1, 3, ObjSize::Large});
    Edit e;
    e.kind = Edit::Move;
    e.dx = 1;  // already at the right edge
    CHECK_THROWS_AS((void)make_image_to_image(s, e, 7), std::invalid_argument);
}

TEST_CASE("image-to-image edits change exactly the affected cells") {
    Rng rng(36);
    int checked = 0;
    for (int i = 0; i < 60 && checked < 30; ++i) {
        Scene s = sample_scene(rng, Pool::Any, 1);
        // recolor to a different color of the first unique-shape target
        Conversation c;
        Edit e;
        e.kind = Edit::Recolor;
        bool made = false;
        for (int col = 0; col < 4 && !made; ++col) {
            e.to = static_cast<ObjColor>(col);
            try {
                c = make_image_to_image(s, e, uint64_t(i));
                made = true;
            } catch (const std::invalid_argument&) {
            }
        }
        if (!made) continue;
        ++checked;
        Scene edited = all_scenes(c.rounds[0].response)[0];
        Image before = render(s);
        Image after = render(edited);
        // the changed object's cell is the only block allowed to differ
        int er = -1, ec = -1;
        for (size_t oi = 0; oi < s.objects.size(); ++oi) {
            if (!(s.objects[oi] == edited.objects[oi])) {
                er = s.objects[oi].row;
                ec = s.objects[oi].col;
            }
        }
        REQUIRE(er >= 0);
        bool diff_inside = false;
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) {
                    bool inside = (y / 4 == er && x / 4 == ec);
                    if (before.at(ch, y, x) != after.at(ch, y, x)) {
                        CHECK(inside);
                        diff_inside = true;
                    }
                }
        CHECK(diff_inside);
    }
    CHECK(checked >= 20);
}

TEST_CASE("sample_mixture honors exact counts and category purity") {
    MixtureCounts counts;
    counts.generation = 0;
    counts.imageqa = 10;
    Corpus corpus = sample_mixture(counts, 5);
    REQUIRE(corpus.conversations.size() == 10);
    for (const auto& c : corpus.conversations) CHECK(c.category == Category::ImageQA);
}

TEST_CASE("sample_mixture is deterministic for a fixed seed") {
    MixtureCounts counts;
    counts.imageqa = 20;
    counts.generation = 15;
    counts.videoqa = 5;
    counts.pure_video = 5;
    counts.visual_thinking = 5;
    counts.image_to_image = 5;
    Corpus a = sample_mixture(counts, 77);
    Corpus b = sample_mixture(counts, 77);
    REQUIRE(a.conversations.size() == b.conversations.size());
    CHECK(a.content_hash() == b.content_hash());
    for (size_t i = 0; i < a.conversations.size(); ++i)
        CHECK(conversation_to_json(a.conversations[i]) == conversation_to_json(b.conversations[i]));
    Corpus c = sample_mixture(counts, 78);
    CHECK(c.content_hash() != a.content_hash());
}

TEST_CASE("every generated conversation passes the structural validator") {
    MixtureCounts counts;
    counts.imageqa = 60;
    counts.videoqa = 25;
    counts.generation = 60;
    counts.visual_thinking = 25;
    counts.image_to_image = 25;
    counts.pure_video = 25;
    Corpus corpus = sample_mixture(counts, 1234);
    for (const auto& c : corpus.conversations) {
        std::string why;
        bool ok = validate_conversation(c, &why);
        CHECK_MESSAGE(ok, why);
    }
}

TEST_CASE("validator rejects category shape violations") {
    Scene s;
    s.objects.push_back({ObjShape::Circle, ObjColor::Red, 0, 0, ObjSize::Large});
    Conversation c = make_generation(s);
    SUBCASE("image smuggled into a generation prompt") {
        c.rounds[0].prompt.insert(c.rounds[0].prompt.begin(), ImagePart{s});
        CHECK(!validate_conversation(c));
    }
    SUBCASE("imageqa response with an image") {
        Conversation qa = make_imageqa(s, 3);
        qa.rounds[0].response.push_back(ImagePart{s});
        CHECK(!validate_conversation(qa));
    }
    SUBCASE("empty prompt") {
        c.rounds[0].prompt.clear();
        CHECK(!validate_conversation(c));
    }
}

TEST_CASE("train and eval mixtures share no scenes over 10000 samples") {
    MixtureCounts counts;
    counts.imageqa = 2000;
    counts.generation = 2000;
    counts.videoqa = 300;
    counts.visual_thinking = 400;
    counts.image_to_image = 300;
    Corpus train = sample_mixture(counts, 91, Pool::Train);
    Corpus eval = sample_mixture(counts, 92, Pool::Eval);
    auto keys_of = [](const Corpus& corpus) {
        std::set<uint64_t> keys;
        for (const auto& c : corpus.conversations)
            for (const auto& r : c.rounds)
                for (const auto* parts : {&r.prompt, &r.response})
                    for (const auto& p : *parts)
                        if (const auto* img = std::get_if<ImagePart>(&p))
                            keys.insert(img->scene.key());
        return keys;
    };
    std::set<uint64_t> tk = keys_of(train);
    std::set<uint64_t> ek = keys_of(eval);
    CHECK(tk.size() + ek.size() >= 10000 / 2);  // plenty of distinct scenes sampled
    for (uint64_t k : ek) CHECK(tk.count(k) == 0);
}

TEST_CASE("corpus file round-trips with versioned header") {
    MixtureCounts counts;
    counts.imageqa = 8;
    counts.generation = 8;
    counts.pure_video = 4;
    Corpus corpus = sample_mixture(counts, 55);
    std::string path = (std::filesystem::temp_directory_path() / "vpit_corpus_test.jsonl").string();
    write_corpus(path, corpus);
    Corpus back = read_corpus(path);
    CHECK(back.content_hash() == corpus.content_hash());
    std::filesystem::remove(path);
}

TEST_CASE("question kinds classify by template") {
    Rng rng(44);
    for (int i = 0; i < 50; ++i) {
        Conversation c = make_imageqa(sample_scene(rng, Pool::Any, 1), uint64_t(i));
        QuestionKind k = classify_question(c);
        CHECK(k != QuestionKind::Other);
        CHECK(k != QuestionKind::Motion);
    }
    for (int i = 0; i < 30; ++i) {
        Conversation c = make_videoqa(sample_video(rng), uint64_t(i));
        QuestionKind k = classify_question(c);
        bool valid = k == QuestionKind::Motion || k == QuestionKind::Color || k == QuestionKind::Shape;
        CHECK(valid);
    }
}
