#include "vpit/scene.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace vpit {

namespace {

using json = nlohmann::json;

// 4x4 pixel masks per (shape, size), row-major bits (bit r*4+c).
uint16_t shape_mask(ObjShape s, ObjSize z) {
    auto bits = [](std::initializer_list<int> px) {
        uint16_t m = 0;
        for (int p : px) m |= static_cast<uint16_t>(1u << p);
        return m;
    };
    switch (s) {
        case ObjShape::Square:
            return z == ObjSize::Large ? static_cast<uint16_t>(0xffff)
                                       : bits({5, 6, 9, 10});
        case ObjShape::Circle:
            return z == ObjSize::Large ? bits({1, 2, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14})
                                       : bits({1, 4, 5, 6, 9});
        case ObjShape::Triangle:
            return z == ObjSize::Large ? bits({0, 4, 5, 8, 9, 10, 12, 13, 14, 15})
                                       : bits({9, 12, 13, 14});
    }
    return 0;
}

std::array<double, 3> rgb(ObjColor c) {
    switch (c) {
        case ObjColor::Red: return {1.0, 0.0, 0.0};
        case ObjColor::Green: return {0.0, 1.0, 0.0};
        case ObjColor::Blue: return {0.0, 0.0, 1.0};
        case ObjColor::Yellow: return {1.0, 1.0, 0.0};
    }
    return {0, 0, 0};
}

std::array<double, 3> rgb(BgColor b) {
    switch (b) {
        case BgColor::White: return {1.0, 1.0, 1.0};
        case BgColor::Black: return {0.0, 0.0, 0.0};
        case BgColor::Gray: return {0.5, 0.5, 0.5};
        case BgColor::Silver: return {0.75, 0.75, 0.75};
    }
    return {0, 0, 0};
}

}  // namespace

const char* to_string(ObjShape s) {
    switch (s) {
        case ObjShape::Circle: return "circle";
        case ObjShape::Square: return "square";
        case ObjShape::Triangle: return "triangle";
    }
    return "?";
}

const char* to_string(ObjColor c) {
    switch (c) {
        case ObjColor::Red: return "red";
        case ObjColor::Green: return "green";
        case ObjColor::Blue: return "blue";
        case ObjColor::Yellow: return "yellow";
    }
    return "?";
}

const char* to_string(ObjSize z) { return z == ObjSize::Small ? "small" : "large"; }

const char* to_string(BgColor b) {
    switch (b) {
        case BgColor::White: return "white";
        case BgColor::Black: return "black";
        case BgColor::Gray: return "gray";
        case BgColor::Silver: return "silver";
    }
    return "?";
}

const char* to_string(MoveDir d) {
    switch (d) {
        case MoveDir::Up: return "up";
        case MoveDir::Down: return "down";
        case MoveDir::Left: return "left";
        case MoveDir::Right: return "right";
    }
    return "?";
}

std::optional<ObjShape> shape_from_string(const std::string& s) {
    for (auto v : {ObjShape::Circle, ObjShape::Square, ObjShape::Triangle})
        if (s == to_string(v)) return v;
    return std::nullopt;
}

std::optional<ObjColor> color_from_string(const std::string& s) {
    for (auto v : {ObjColor::Red, ObjColor::Green, ObjColor::Blue, ObjColor::Yellow})
        if (s == to_string(v)) return v;
    return std::nullopt;
}

std::optional<ObjSize> size_from_string(const std::string& s) {
    for (auto v : {ObjSize::Small, ObjSize::Large})
        if (s == to_string(v)) return v;
    return std::nullopt;
}

std::optional<BgColor> bg_from_string(const std::string& s) {
    for (auto v : {BgColor::White, BgColor::Black, BgColor::Gray, BgColor::Silver})
        if (s == to_string(v)) return v;
    return std::nullopt;
}

bool Scene::valid() const {
    if (objects.size() > 3) return false;
    for (size_t i = 0; i < objects.size(); ++i) {
        const auto& o = objects[i];
        if (o.row < 0 || o.row >= kGrid || o.col < 0 || o.col >= kGrid) return false;
        for (size_t j = i + 1; j < objects.size(); ++j) {
            if (objects[j].row == o.row && objects[j].col == o.col) return false;
        }
    }
    return true;
}

const SceneObject* Scene::object_at(int row, int col) const {
    for (const auto& o : objects) {
        if (o.row == row && o.col == col) return &o;
    }
    return nullptr;
}

uint64_t Scene::key() const {
    std::vector<uint8_t> bytes;
    bytes.push_back(static_cast<uint8_t>(background));
    std::vector<SceneObject> sorted = objects;
    std::sort(sorted.begin(), sorted.end(), [](const SceneObject& a, const SceneObject& b) {
        return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    for (const auto& o : sorted) {
        bytes.push_back(static_cast<uint8_t>(o.shape));
        bytes.push_back(static_cast<uint8_t>(o.color));
        bytes.push_back(static_cast<uint8_t>(o.row));
        bytes.push_back(static_cast<uint8_t>(o.col));
        bytes.push_back(static_cast<uint8_t>(o.size));
    }
    return fnv1a(bytes.data(), bytes.size());
}

Image render(const Scene& scene) {
    if (!scene.valid()) throw std::invalid_argument("render: invalid scene");
    Image img;
    auto bg = rgb(scene.background);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x) img.at(c, y, x) = bg[static_cast<size_t>(c)];
    for (const auto& o : scene.objects) {
        uint16_t mask = shape_mask(o.shape, o.size);
        auto col = rgb(o.color);
        for (int py = 0; py < kCellPx; ++py) {
            for (int px = 0; px < kCellPx; ++px) {
                if (mask & (1u << (py * 4 + px))) {
                    int y = o.row * kCellPx + py;
                    int x = o.col * kCellPx + px;
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[static_cast<size_t>(c)];
                }
            }
        }
    }
    return img;
}

std::string to_ppm(const Image& img) {
    std::string out = "P6\n16 16\n255\n";
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                out.push_back(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
            }
    return out;
}

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    std::string data = to_ppm(img);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

namespace {

json scene_json(const Scene& s) {
    json objs = json::array();
    for (const auto& o : s.objects) {
        objs.push_back({{"sh", to_string(o.shape)},
                        {"co", to_string(o.color)},
                        {"r", o.row},
                        {"c", o.col},
                        {"sz", to_string(o.size)}});
    }
    return json{{"bg", to_string(s.background)}, {"objs", objs}};
}

Scene scene_parse(const json& j) {
    Scene s;
    auto bg = bg_from_string(j.at("bg").get<std::string>());
    if (!bg) throw std::runtime_error("scene: bad background");
    s.background = *bg;
    for (const auto& oj : j.at("objs")) {
        SceneObject o;
        auto sh = shape_from_string(oj.at("sh").get<std::string>());
        auto co = color_from_string(oj.at("co").get<std::string>());
        auto sz = size_from_string(oj.at("sz").get<std::string>());
        if (!sh || !co || !sz) throw std::runtime_error("scene: bad object field");
        o.shape = *sh;
        o.color = *co;
        o.size = *sz;
        o.row = oj.at("r").get<int>();
        o.col = oj.at("c").get<int>();
        s.objects.push_back(o);
    }
    if (!s.valid()) throw std::runtime_error("scene: invariant violation");
    return s;
}

}  // namespace

std::string scene_to_json(const Scene& s) { return scene_json(s).dump(); }

Scene scene_from_json(const std::string& j) { return scene_parse(json::parse(j)); }

std::string describe(const Scene& s) {
    std::string out;
    if (s.objects.empty()) {
        out = "an empty scene";
    } else {
        for (size_t i = 0; i < s.objects.size(); ++i) {
            const auto& o = s.objects[i];
            if (i > 0) out += " and ";
            out += "a ";
            out += to_string(o.size);
            out += " ";
            out += to_string(o.color);
            out += " ";
            out += to_string(o.shape);
            out += " at row ";
            out += std::to_string(o.row);
            out += " column ";
            out += std::to_string(o.col);
        }
    }
    out += " on a ";
    out += to_string(s.background);
    out += " background";
    return out;
}

namespace {

// Pool partition key: invariant under object motion (position-free), so
// every frame of a video lands in the same pool as its initial scene.
uint64_t pool_key(const Scene& s) {
    std::vector<uint8_t> triples;
    triples.push_back(static_cast<uint8_t>(s.background));
    std::vector<uint8_t> objs;
    for (const auto& o : s.objects) {
        objs.push_back(static_cast<uint8_t>(
            (static_cast<int>(o.shape) << 4) | (static_cast<int>(o.color) << 1) |
            static_cast<int>(o.size)));
    }
    std::sort(objs.begin(), objs.end());
    triples.insert(triples.end(), objs.begin(), objs.end());
    return fnv1a(triples.data(), triples.size());
}

}  // namespace

bool in_pool(const Scene& s, Pool pool) {
    if (pool == Pool::Any) return true;
    bool is_eval = (pool_key(s) % 4) == 0;
    return pool == Pool::Eval ? is_eval : !is_eval;
}

Scene sample_scene(Rng& rng, Pool pool, int min_objects) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
        Scene s;
        s.background = static_cast<BgColor>(rng.below(4));
        double u = rng.uniform();
        int count = u < 0.05 ? 0 : u < 0.50 ? 1 : u < 0.80 ? 2 : 3;
        if (count < min_objects) count = min_objects;
        while (static_cast<int>(s.objects.size()) < count) {
            SceneObject o;
            o.shape = static_cast<ObjShape>(rng.below(3));
            o.color = static_cast<ObjColor>(rng.below(4));
            o.size = static_cast<ObjSize>(rng.below(2));
            o.row = static_cast<int>(rng.below(kGrid));
            o.col = static_cast<int>(rng.below(kGrid));
            if (!s.object_at(o.row, o.col)) s.objects.push_back(o);
        }
        if (in_pool(s, pool)) return s;
    }
    throw std::runtime_error("sample_scene: pool rejection did not terminate");
}

std::vector<Scene> enumerate_one_object_scenes() {
    std::vector<Scene> out;
    for (int sh = 0; sh < 3; ++sh)
        for (int co = 0; co < 4; ++co)
            for (int r = 0; r < kGrid; ++r)
                for (int c = 0; c < kGrid; ++c)
                    for (int sz = 0; sz < 2; ++sz)
                        for (int bg = 0; bg < 4; ++bg) {
                            Scene s;
                            s.background = static_cast<BgColor>(bg);
                            s.objects.push_back({static_cast<ObjShape>(sh),
                                                 static_cast<ObjColor>(co), r, c,
                                                 static_cast<ObjSize>(sz)});
                            out.push_back(std::move(s));
                        }
    return out;
}

std::vector<Scene> canonical_shape_color_scenes() {
    std::vector<Scene> out;
    for (int sh = 0; sh < 3; ++sh)
        for (int co = 0; co < 4; ++co) {
            Scene s;
            s.background = BgColor::White;
            s.objects.push_back({static_cast<ObjShape>(sh), static_cast<ObjColor>(co), 1, 1,
                                 ObjSize::Large});
            out.push_back(std::move(s));
        }
    return out;
}

// ---- video ----

namespace {

std::pair<int, int> dir_delta(MoveDir d) {
    switch (d) {
        case MoveDir::Up: return {-1, 0};
        case MoveDir::Down: return {1, 0};
        case MoveDir::Left: return {0, -1};
        case MoveDir::Right: return {0, 1};
    }
    return {0, 0};
}

MoveDir reverse_dir(MoveDir d) {
    switch (d) {
        case MoveDir::Up: return MoveDir::Down;
        case MoveDir::Down: return MoveDir::Up;
        case MoveDir::Left: return MoveDir::Right;
        case MoveDir::Right: return MoveDir::Left;
    }
    return d;
}

// Walk t one-cell steps from (r,c), bouncing at grid edges.
void walk(int t, int& r, int& c, MoveDir& dir) {
    for (int i = 0; i < t; ++i) {
        auto [dr, dc] = dir_delta(dir);
        int nr = r + dr, nc = c + dc;
        if (nr < 0 || nr >= kGrid || nc < 0 || nc >= kGrid) {
            dir = reverse_dir(dir);
            auto [dr2, dc2] = dir_delta(dir);
            nr = r + dr2;
            nc = c + dc2;
        }
        r = nr;
        c = nc;
    }
}

}  // namespace

bool VideoScene::valid() const {
    if (!initial.valid() || initial.objects.empty()) return false;
    if (moving_index >= initial.objects.size()) return false;
    if (frame_count < 4 || frame_count > 8) return false;
    for (int t = 0; t < frame_count; ++t) {
        if (!frame(t).valid()) return false;
    }
    return true;
}

Scene VideoScene::frame(int t) const {
    if (t < 0 || t >= frame_count) throw std::invalid_argument("video: frame index out of range");
    Scene s = initial;
    int r = s.objects[moving_index].row;
    int c = s.objects[moving_index].col;
    MoveDir dir = direction;
    walk(t, r, c, dir);
    s.objects[moving_index].row = r;
    s.objects[moving_index].col = c;
    return s;
}

MoveDir VideoScene::first_step_direction() const {
    int r = initial.objects[moving_index].row;
    int c = initial.objects[moving_index].col;
    MoveDir dir = direction;
    walk(1, r, c, dir);
    return dir;
}

std::string video_to_json(const VideoScene& v) {
    json j{{"initial", scene_json(v.initial)},
           {"mi", v.moving_index},
           {"dir", to_string(v.direction)},
           {"frames", v.frame_count}};
    return j.dump();
}

VideoScene video_from_json(const std::string& s) {
    json j = json::parse(s);
    VideoScene v;
    v.initial = scene_parse(j.at("initial"));
    v.moving_index = j.at("mi").get<size_t>();
    std::string d = j.at("dir").get<std::string>();
    bool found = false;
    for (auto dd : {MoveDir::Up, MoveDir::Down, MoveDir::Left, MoveDir::Right}) {
        if (d == to_string(dd)) {
            v.direction = dd;
            found = true;
        }
    }
    if (!found) throw std::runtime_error("video: bad direction");
    v.frame_count = j.at("frames").get<int>();
    if (!v.valid()) throw std::runtime_error("video: invariant violation");
    return v;
}

VideoScene sample_video(Rng& rng, Pool pool) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
        VideoScene v;
        v.initial = sample_scene(rng, pool, 1);
        v.moving_index = rng.below(v.initial.objects.size());
        v.direction = static_cast<MoveDir>(rng.below(4));
        v.frame_count = 4 + static_cast<int>(rng.below(5));
        if (v.valid()) return v;
    }
    throw std::runtime_error("sample_video: rejection did not terminate");
}

}  // namespace vpit
