#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vpit/common.hpp"

namespace vpit {

// Symbolic scenes on a 4x4 grid of cells; every cell maps to one 4x4-pixel
// block of the 16x16 canvas. Questions and answers are derived from the
// symbols, never from pixels.

enum class ObjShape : uint8_t { Circle = 0, Square = 1, Triangle = 2 };
enum class ObjColor : uint8_t { Red = 0, Green = 1, Blue = 2, Yellow = 3 };
enum class ObjSize : uint8_t { Small = 0, Large = 1 };
enum class BgColor : uint8_t { White = 0, Black = 1, Gray = 2, Silver = 3 };

constexpr int kGrid = 4;
constexpr int kImageSize = 16;
constexpr int kCellPx = kImageSize / kGrid;

const char* to_string(ObjShape s);
const char* to_string(ObjColor c);
const char* to_string(ObjSize z);
const char* to_string(BgColor b);
std::optional<ObjShape> shape_from_string(const std::string& s);
std::optional<ObjColor> color_from_string(const std::string& s);
std::optional<ObjSize> size_from_string(const std::string& s);
std::optional<BgColor> bg_from_string(const std::string& s);

struct SceneObject {
    ObjShape shape;
    ObjColor color;
    int row = 0;  // cell coordinates, 0..3
    int col = 0;
    ObjSize size = ObjSize::Large;

    bool operator==(const SceneObject&) const = default;
};

struct Scene {
    std::vector<SceneObject> objects;  // at most one per cell, 0..3 total
    BgColor background = BgColor::White;

    bool operator==(const Scene&) const = default;

    bool valid() const;
    const SceneObject* object_at(int row, int col) const;
    // Stable content hash; also drives the train/eval pool partition.
    uint64_t key() const;
};

// 16x16 RGB image, channel-planar layout [3,16,16], values in [0,1].
struct Image {
    std::vector<double> pixels;

    Image() : pixels(3 * kImageSize * kImageSize, 0.0) {}
    double& at(int c, int y, int x) { return pixels[(c * kImageSize + y) * kImageSize + x]; }
    double at(int c, int y, int x) const { return pixels[(c * kImageSize + y) * kImageSize + x]; }
};

Image render(const Scene& scene);

// Binary PPM (P6) export for inspection.
std::string to_ppm(const Image& img);
void write_ppm(const std::string& path, const Image& img);

// One JSON object per scene; used inline in corpus records.
std::string scene_to_json(const Scene& s);
Scene scene_from_json(const std::string& j);

// Canonical English description used by generation prompts, e.g.
// "a large red circle at row 1 column 2 on a white background".
std::string describe(const Scene& s);

// Train/eval pools are disjoint by construction: a scene belongs to the
// eval pool iff key() % 4 == 0.
enum class Pool { Train, Eval, Any };
bool in_pool(const Scene& s, Pool pool);

// Seeded scene sampling (rejection-samples until the pool matches).
Scene sample_scene(Rng& rng, Pool pool = Pool::Any, int min_objects = 0);

// Enumeration of all single-object scenes (all shape/color/cell/size/bg
// combinations); used by property tests and probe training.
std::vector<Scene> enumerate_one_object_scenes();

// The 12 canonical shape x color scenes (large object, cell (1,1), white
// background) used by the end-to-end generation evaluation.
std::vector<Scene> canonical_shape_color_scenes();

// Symbolic video: one object moves one cell per frame, bouncing off the
// grid edge so any frame count stays on the grid.
enum class MoveDir : uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };
const char* to_string(MoveDir d);

struct VideoScene {
    Scene initial;
    size_t moving_index = 0;  // index into initial.objects
    MoveDir direction = MoveDir::Right;
    int frame_count = 4;  // 4..8

    bool valid() const;
    Scene frame(int t) const;  // t in [0, frame_count)
    // Direction actually taken between frame 0 and 1 (after any bounce).
    MoveDir first_step_direction() const;
};

std::string video_to_json(const VideoScene& v);
VideoScene video_from_json(const std::string& j);

VideoScene sample_video(Rng& rng, Pool pool = Pool::Any);

}  // namespace vpit
