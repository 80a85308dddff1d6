#pragma once
// Domain types for Manhattan room layouts: the five surface labels, dense
// label masks, vector layouts built from a back-wall rectangle, the room-type
// taxonomy, and the degeneration DAG over it.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lf {

// Label encoding is fixed: 0 = background/no-object, then the five surfaces.
// The left/right pair (3,4) must stay adjacent so a horizontal flip is a
// plain label swap.
enum class Surface : uint8_t {
    ceiling = 1,
    floor = 2,
    left_wall = 3,
    right_wall = 4,
    front_wall = 5,
};

inline constexpr int kNumSurfaces = 5;
inline constexpr int kNumClasses = kNumSurfaces + 1; // + background

const char* surface_name(Surface s);
std::optional<Surface> surface_from_name(const std::string& name);

// Small set over surface labels 1..5.
class SurfaceSet {
public:
    SurfaceSet() = default;
    explicit SurfaceSet(std::initializer_list<Surface> items) {
        for (Surface s : items) insert(s);
    }
    static SurfaceSet all();

    void insert(Surface s) { bits_ |= mask(s); }
    void erase(Surface s) { bits_ &= ~mask(s); }
    bool contains(Surface s) const { return bits_ & mask(s); }
    int size() const { return __builtin_popcount(bits_); }
    bool empty() const { return bits_ == 0; }
    uint8_t bits() const { return bits_; }
    static SurfaceSet from_bits(uint8_t b) {
        SurfaceSet s;
        s.bits_ = b & 0x3e;
        return s;
    }

    // left-wall <-> right-wall
    SurfaceSet mirrored() const;
    std::vector<Surface> items() const;

    bool operator==(const SurfaceSet&) const = default;

private:
    static uint8_t mask(Surface s) { return static_cast<uint8_t>(1u << static_cast<int>(s)); }
    uint8_t bits_ = 0;
};

// Dense H x W f64 grid (probability maps, heatmaps, edge maps). Row-major.
struct Grid {
    int w = 0, h = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int height, int width, double fill = 0.0)
        : w(width), h(height), v(static_cast<size_t>(width) * height, fill) {}

    double& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
    size_t size() const { return v.size(); }
    std::span<double> span() { return v; }
    std::span<const double> span() const { return v; }
};

// C x H x W stack of grids in one contiguous buffer.
struct GridStack {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    GridStack() = default;
    GridStack(int channels, int height, int width, double fill = 0.0)
        : c(channels), h(height), w(width),
          v(static_cast<size_t>(channels) * height * width, fill) {}

    size_t plane_size() const { return static_cast<size_t>(h) * w; }
    std::span<double> plane(int k) { return {v.data() + k * plane_size(), plane_size()}; }
    std::span<const double> plane(int k) const { return {v.data() + k * plane_size(), plane_size()}; }
    double& at(int k, int r, int cc) { return v[k * plane_size() + static_cast<size_t>(r) * w + cc]; }
    double at(int k, int r, int cc) const { return v[k * plane_size() + static_cast<size_t>(r) * w + cc]; }
    size_t size() const { return v.size(); }
};

// Row-major dense matrix, used for query/embedding math.
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    std::span<double> row(int r) { return {v.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(int r) const {
        return {v.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }
};

// Per-pixel surface labels in {0..5}. Row-major, 8-bit.
struct LayoutMask {
    int w = 0, h = 0;
    std::vector<uint8_t> labels;

    LayoutMask() = default;
    LayoutMask(int height, int width, uint8_t fill = 0)
        : w(width), h(height), labels(static_cast<size_t>(width) * height, fill) {}

    uint8_t& at(int r, int c) { return labels[static_cast<size_t>(r) * w + c]; }
    uint8_t at(int r, int c) const { return labels[static_cast<size_t>(r) * w + c]; }
    bool operator==(const LayoutMask&) const = default;
};

// Planar RGB, f64 in [0,1]. Plane order R,G,B.
struct RgbImage {
    int w = 0, h = 0;
    std::vector<double> v;

    RgbImage() = default;
    RgbImage(int height, int width, double fill = 0.0)
        : w(width), h(height), v(3 * static_cast<size_t>(width) * height, fill) {}

    size_t plane_size() const { return static_cast<size_t>(h) * w; }
    std::span<double> plane(int ch) { return {v.data() + ch * plane_size(), plane_size()}; }
    std::span<const double> plane(int ch) const { return {v.data() + ch * plane_size(), plane_size()}; }
    double& at(int ch, int r, int c) { return v[ch * plane_size() + static_cast<size_t>(r) * w + c]; }
    double at(int ch, int r, int c) const { return v[ch * plane_size() + static_cast<size_t>(r) * w + c]; }
    bool operator==(const RgbImage&) const = default;
};

struct Vec2 {
    double x = 0, y = 0;
    bool operator==(const Vec2&) const = default;
};

enum class CornerKind { interior, frame_boundary };

struct Corner {
    double x = 0, y = 0;
    CornerKind kind = CornerKind::interior;
};

// Generator geometry of a layout: the projected back-wall rectangle. Inside
// coordinates give the front wall; a coordinate pushed outside the frame
// removes the surface whose boundary it carries; `collapsed` shrinks the
// rectangle to the point (x0,y0), removing the front wall (corridor views).
struct BackRect {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool collapsed = false;

    bool operator==(const BackRect&) const = default;
};

struct SurfacePolygon {
    Surface surface;
    std::vector<Vec2> verts; // convex, may extend outside the frame
};

// Vector layout: frame size, room type, generating rectangle, and the derived
// surface polygons and corner junctions. All coordinates are f64 pixels,
// origin top-left, x rightward, y downward; the frame spans [0,W] x [0,H].
struct PolyLayout {
    int width = 0, height = 0;
    int room_type = -1;
    BackRect rect;
    std::vector<SurfacePolygon> surfaces;
    std::vector<Corner> corners;

    SurfaceSet surface_set() const;
    int interior_corner_count() const;
};

struct RoomType {
    int id = -1;
    SurfaceSet surfaces;
    int corner_count = 0;
};

struct RoomTaxonomy {
    std::vector<RoomType> types;

    const RoomType* find(int id) const;
    const RoomType* find_by_set(SurfaceSet set) const;
    // The 11-type cuboid table in the LSUN convention.
    static RoomTaxonomy default_lsun11();
    void validate() const; // throws std::invalid_argument
};

struct DagEdge {
    int parent = -1;
    int child = -1;
    Surface removed = Surface::ceiling;

    bool identity() const { return parent == child; }
};

struct DegenerationDAG {
    std::vector<int> nodes;
    std::vector<DagEdge> edges;

    std::vector<DagEdge> edges_from(int type_id) const;
    // Kahn topological sort; empty result means a cycle (cannot happen for
    // subset-ordered edges, checked anyway).
    std::vector<int> topo_order() const;
};

// Edges are exactly the (parent, child) pairs whose surface sets differ by
// the removal of one surface. Throws on duplicate type ids.
DegenerationDAG build_dag(const RoomTaxonomy& taxonomy);

struct ValidationReport {
    std::vector<uint8_t> out_of_range_labels;
    std::vector<std::pair<uint8_t, int>> disconnected; // (label, component count)
    bool type_matched = false;
    int matched_type = -1;

    bool valid() const {
        return out_of_range_labels.empty() && disconnected.empty() && type_matched;
    }
};

ValidationReport validate_layout(const LayoutMask& mask, const RoomTaxonomy& taxonomy);
SurfaceSet surfaces_of(const LayoutMask& mask);

// Derives polygons and corners from the generating rectangle and checks the
// result against the taxonomy entry for `room_type`.
PolyLayout build_poly_layout(int width, int height, int room_type, const BackRect& rect,
                             const RoomTaxonomy& taxonomy);

// JSON (de)serialization. Schemas documented in the README.
std::string poly_to_json(const PolyLayout& poly);
PolyLayout poly_from_json(const std::string& text, const RoomTaxonomy& taxonomy);
std::string taxonomy_to_json(const RoomTaxonomy& taxonomy);
RoomTaxonomy taxonomy_from_json(const std::string& text);

} // namespace lf
