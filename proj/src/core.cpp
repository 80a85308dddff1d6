#include "layoutforge/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace lf {

namespace {
constexpr const char* kSurfaceNames[kNumSurfaces + 1] = {
    "background", "ceiling", "floor", "left-wall", "right-wall", "front-wall"};
}

const char* surface_name(Surface s) { return kSurfaceNames[static_cast<int>(s)]; }

std::optional<Surface> surface_from_name(const std::string& name) {
    for (int i = 1; i <= kNumSurfaces; ++i)
        if (name == kSurfaceNames[i]) return static_cast<Surface>(i);
    return std::nullopt;
}

SurfaceSet SurfaceSet::all() {
    return SurfaceSet{Surface::ceiling, Surface::floor, Surface::left_wall, Surface::right_wall,
                      Surface::front_wall};
}

SurfaceSet SurfaceSet::mirrored() const {
    SurfaceSet out = *this;
    if (contains(Surface::left_wall) != contains(Surface::right_wall)) {
        if (contains(Surface::left_wall)) {
            out.erase(Surface::left_wall);
            out.insert(Surface::right_wall);
        } else {
            out.erase(Surface::right_wall);
            out.insert(Surface::left_wall);
        }
    }
    return out;
}

std::vector<Surface> SurfaceSet::items() const {
    std::vector<Surface> out;
    for (int i = 1; i <= kNumSurfaces; ++i)
        if (contains(static_cast<Surface>(i))) out.push_back(static_cast<Surface>(i));
    return out;
}

SurfaceSet PolyLayout::surface_set() const {
    SurfaceSet s;
    for (const auto& p : surfaces) s.insert(p.surface);
    return s;
}

int PolyLayout::interior_corner_count() const {
    int n = 0;
    for (const auto& c : corners)
        if (c.kind == CornerKind::interior) ++n;
    return n;
}

const RoomType* RoomTaxonomy::find(int id) const {
    for (const auto& t : types)
        if (t.id == id) return &t;
    return nullptr;
}

const RoomType* RoomTaxonomy::find_by_set(SurfaceSet set) const {
    for (const auto& t : types)
        if (t.surfaces == set) return &t;
    return nullptr;
}

RoomTaxonomy RoomTaxonomy::default_lsun11() {
    using S = Surface;
    RoomTaxonomy tax;
    auto add = [&](int id, std::initializer_list<S> surfs, int corners) {
        tax.types.push_back({id, SurfaceSet(surfs), corners});
    };
    add(0, {S::ceiling, S::floor, S::left_wall, S::right_wall, S::front_wall}, 8);
    add(1, {S::floor, S::left_wall, S::right_wall, S::front_wall}, 6);
    add(2, {S::ceiling, S::left_wall, S::right_wall, S::front_wall}, 6);
    add(3, {S::ceiling, S::floor, S::right_wall, S::front_wall}, 6);
    add(4, {S::ceiling, S::floor, S::left_wall, S::front_wall}, 6);
    add(5, {S::ceiling, S::floor, S::left_wall, S::right_wall}, 5);
    add(6, {S::floor, S::right_wall, S::front_wall}, 4);
    add(7, {S::floor, S::left_wall, S::front_wall}, 4);
    add(8, {S::left_wall, S::right_wall, S::front_wall}, 4);
    add(9, {S::floor, S::left_wall, S::right_wall}, 4);
    add(10, {S::floor, S::front_wall}, 2);
    return tax;
}

void RoomTaxonomy::validate() const {
    std::set<int> ids;
    for (const auto& t : types) {
        if (!ids.insert(t.id).second)
            throw std::invalid_argument("taxonomy: duplicate type id " + std::to_string(t.id));
        if (t.surfaces.empty())
            throw std::invalid_argument("taxonomy: empty surface set for type " + std::to_string(t.id));
    }
}

std::vector<DagEdge> DegenerationDAG::edges_from(int type_id) const {
    std::vector<DagEdge> out;
    for (const auto& e : edges)
        if (e.parent == type_id) out.push_back(e);
    return out;
}

std::vector<int> DegenerationDAG::topo_order() const {
    std::map<int, int> indeg;
    for (int n : nodes) indeg[n] = 0;
    for (const auto& e : edges) ++indeg[e.child];
    std::queue<int> q;
    for (const auto& [n, d] : indeg)
        if (d == 0) q.push(n);
    std::vector<int> order;
    while (!q.empty()) {
        int n = q.front();
        q.pop();
        order.push_back(n);
        for (const auto& e : edges)
            if (e.parent == n && --indeg[e.child] == 0) q.push(e.child);
    }
    if (order.size() != nodes.size()) return {};
    return order;
}

DegenerationDAG build_dag(const RoomTaxonomy& taxonomy) {
    taxonomy.validate();
    DegenerationDAG dag;
    for (const auto& t : taxonomy.types) dag.nodes.push_back(t.id);
    for (const auto& parent : taxonomy.types) {
        for (const auto& child : taxonomy.types) {
            if (child.surfaces.size() != parent.surfaces.size() - 1) continue;
            if ((parent.surfaces.bits() & child.surfaces.bits()) != child.surfaces.bits()) continue;
            const uint8_t removed_bits = parent.surfaces.bits() ^ child.surfaces.bits();
            const int removed = __builtin_ctz(removed_bits);
            dag.edges.push_back({parent.id, child.id, static_cast<Surface>(removed)});
        }
    }
    return dag;
}

SurfaceSet surfaces_of(const LayoutMask& mask) {
    SurfaceSet s;
    for (uint8_t l : mask.labels)
        if (l >= 1 && l <= kNumSurfaces) s.insert(static_cast<Surface>(l));
    return s;
}

namespace {

// 4-connected component count for one label value
int component_count(const LayoutMask& mask, uint8_t label) {
    std::vector<uint8_t> seen(mask.labels.size(), 0);
    int comps = 0;
    for (int r = 0; r < mask.h; ++r) {
        for (int c = 0; c < mask.w; ++c) {
            const size_t idx = static_cast<size_t>(r) * mask.w + c;
            if (mask.labels[idx] != label || seen[idx]) continue;
            ++comps;
            std::queue<std::pair<int, int>> q;
            q.push({r, c});
            seen[idx] = 1;
            while (!q.empty()) {
                auto [cr, cc] = q.front();
                q.pop();
                constexpr int dr[4] = {-1, 1, 0, 0};
                constexpr int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= mask.h || nc < 0 || nc >= mask.w) continue;
                    const size_t nidx = static_cast<size_t>(nr) * mask.w + nc;
                    if (seen[nidx] || mask.labels[nidx] != label) continue;
                    seen[nidx] = 1;
                    q.push({nr, nc});
                }
            }
        }
    }
    return comps;
}

} // namespace

ValidationReport validate_layout(const LayoutMask& mask, const RoomTaxonomy& taxonomy) {
    ValidationReport report;
    std::set<uint8_t> bad;
    for (uint8_t l : mask.labels)
        if (l > kNumSurfaces) bad.insert(l);
    report.out_of_range_labels.assign(bad.begin(), bad.end());

    SurfaceSet present = surfaces_of(mask);
    for (Surface s : present.items()) {
        const int comps = component_count(mask, static_cast<uint8_t>(s));
        if (comps > 1) report.disconnected.push_back({static_cast<uint8_t>(s), comps});
    }

    if (const RoomType* t = taxonomy.find_by_set(present)) {
        report.type_matched = true;
        report.matched_type = t->id;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Geometry: canonical polygons and corner junctions from the back rectangle
// ---------------------------------------------------------------------------

namespace {

struct Presence {
    bool ceiling, floor, left, right, front;

    bool has(Surface s) const {
        switch (s) {
            case Surface::ceiling: return ceiling;
            case Surface::floor: return floor;
            case Surface::left_wall: return left;
            case Surface::right_wall: return right;
            case Surface::front_wall: return front;
        }
        return false;
    }
};

Presence presence_of(const BackRect& r, int W, int H) {
    if (r.collapsed)
        return {r.y0 > 0.0, r.y0 < H, r.x0 > 0.0, r.x0 < W, false};
    return {r.y0 > 0.0, r.y1 < H, r.x0 > 0.0, r.x1 < W, true};
}

// Liang-Barsky clip of segment p-q to [0,W]x[0,H]; false when fully outside.
bool clip_segment(Vec2 p, Vec2 q, int W, int H, Vec2& a, Vec2& b) {
    const double dx = q.x - p.x, dy = q.y - p.y;
    double t0 = 0.0, t1 = 1.0;
    // boundary in the form pp*t <= qq; qq is the inside distance at p
    auto clip = [&](double pp, double qq) {
        if (pp == 0.0) return qq >= 0.0;
        const double t = qq / pp;
        if (pp < 0) {
            if (t > t1) return false;
            if (t > t0) t0 = t;
        } else {
            if (t < t0) return false;
            if (t < t1) t1 = t;
        }
        return true;
    };
    if (!clip(-dx, p.x)) return false;
    if (!clip(dx, W - p.x)) return false;
    if (!clip(-dy, p.y)) return false;
    if (!clip(dy, H - p.y)) return false;
    a = {p.x + t0 * dx, p.y + t0 * dy};
    b = {p.x + t1 * dx, p.y + t1 * dy};
    return true;
}

} // namespace

PolyLayout build_poly_layout(int width, int height, int room_type, const BackRect& rect,
                             const RoomTaxonomy& taxonomy) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("layout: dims must be positive");
    const RoomType* type = taxonomy.find(room_type);
    if (!type) throw std::invalid_argument("layout: unknown room type " + std::to_string(room_type));
    if (!rect.collapsed && (rect.x0 >= rect.x1 || rect.y0 >= rect.y1))
        throw std::invalid_argument("layout: degenerate back rectangle");

    const double W = width, H = height;
    const Presence pres = presence_of(rect, width, height);

    SurfaceSet derived;
    if (pres.ceiling) derived.insert(Surface::ceiling);
    if (pres.floor) derived.insert(Surface::floor);
    if (pres.left) derived.insert(Surface::left_wall);
    if (pres.right) derived.insert(Surface::right_wall);
    if (pres.front) derived.insert(Surface::front_wall);
    if (!(derived == type->surfaces))
        throw std::invalid_argument("layout: rectangle implies a different surface set than type " +
                                    std::to_string(room_type));

    const double X0 = rect.x0, Y0 = rect.y0;
    const double X1 = rect.collapsed ? rect.x0 : rect.x1;
    const double Y1 = rect.collapsed ? rect.y0 : rect.y1;

    PolyLayout poly;
    poly.width = width;
    poly.height = height;
    poly.room_type = room_type;
    poly.rect = rect;

    auto add_poly = [&](Surface s, std::initializer_list<Vec2> verts) {
        if (!pres.has(s)) return;
        poly.surfaces.push_back({s, std::vector<Vec2>(verts)});
    };
    add_poly(Surface::ceiling, {{0, 0}, {W, 0}, {X1, Y0}, {X0, Y0}});
    add_poly(Surface::floor, {{0, H}, {X0, Y1}, {X1, Y1}, {W, H}});
    add_poly(Surface::left_wall, {{0, 0}, {X0, Y0}, {X0, Y1}, {0, H}});
    add_poly(Surface::right_wall, {{W, 0}, {W, H}, {X1, Y1}, {X1, Y0}});
    add_poly(Surface::front_wall, {{X0, Y0}, {X1, Y0}, {X1, Y1}, {X0, Y1}});
    std::sort(poly.surfaces.begin(), poly.surfaces.end(),
              [](const auto& a, const auto& b) { return a.surface < b.surface; });

    // Live boundary segments between pairs of present surfaces; their clipped
    // endpoints are the layout corners.
    struct Seg {
        Vec2 p, q;
        bool live;
    };
    std::vector<Seg> segs = {
        {{0, 0}, {X0, Y0}, pres.ceiling && pres.left},
        {{W, 0}, {X1, Y0}, pres.ceiling && pres.right},
        {{0, H}, {X0, Y1}, pres.floor && pres.left},
        {{W, H}, {X1, Y1}, pres.floor && pres.right},
    };
    if (!rect.collapsed) {
        segs.push_back({{X0, Y0}, {X1, Y0}, pres.front && pres.ceiling});
        segs.push_back({{X0, Y1}, {X1, Y1}, pres.front && pres.floor});
        segs.push_back({{X0, Y0}, {X0, Y1}, pres.front && pres.left});
        segs.push_back({{X1, Y0}, {X1, Y1}, pres.front && pres.right});
    }

    constexpr double kTol = 1e-6;
    std::vector<Corner> corners;
    auto add_corner = [&](Vec2 v) {
        for (const auto& c : corners)
            if (std::abs(c.x - v.x) < kTol && std::abs(c.y - v.y) < kTol) return;
        const bool interior = v.x > kTol && v.x < W - kTol && v.y > kTol && v.y < H - kTol;
        corners.push_back({v.x, v.y, interior ? CornerKind::interior : CornerKind::frame_boundary});
    };
    for (const auto& s : segs) {
        if (!s.live) continue;
        Vec2 a, b;
        if (!clip_segment(s.p, s.q, width, height, a, b)) continue;
        if (std::abs(a.x - b.x) < kTol && std::abs(a.y - b.y) < kTol) continue;
        add_corner(a);
        add_corner(b);
    }
    std::sort(corners.begin(), corners.end(), [](const Corner& a, const Corner& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });
    poly.corners = std::move(corners);
    return poly;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

using nlohmann::json;

std::string poly_to_json(const PolyLayout& poly) {
    json j;
    j["width"] = poly.width;
    j["height"] = poly.height;
    j["room_type"] = poly.room_type;
    j["rect"] = {{"x0", poly.rect.x0},
                 {"y0", poly.rect.y0},
                 {"x1", poly.rect.x1},
                 {"y1", poly.rect.y1},
                 {"collapsed", poly.rect.collapsed}};
    json corners = json::array();
    for (const auto& c : poly.corners)
        corners.push_back({{"x", c.x},
                           {"y", c.y},
                           {"kind", c.kind == CornerKind::interior ? "interior" : "frame-boundary"}});
    j["corners"] = corners;
    json surfaces = json::array();
    for (const auto& s : poly.surfaces) {
        json verts = json::array();
        for (const auto& v : s.verts) verts.push_back({v.x, v.y});
        surfaces.push_back({{"surface", surface_name(s.surface)}, {"polygon", verts}});
    }
    j["surfaces"] = surfaces;
    return j.dump(2);
}

PolyLayout poly_from_json(const std::string& text, const RoomTaxonomy& taxonomy) {
    const json j = json::parse(text);
    BackRect rect;
    rect.x0 = j.at("rect").at("x0").get<double>();
    rect.y0 = j.at("rect").at("y0").get<double>();
    rect.x1 = j.at("rect").at("x1").get<double>();
    rect.y1 = j.at("rect").at("y1").get<double>();
    rect.collapsed = j.at("rect").at("collapsed").get<bool>();
    return build_poly_layout(j.at("width").get<int>(), j.at("height").get<int>(),
                             j.at("room_type").get<int>(), rect, taxonomy);
}

std::string taxonomy_to_json(const RoomTaxonomy& taxonomy) {
    json types = json::array();
    for (const auto& t : taxonomy.types) {
        json surfs = json::array();
        for (Surface s : t.surfaces.items()) surfs.push_back(surface_name(s));
        types.push_back({{"id", t.id}, {"surfaces", surfs}, {"corner_count", t.corner_count}});
    }
    return json{{"types", types}}.dump(2);
}

RoomTaxonomy taxonomy_from_json(const std::string& text) {
    const json j = json::parse(text);
    RoomTaxonomy tax;
    for (const auto& jt : j.at("types")) {
        RoomType t;
        t.id = jt.at("id").get<int>();
        for (const auto& name : jt.at("surfaces")) {
            auto s = surface_from_name(name.get<std::string>());
            if (!s) throw std::invalid_argument("taxonomy: unknown surface " + name.get<std::string>());
            t.surfaces.insert(*s);
        }
        t.corner_count = jt.value("corner_count", 0);
        tax.types.push_back(t);
    }
    tax.validate();
    return tax;
}

} // namespace lf
