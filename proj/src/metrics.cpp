#include "layoutforge/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "layoutforge/image.hpp"

namespace lf {

double pixel_error(const LayoutMask& pred, const LayoutMask& gt) {
    if (pred.w != gt.w || pred.h != gt.h)
        throw std::invalid_argument("pixel_error: dimension mismatch");
    size_t mismatched = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i)
        if (pred.labels[i] != gt.labels[i]) ++mismatched;
    return 100.0 * static_cast<double>(mismatched) / static_cast<double>(pred.labels.size());
}

CornerSet extract_corners(const LayoutMask& mask) {
    const int H = mask.h, W = mask.w;
    // junction lattice: node (r,c) sits at continuous point (x=c, y=r)
    std::vector<uint8_t> marked(static_cast<size_t>(H + 1) * (W + 1), 0);
    auto mark = [&](int r, int c) { marked[static_cast<size_t>(r) * (W + 1) + c] = 1; };

    for (int r = 1; r < H; ++r)
        for (int c = 1; c < W; ++c) {
            const uint8_t a = mask.at(r - 1, c - 1), b = mask.at(r - 1, c);
            const uint8_t d = mask.at(r, c - 1), e = mask.at(r, c);
            uint8_t labels[4] = {a, b, d, e};
            std::sort(labels, labels + 4);
            const int distinct = 1 + (labels[1] != labels[0]) + (labels[2] != labels[1]) +
                                 (labels[3] != labels[2]);
            if (distinct >= 3) mark(r, c);
        }
    for (int c = 1; c < W; ++c) {
        if (mask.at(0, c - 1) != mask.at(0, c)) mark(0, c);
        if (mask.at(H - 1, c - 1) != mask.at(H - 1, c)) mark(H, c);
    }
    for (int r = 1; r < H; ++r) {
        if (mask.at(r - 1, 0) != mask.at(r, 0)) mark(r, 0);
        if (mask.at(r - 1, W - 1) != mask.at(r, W - 1)) mark(r, W);
    }

    CornerSet out;
    std::vector<uint8_t> seen(marked.size(), 0);
    for (int r = 0; r <= H; ++r)
        for (int c = 0; c <= W; ++c) {
            const size_t idx = static_cast<size_t>(r) * (W + 1) + c;
            if (!marked[idx] || seen[idx]) continue;
            double sx = 0, sy = 0;
            int count = 0;
            std::queue<std::pair<int, int>> q;
            q.push({r, c});
            seen[idx] = 1;
            while (!q.empty()) {
                auto [cr, cc] = q.front();
                q.pop();
                sx += cc;
                sy += cr;
                ++count;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = cr + dr, nc = cc + dc;
                        if (nr < 0 || nr > H || nc < 0 || nc > W) continue;
                        const size_t nidx = static_cast<size_t>(nr) * (W + 1) + nc;
                        if (!marked[nidx] || seen[nidx]) continue;
                        seen[nidx] = 1;
                        q.push({nr, nc});
                    }
            }
            out.pts.push_back({sx / count, sy / count});
        }
    std::sort(out.pts.begin(), out.pts.end(),
              [](const Vec2& a, const Vec2& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
    return out;
}

double min_cost_assignment(const Matrix& cost, std::vector<int>& match) {
    if (cost.rows != cost.cols) throw std::invalid_argument("assignment: matrix must be square");
    const int n = cost.rows;
    match.assign(n, -1);
    if (n == 0) return 0.0;

    constexpr double kInf = std::numeric_limits<double>::infinity();
    // augmenting-path algorithm with potentials, 1-based scratch arrays
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
        match[p[j] - 1] = j - 1;
        total += cost.at(p[j] - 1, j - 1);
    }
    return total;
}

double corner_error(const CornerSet& pred, const CornerSet& gt, int width, int height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("corner_error: bad frame dims");
    const size_t n = pred.pts.size(), m = gt.pts.size();
    if (n == 0 && m == 0) return 0.0;

    const double diag = std::sqrt(static_cast<double>(width) * width +
                                  static_cast<double>(height) * height);
    const size_t k = std::max(n, m);
    Matrix cost(static_cast<int>(k), static_cast<int>(k), diag); // dummy pairs cost one diagonal
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j)
            cost.at(static_cast<int>(i), static_cast<int>(j)) =
                std::hypot(pred.pts[i].x - gt.pts[j].x, pred.pts[i].y - gt.pts[j].y);

    std::vector<int> match;
    const double total = min_cost_assignment(cost, match);
    return 100.0 * (total / static_cast<double>(k)) / diag;
}

std::string EvalReport::to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json j = {{"id", s.id}, {"ok", s.ok}};
        if (s.ok) {
            j["pe"] = s.pe;
            j["e_cor"] = s.e_cor;
        } else {
            j["error"] = s.error;
        }
        recs.push_back(j);
    }
    return nlohmann::json{{"aggregate",
                           {{"pa", pa},
                            {"pe", pe},
                            {"e_cor", e_cor},
                            {"evaluated", evaluated},
                            {"failed", failed}}},
                          {"samples", recs}}
        .dump(2);
}

std::string EvalReport::summary_table() const {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "%-10s %10s %10s %10s\n", "metric", "PA%", "PE%", "e_cor%");
    os << line;
    std::snprintf(line, sizeof(line), "%-10s %10.4f %10.4f %10.4f\n", "mean", pa, pe, e_cor);
    os << line;
    std::snprintf(line, sizeof(line), "samples: %d evaluated, %d failed\n", evaluated, failed);
    os << line;
    return os.str();
}

EvalReport evaluate(const DatasetManifest& manifest, const InferFn& infer,
                    const RoomTaxonomy& taxonomy, int threads, CornerReference corner_ref) {
    EvalReport report;
    const size_t n = manifest.entries.size();
    report.samples.resize(n);

    auto eval_one = [&](size_t i) {
        SampleEval& rec = report.samples[i];
        rec.id = manifest.entries[i].id;
        try {
            const RgbImage image = read_rgb_png(manifest.image_path(i));
            const LayoutMask gt = read_mask_png(manifest.mask_path(i));
            std::ifstream pj(manifest.poly_path(i));
            if (!pj) throw std::runtime_error("missing poly json");
            std::stringstream buf;
            buf << pj.rdbuf();
            const PolyLayout poly = poly_from_json(buf.str(), taxonomy);

            const LayoutMask pred = infer({manifest.entries[i], image, gt});
            rec.pe = pixel_error(pred, gt);

            CornerSet gt_corners;
            if (corner_ref == CornerReference::poly) {
                for (const auto& c : poly.corners) gt_corners.pts.push_back({c.x, c.y});
            } else {
                gt_corners = extract_corners(gt);
            }
            rec.e_cor = corner_error(extract_corners(pred), gt_corners, gt.w, gt.h);
            rec.ok = true;
        } catch (const std::exception& ex) {
            rec.ok = false;
            rec.error = ex.what();
        }
    };

    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) eval_one(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) eval_one(i);
            });
        for (auto& t : pool) t.join();
    }

    // ordered reduction over sample index
    for (const auto& rec : report.samples) {
        if (!rec.ok) {
            ++report.failed;
            continue;
        }
        report.pe += rec.pe;
        report.e_cor += rec.e_cor;
        ++report.evaluated;
    }
    if (report.evaluated > 0) {
        report.pe /= report.evaluated;
        report.e_cor /= report.evaluated;
    }
    report.pa = 100.0 - report.pe;
    return report;
}

} // namespace lf
