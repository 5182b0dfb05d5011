#include "stfuse/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

namespace stfuse::mesh {

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double dist(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

double tri_area(const Point& a, const Point& b, const Point& c) {
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
}

}  // namespace

double polygon_area(std::span<const Point> poly) {
    double s = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = poly[i];
        const Point& q = poly[(i + 1) % n];
        s += p.x * q.y - q.x * p.y;
    }
    return 0.5 * std::abs(s);
}

bool point_in_polygon(const Point& p, std::span<const Point> poly) {
    bool odd = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if (((a.y > p.y) != (b.y > p.y)) &&
            (p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x))
            odd = !odd;
    }
    return odd;
}

std::vector<Point> convex_hull(std::span<const Point> pts) {
    std::vector<Point> p(pts.begin(), pts.end());
    std::sort(p.begin(), p.end(), [](const Point& a, const Point& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    p.erase(std::unique(p.begin(), p.end(),
                        [](const Point& a, const Point& b) {
                            return a.x == b.x && a.y == b.y;
                        }),
            p.end());
    const std::size_t n = p.size();
    if (n < 3) return p;
    std::vector<Point> h(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {  // lower
        while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper
        while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    h.resize(k - 1);  // CCW
    return h;
}

std::vector<Point> offset_polygon(std::span<const Point> poly, double offset) {
    const std::size_t n = poly.size();
    std::vector<Point> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Point& prev = poly[(i + n - 1) % n];
        const Point& cur = poly[i];
        const Point& next = poly[(i + 1) % n];
        // outward normals of the two incident edges (CCW polygon: right side)
        auto normal = [](const Point& a, const Point& b) {
            const double dx = b.x - a.x, dy = b.y - a.y;
            const double len = std::hypot(dx, dy);
            return Point{dy / len, -dx / len};
        };
        const Point n1 = normal(prev, cur);
        const Point n2 = normal(cur, next);
        // intersect the two offset lines (miter)
        // line1: prev+n1*off -> cur+n1*off; line2: cur+n2*off -> next+n2*off
        const double d1x = cur.x - prev.x, d1y = cur.y - prev.y;
        const double d2x = next.x - cur.x, d2y = next.y - cur.y;
        const Point a1{prev.x + n1.x * offset, prev.y + n1.y * offset};
        const Point a2{cur.x + n2.x * offset, cur.y + n2.y * offset};
        const double det = d1x * d2y - d1y * d2x;
        if (std::abs(det) < 1e-12) {  // collinear edges: plain shift
            out[i] = Point{cur.x + n1.x * offset, cur.y + n1.y * offset};
        } else {
            const double t = ((a2.x - a1.x) * d2y - (a2.y - a1.y) * d2x) / det;
            out[i] = Point{a1.x + t * d1x, a1.y + t * d1y};
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Incremental Bowyer-Watson triangulation with longest-edge refinement.
// ---------------------------------------------------------------------------
namespace {

struct DTri {
    Index v[3];
    bool alive = true;
};

class Delaunay {
public:
    explicit Delaunay(double span, Point center) {
        // big super-triangle enclosing everything
        const double m = 64.0 * span + 1.0;
        verts_.push_back({center.x - 2 * m, center.y - m});
        verts_.push_back({center.x + 2 * m, center.y - m});
        verts_.push_back({center.x, center.y + 2 * m});
        tris_.push_back({{0, 1, 2}, true});
    }

    /// Inserts p; returns the vertex index, reusing an existing vertex when p
    /// duplicates it (within tol).
    Index insert(const Point& p, double tol = 1e-9) {
        for (Index i = 3; i < static_cast<Index>(verts_.size()); ++i) {
            if (dist(verts_[static_cast<std::size_t>(i)], p) <= tol) return i;
        }
        const Index vi = static_cast<Index>(verts_.size());
        verts_.push_back(p);

        // cavity: all alive triangles whose circumcircle contains p
        std::vector<Index> bad;
        for (Index t = 0; t < static_cast<Index>(tris_.size()); ++t) {
            if (!tris_[static_cast<std::size_t>(t)].alive) continue;
            if (in_circumcircle(tris_[static_cast<std::size_t>(t)], p)) bad.push_back(t);
        }
        // boundary = edges of the cavity not shared by two bad triangles
        std::map<std::pair<Index, Index>, std::pair<Index, Index>> edges;  // sorted -> directed
        for (Index t : bad) {
            const auto& tr = tris_[static_cast<std::size_t>(t)];
            for (int e = 0; e < 3; ++e) {
                Index a = tr.v[e], b = tr.v[(e + 1) % 3];
                auto key = std::minmax(a, b);
                auto it = edges.find({key.first, key.second});
                if (it == edges.end())
                    edges[{key.first, key.second}] = {a, b};
                else
                    edges.erase(it);
            }
            tris_[static_cast<std::size_t>(t)].alive = false;
        }
        for (const auto& [key, dir] : edges) {
            DTri nt{{dir.first, dir.second, vi}, true};
            orient(nt);
            tris_.push_back(nt);
        }
        return vi;
    }

    const std::vector<Point>& vertices() const { return verts_; }
    const std::vector<DTri>& triangles() const { return tris_; }

private:
    bool in_circumcircle(const DTri& t, const Point& p) const {
        const Point& a = verts_[static_cast<std::size_t>(t.v[0])];
        const Point& b = verts_[static_cast<std::size_t>(t.v[1])];
        const Point& c = verts_[static_cast<std::size_t>(t.v[2])];
        const double ax = a.x - p.x, ay = a.y - p.y;
        const double bx = b.x - p.x, by = b.y - p.y;
        const double cx = c.x - p.x, cy = c.y - p.y;
        const double det =
            (ax * ax + ay * ay) * (bx * cy - cx * by) -
            (bx * bx + by * by) * (ax * cy - cx * ay) +
            (cx * cx + cy * cy) * (ax * by - bx * ay);
        // scale-aware tolerance keeps cocircular quadruples deterministic
        const double scale = (ax * ax + ay * ay) + (bx * bx + by * by) + (cx * cx + cy * cy);
        return det > 1e-12 * scale * std::sqrt(scale + 1.0);
    }

    void orient(DTri& t) {
        const Point& a = verts_[static_cast<std::size_t>(t.v[0])];
        const Point& b = verts_[static_cast<std::size_t>(t.v[1])];
        const Point& c = verts_[static_cast<std::size_t>(t.v[2])];
        if (tri_area(a, b, c) < 0) std::swap(t.v[1], t.v[2]);
    }

    std::vector<Point> verts_;
    std::vector<DTri> tris_;
};

}  // namespace

Mesh Mesh::from_data(std::vector<Point> vertices, std::vector<Triangle> triangles,
                     std::vector<Point> inner_boundary, std::vector<Point> outer_boundary) {
    Mesh m;
    m.vertices_ = std::move(vertices);
    m.triangles_ = std::move(triangles);
    m.inner_boundary_ = std::move(inner_boundary);
    m.outer_boundary_ = std::move(outer_boundary);
    m.inner_flag_.resize(m.triangles_.size());
    for (std::size_t t = 0; t < m.triangles_.size(); ++t) {
        const Triangle& tr = m.triangles_[t];
        const Point& a = m.vertices_[static_cast<std::size_t>(tr.a)];
        const Point& b = m.vertices_[static_cast<std::size_t>(tr.b)];
        const Point& c = m.vertices_[static_cast<std::size_t>(tr.c)];
        m.inner_flag_[t] = point_in_polygon(
            Point{(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0}, m.inner_boundary_);
    }
    m.build_locator();
    return m;
}

double Mesh::triangle_area(Index t) const {
    const Triangle& tr = triangles_[static_cast<std::size_t>(t)];
    return tri_area(vertices_[static_cast<std::size_t>(tr.a)],
                    vertices_[static_cast<std::size_t>(tr.b)],
                    vertices_[static_cast<std::size_t>(tr.c)]);
}

Mesh build_mesh(std::span<const Point> points, std::span<const Point> domain,
                double max_edge_inner, double max_edge_outer, double offset,
                Index max_vertices) {
    if (max_edge_inner > max_edge_outer)
        throw UsageError("build_mesh: max_edge_inner must be <= max_edge_outer");
    if (offset <= 0) throw UsageError("build_mesh: offset must be > 0");
    if (convex_hull(points).size() < 3)
        throw DataError("DegenerateInput: need >= 3 non-collinear points");

    std::vector<Point> all(points.begin(), points.end());
    all.insert(all.end(), domain.begin(), domain.end());
    std::vector<Point> inner = convex_hull(all);
    if (inner.size() < 3) throw DataError("DegenerateInput: degenerate domain");
    std::vector<Point> outer = offset_polygon(inner, offset);

    double minx = outer[0].x, maxx = outer[0].x, miny = outer[0].y, maxy = outer[0].y;
    for (const auto& p : outer) {
        minx = std::min(minx, p.x); maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y); maxy = std::max(maxy, p.y);
    }
    const double span = std::max(maxx - minx, maxy - miny);
    Delaunay dt(span, Point{0.5 * (minx + maxx), 0.5 * (miny + maxy)});

    for (const auto& p : outer) dt.insert(p);
    for (const auto& p : inner) dt.insert(p);
    for (const auto& p : points) dt.insert(p);

    // longest-edge refinement; the inner polygon decides which bound applies
    const double tol = 1e-9;
    while (true) {
        if (static_cast<Index>(dt.vertices().size()) - 3 > max_vertices)
            throw NumericalError("RefinementLimit: refinement exceeded max_vertices");
        // collect the worst violating edge
        struct Viol { double excess; double len; Point mid; };
        std::vector<Viol> viols;
        const auto& vs = dt.vertices();
        for (const auto& t : dt.triangles()) {
            if (!t.alive) continue;
            if (t.v[0] < 3 || t.v[1] < 3 || t.v[2] < 3) continue;  // super-tri
            const Point& a = vs[static_cast<std::size_t>(t.v[0])];
            const Point& b = vs[static_cast<std::size_t>(t.v[1])];
            const Point& c = vs[static_cast<std::size_t>(t.v[2])];
            const Point centroid{(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
            const double bound =
                point_in_polygon(centroid, inner) ? max_edge_inner : max_edge_outer;
            const Point* e[3][2] = {{&a, &b}, {&b, &c}, {&c, &a}};
            for (int k = 0; k < 3; ++k) {
                const double len = dist(*e[k][0], *e[k][1]);
                if (len > bound * (1.0 + tol)) {
                    viols.push_back({len - bound, len,
                                     Point{0.5 * (e[k][0]->x + e[k][1]->x),
                                           0.5 * (e[k][0]->y + e[k][1]->y)}});
                }
            }
        }
        if (viols.empty()) break;
        auto worst = std::max_element(viols.begin(), viols.end(),
                                      [](const Viol& u, const Viol& v) {
                                          if (u.len != v.len) return u.len < v.len;
                                          if (u.mid.x != v.mid.x) return u.mid.x < v.mid.x;
                                          return u.mid.y < v.mid.y;
                                      });
        dt.insert(worst->mid);
    }

    Mesh m;
    const auto& vs = dt.vertices();
    std::vector<Index> remap(vs.size(), -1);
    for (std::size_t i = 3; i < vs.size(); ++i) {
        remap[i] = static_cast<Index>(m.vertices_.size());
        m.vertices_.push_back(vs[i]);
    }
    for (const auto& t : dt.triangles()) {
        if (!t.alive) continue;
        if (t.v[0] < 3 || t.v[1] < 3 || t.v[2] < 3) continue;
        Triangle tr{remap[static_cast<std::size_t>(t.v[0])],
                    remap[static_cast<std::size_t>(t.v[1])],
                    remap[static_cast<std::size_t>(t.v[2])]};
        const double area = tri_area(m.vertices_[static_cast<std::size_t>(tr.a)],
                                     m.vertices_[static_cast<std::size_t>(tr.b)],
                                     m.vertices_[static_cast<std::size_t>(tr.c)]);
        if (area <= 1e-12) continue;  // sliver against the boundary
        m.triangles_.push_back(tr);
    }
    m.inner_boundary_ = std::move(inner);
    m.outer_boundary_ = std::move(outer);
    m.inner_flag_.resize(m.triangles_.size());
    for (std::size_t t = 0; t < m.triangles_.size(); ++t) {
        const Triangle& tr = m.triangles_[t];
        const Point& a = m.vertices_[static_cast<std::size_t>(tr.a)];
        const Point& b = m.vertices_[static_cast<std::size_t>(tr.b)];
        const Point& c = m.vertices_[static_cast<std::size_t>(tr.c)];
        const Point centroid{(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
        m.inner_flag_[t] = point_in_polygon(centroid, m.inner_boundary_);
    }
    m.build_locator();
    return m;
}

void Mesh::build_locator() {
    double minx = std::numeric_limits<double>::max(), maxx = -minx;
    double miny = minx, maxy = -minx;
    double max_edge = 0.0;
    for (const auto& t : triangles_) {
        const Point& a = vertices_[static_cast<std::size_t>(t.a)];
        const Point& b = vertices_[static_cast<std::size_t>(t.b)];
        const Point& c = vertices_[static_cast<std::size_t>(t.c)];
        max_edge = std::max({max_edge, dist(a, b), dist(b, c), dist(c, a)});
    }
    for (const auto& v : vertices_) {
        minx = std::min(minx, v.x); maxx = std::max(maxx, v.x);
        miny = std::min(miny, v.y); maxy = std::max(maxy, v.y);
    }
    cell_size_ = std::max(max_edge, 1e-6);
    grid_x0_ = minx; grid_y0_ = miny;
    grid_nx_ = std::max<Index>(1, static_cast<Index>((maxx - minx) / cell_size_) + 1);
    grid_ny_ = std::max<Index>(1, static_cast<Index>((maxy - miny) / cell_size_) + 1);
    grid_cells_.assign(static_cast<std::size_t>(grid_nx_ * grid_ny_), {});
    for (Index t = 0; t < static_cast<Index>(triangles_.size()); ++t) {
        const Triangle& tr = triangles_[static_cast<std::size_t>(t)];
        const Point* p[3] = {&vertices_[static_cast<std::size_t>(tr.a)],
                             &vertices_[static_cast<std::size_t>(tr.b)],
                             &vertices_[static_cast<std::size_t>(tr.c)]};
        double tminx = p[0]->x, tmaxx = p[0]->x, tminy = p[0]->y, tmaxy = p[0]->y;
        for (int k = 1; k < 3; ++k) {
            tminx = std::min(tminx, p[k]->x); tmaxx = std::max(tmaxx, p[k]->x);
            tminy = std::min(tminy, p[k]->y); tmaxy = std::max(tmaxy, p[k]->y);
        }
        const Index cx0 = std::clamp<Index>(static_cast<Index>((tminx - grid_x0_) / cell_size_), 0, grid_nx_ - 1);
        const Index cx1 = std::clamp<Index>(static_cast<Index>((tmaxx - grid_x0_) / cell_size_), 0, grid_nx_ - 1);
        const Index cy0 = std::clamp<Index>(static_cast<Index>((tminy - grid_y0_) / cell_size_), 0, grid_ny_ - 1);
        const Index cy1 = std::clamp<Index>(static_cast<Index>((tmaxy - grid_y0_) / cell_size_), 0, grid_ny_ - 1);
        for (Index cy = cy0; cy <= cy1; ++cy)
            for (Index cx = cx0; cx <= cx1; ++cx)
                grid_cells_[static_cast<std::size_t>(cy * grid_nx_ + cx)].push_back(t);
    }
}

Index Mesh::locate(const Point& p, double w[3]) const {
    const Index cx = std::clamp<Index>(static_cast<Index>((p.x - grid_x0_) / cell_size_), 0, grid_nx_ - 1);
    const Index cy = std::clamp<Index>(static_cast<Index>((p.y - grid_y0_) / cell_size_), 0, grid_ny_ - 1);
    const double eps = 1e-9;
    for (Index t : grid_cells_[static_cast<std::size_t>(cy * grid_nx_ + cx)]) {
        const Triangle& tr = triangles_[static_cast<std::size_t>(t)];
        const Point& a = vertices_[static_cast<std::size_t>(tr.a)];
        const Point& b = vertices_[static_cast<std::size_t>(tr.b)];
        const Point& c = vertices_[static_cast<std::size_t>(tr.c)];
        const double area = tri_area(a, b, c);
        const double wa = tri_area(p, b, c) / area;
        const double wb = tri_area(a, p, c) / area;
        const double wc = tri_area(a, b, p) / area;
        if (wa >= -eps && wb >= -eps && wc >= -eps) {
            w[0] = std::clamp(wa, 0.0, 1.0);
            w[1] = std::clamp(wb, 0.0, 1.0);
            w[2] = std::clamp(wc, 0.0, 1.0);
            const double s = w[0] + w[1] + w[2];
            w[0] /= s; w[1] /= s; w[2] /= s;
            return t;
        }
    }
    return -1;
}

Projector project(const Mesh& mesh, std::span<const Point> points) {
    Projector pr;
    pr.inside.resize(points.size(), false);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(points.size() * 3);
    for (std::size_t i = 0; i < points.size(); ++i) {
        double w[3];
        const Index t = mesh.locate(points[i], w);
        if (t < 0) continue;
        pr.inside[i] = true;
        const Triangle& tr = mesh.triangles()[static_cast<std::size_t>(t)];
        const Index vid[3] = {tr.a, tr.b, tr.c};
        for (int k = 0; k < 3; ++k) {
            if (w[k] > 0.0)
                trip.emplace_back(static_cast<int>(i), static_cast<int>(vid[k]), w[k]);
        }
    }
    pr.matrix.resize(static_cast<int>(points.size()), static_cast<int>(mesh.n_vertices()));
    pr.matrix.setFromTriplets(trip.begin(), trip.end());
    pr.matrix.makeCompressed();
    return pr;
}

void Mesh::export_csv(const std::string& vertices_path, const std::string& triangles_path) const {
    std::ofstream vf(vertices_path);
    if (!vf) throw DataError("cannot write " + vertices_path);
    vf << "id,x,y\n";
    char buf[96];
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, vertices_[i].x, vertices_[i].y);
        vf << buf;
    }
    std::ofstream tf(triangles_path);
    if (!tf) throw DataError("cannot write " + triangles_path);
    tf << "id,v1,v2,v3\n";
    for (std::size_t i = 0; i < triangles_.size(); ++i) {
        tf << i << "," << triangles_[i].a << "," << triangles_[i].b << ","
           << triangles_[i].c << "\n";
    }
}

std::uint64_t Mesh::content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    auto mixd = [&](double d) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        mix(bits);
    };
    for (const auto& v : vertices_) { mixd(v.x); mixd(v.y); }
    for (const auto& t : triangles_) {
        mix(static_cast<std::uint64_t>(t.a));
        mix(static_cast<std::uint64_t>(t.b));
        mix(static_cast<std::uint64_t>(t.c));
    }
    return h;
}

}  // namespace stfuse::mesh
