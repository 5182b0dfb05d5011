#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "stfuse/mesh.hpp"

using namespace stfuse;
using mesh::Point;

namespace {

double edge_len(const mesh::Mesh& m, mesh::Index a, mesh::Index b) {
    const Point& pa = m.vertices()[static_cast<std::size_t>(a)];
    const Point& pb = m.vertices()[static_cast<std::size_t>(b)];
    return std::hypot(pa.x - pb.x, pa.y - pb.y);
}

// exhaustive edge-bound check: an edge inherits the inner bound when any
// adjacent triangle is inner
void check_edge_bounds(const mesh::Mesh& m, double inner, double outer) {
    std::map<std::pair<mesh::Index, mesh::Index>, double> bound;
    for (std::size_t t = 0; t < m.triangles().size(); ++t) {
        const auto& tr = m.triangles()[t];
        const double b = m.triangle_is_inner(static_cast<mesh::Index>(t)) ? inner : outer;
        const mesh::Index v[3] = {tr.a, tr.b, tr.c};
        for (int k = 0; k < 3; ++k) {
            auto key = std::minmax(v[k], v[(k + 1) % 3]);
            auto it = bound.find(key);
            if (it == bound.end())
                bound[key] = b;
            else
                it->second = std::min(it->second, b);
        }
    }
    for (const auto& [e, b] : bound) {
        CHECK(edge_len(m, e.first, e.second) <= b * (1.0 + 1e-9));
    }
}

}  // namespace

TEST_CASE("build_mesh: unit square corners, loose bounds") {
    std::vector<Point> pts{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    auto m = mesh::build_mesh(pts, pts, 10.0, 10.0, 0.5);
    CHECK(m.triangles().size() >= 2);
    double area = 0.0;
    for (std::size_t t = 0; t < m.triangles().size(); ++t)
        area += m.triangle_area(static_cast<mesh::Index>(t));
    CHECK(area == doctest::Approx(mesh::polygon_area(m.outer_boundary())).epsilon(1e-9));
    CHECK(area >= mesh::polygon_area(m.inner_boundary()));
}

TEST_CASE("build_mesh: production settings, bounds hold exhaustively") {
    // station-like scatter over a 30 x 25 km domain
    std::mt19937 rng(2014);
    std::uniform_real_distribution<double> ux(0.0, 30.0), uy(0.0, 25.0);
    std::vector<Point> pts;
    for (int i = 0; i < 44; ++i) pts.push_back({ux(rng), uy(rng)});
    std::vector<Point> dom{{0, 0}, {30, 0}, {30, 25}, {0, 25}};
    auto m = mesh::build_mesh(pts, dom, 2.5, 4.0, 5.0);
    check_edge_bounds(m, 2.5, 4.0);
    // every seed point sits inside some triangle
    for (const auto& p : pts) {
        double w[3];
        CHECK(m.locate(p, w) >= 0);
    }
}

TEST_CASE("build_mesh: random 30 points in 20x20 box") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    std::vector<Point> pts;
    for (int i = 0; i < 30; ++i) pts.push_back({u(rng), u(rng)});
    std::vector<Point> dom{{0, 0}, {20, 0}, {20, 20}, {0, 20}};
    auto m = mesh::build_mesh(pts, dom, 3.0, 5.0, 2.0);
    check_edge_bounds(m, 3.0, 5.0);
    for (const auto& p : pts) {
        double w[3];
        CHECK(m.locate(p, w) >= 0);
    }
    // triangles are non-degenerate
    for (std::size_t t = 0; t < m.triangles().size(); ++t)
        CHECK(m.triangle_area(static_cast<mesh::Index>(t)) > 1e-12);
}

TEST_CASE("build_mesh: determinism") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<Point> pts;
    for (int i = 0; i < 15; ++i) pts.push_back({u(rng), u(rng)});
    std::vector<Point> dom{{0, 0}, {10, 0}, {10, 10}, {0, 10}};
    auto m1 = mesh::build_mesh(pts, dom, 2.0, 3.0, 1.5);
    auto m2 = mesh::build_mesh(pts, dom, 2.0, 3.0, 1.5);
    CHECK(m1.content_hash() == m2.content_hash());
    CHECK(m1.n_vertices() == m2.n_vertices());
}

TEST_CASE("build_mesh: degenerate input") {
    std::vector<Point> pts{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    std::vector<Point> dom{{0, 0}, {3, 3}};
    CHECK_THROWS_AS(mesh::build_mesh(pts, dom, 1.0, 1.0, 1.0), DataError);
}

TEST_CASE("build_mesh: refinement limit") {
    std::vector<Point> pts{{0, 0}, {10, 0}, {10, 10}, {0, 10}};
    CHECK_THROWS_AS(mesh::build_mesh(pts, pts, 0.05, 0.05, 1.0, 50), NumericalError);
}

TEST_CASE("project: vertex, centroid, outside") {
    std::vector<Point> pts{{0, 0}, {4, 0}, {4, 4}, {0, 4}, {2, 1}};
    std::vector<Point> dom{{0, 0}, {4, 0}, {4, 4}, {0, 4}};
    auto m = mesh::build_mesh(pts, dom, 10.0, 10.0, 1.0);

    // a point exactly at a vertex
    const Point v0 = m.vertices()[3];
    // centroid of the first triangle
    const auto& tr = m.triangles()[0];
    const Point a = m.vertices()[static_cast<std::size_t>(tr.a)];
    const Point b = m.vertices()[static_cast<std::size_t>(tr.b)];
    const Point c = m.vertices()[static_cast<std::size_t>(tr.c)];
    const Point centroid{(a.x + b.x + c.x) / 3, (a.y + b.y + c.y) / 3};
    const Point far{100.0, 100.0};

    auto pr = mesh::project(m, std::vector<Point>{v0, centroid, far});
    CHECK(pr.inside[0]);
    CHECK(pr.inside[1]);
    CHECK_FALSE(pr.inside[2]);

    Eigen::RowVectorXd row0 = pr.matrix.row(0);
    CHECK(row0.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row0.maxCoeff() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(row0[3] == doctest::Approx(1.0).epsilon(1e-9));

    Eigen::RowVectorXd row1 = pr.matrix.row(1);
    CHECK(row1.sum() == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> w;
    for (int j = 0; j < row1.size(); ++j)
        if (row1[j] != 0.0) w.push_back(row1[j]);
    REQUIRE(w.size() == 3);
    for (double x : w) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    CHECK(pr.matrix.row(2).sum() == doctest::Approx(0.0));
}

TEST_CASE("project: linear reproduction on 100 random interior points") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> u(0.5, 19.5);
    std::vector<Point> seeds;
    for (int i = 0; i < 25; ++i) seeds.push_back({u(rng), u(rng)});
    std::vector<Point> dom{{0, 0}, {20, 0}, {20, 20}, {0, 20}};
    auto m = mesh::build_mesh(seeds, dom, 4.0, 6.0, 2.0);

    auto f = [](const Point& p) { return 2.0 * p.x - 3.0 * p.y + 1.0; };
    Eigen::VectorXd fv(m.n_vertices());
    for (mesh::Index i = 0; i < m.n_vertices(); ++i)
        fv[i] = f(m.vertices()[static_cast<std::size_t>(i)]);

    std::vector<Point> qpts;
    for (int i = 0; i < 100; ++i) qpts.push_back({u(rng), u(rng)});
    auto pr = mesh::project(m, qpts);
    Eigen::VectorXd fp = pr.matrix * fv;
    for (int i = 0; i < 100; ++i) {
        REQUIRE(pr.inside[static_cast<std::size_t>(i)]);
        CHECK(std::abs(fp[i] - f(qpts[static_cast<std::size_t>(i)])) < 1e-10);
    }
}

TEST_CASE("mesh csv export") {
    std::vector<Point> pts{{0, 0}, {2, 0}, {1, 2}};
    auto m = mesh::build_mesh(pts, pts, 10.0, 10.0, 0.5);
    m.export_csv("/tmp/stfuse_test_vertices.csv", "/tmp/stfuse_test_triangles.csv");
    std::ifstream vf("/tmp/stfuse_test_vertices.csv");
    std::string header;
    std::getline(vf, header);
    CHECK(header == "id,x,y");
    std::ifstream tf("/tmp/stfuse_test_triangles.csv");
    std::getline(tf, header);
    CHECK(header == "id,v1,v2,v3");
}
