#pragma once

#include <Eigen/Sparse>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stfuse/errors.hpp"

namespace stfuse::mesh {

using Index = std::int64_t;

struct Point {
    double x = 0.0;  // km
    double y = 0.0;  // km
};

struct Triangle {
    Index a, b, c;  // vertex indices, counter-clockwise
};

double polygon_area(std::span<const Point> poly);
bool point_in_polygon(const Point& p, std::span<const Point> poly);
std::vector<Point> convex_hull(std::span<const Point> pts);
/// Outward miter offset of a convex CCW polygon.
std::vector<Point> offset_polygon(std::span<const Point> poly, double offset);

/// Triangulation with a fine inner region (the study domain) and a coarser
/// outer extension. Immutable after build.
class Mesh {
public:
    /// Reassembles a mesh from stored geometry (fit bundles, tests).
    static Mesh from_data(std::vector<Point> vertices, std::vector<Triangle> triangles,
                          std::vector<Point> inner_boundary, std::vector<Point> outer_boundary);

    const std::vector<Point>& vertices() const { return vertices_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }
    const std::vector<Point>& inner_boundary() const { return inner_boundary_; }
    const std::vector<Point>& outer_boundary() const { return outer_boundary_; }

    Index n_vertices() const { return static_cast<Index>(vertices_.size()); }

    bool triangle_is_inner(Index t) const { return inner_flag_[static_cast<std::size_t>(t)]; }
    double triangle_area(Index t) const;

    /// Containing triangle index, or -1. Barycentric weights written to w.
    Index locate(const Point& p, double w[3]) const;

    void export_csv(const std::string& vertices_path, const std::string& triangles_path) const;

    /// Order-independent content hash (ties a fit bundle to its mesh).
    std::uint64_t content_hash() const;

private:
    friend Mesh build_mesh(std::span<const Point> points, std::span<const Point> domain,
                           double max_edge_inner, double max_edge_outer, double offset,
                           Index max_vertices);
    void build_locator();

    std::vector<Point> vertices_;
    std::vector<Triangle> triangles_;
    std::vector<Point> inner_boundary_;
    std::vector<Point> outer_boundary_;
    std::vector<bool> inner_flag_;

    // uniform-grid locator
    double cell_size_ = 1.0;
    double grid_x0_ = 0.0, grid_y0_ = 0.0;
    Index grid_nx_ = 0, grid_ny_ = 0;
    std::vector<std::vector<Index>> grid_cells_;
};

/// Delaunay triangulation of the seed points plus boundary vertices, refined
/// by longest-edge splitting until inner edges are <= max_edge_inner and all
/// edges are <= max_edge_outer. The outer boundary is the domain hull dilated
/// by `offset`.
Mesh build_mesh(std::span<const Point> points, std::span<const Point> domain,
                double max_edge_inner, double max_edge_outer, double offset,
                Index max_vertices = 20000);

/// Barycentric point-to-vertex weights; rows for points outside the mesh are
/// empty and flagged.
struct Projector {
    Eigen::SparseMatrix<double> matrix;  // n_points x n_vertices, <= 3 nnz per row
    std::vector<bool> inside;
};

Projector project(const Mesh& mesh, std::span<const Point> points);

}  // namespace stfuse::mesh
