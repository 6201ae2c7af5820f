#include "scgan/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace scgan::geometry {

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
    const double n = norm(a);
    if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
    return a * (1.0 / n);
}

RotationMatrix RotationMatrix::about_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    RotationMatrix r;
    r.m = {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
    return r;
}

RotationMatrix RotationMatrix::about_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    RotationMatrix r;
    r.m = {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
    return r;
}

RotationMatrix RotationMatrix::about_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    RotationMatrix r;
    r.m = {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
    return r;
}

RotationMatrix RotationMatrix::axis_angle(const Vec3& axis, double a) {
    const Vec3 u = normalized(axis);
    const double c = std::cos(a), s = std::sin(a), t = 1.0 - c;
    RotationMatrix r;
    r.m = {{{t * u.x * u.x + c, t * u.x * u.y - s * u.z, t * u.x * u.z + s * u.y},
            {t * u.x * u.y + s * u.z, t * u.y * u.y + c, t * u.y * u.z - s * u.x},
            {t * u.x * u.z - s * u.y, t * u.y * u.z + s * u.x, t * u.z * u.z + c}}};
    return r;
}

RotationMatrix RotationMatrix::operator*(const RotationMatrix& o) const {
    RotationMatrix r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += m[i][k] * o.m[k][j];
            r.m[i][j] = acc;
        }
    return r;
}

Vec3 RotationMatrix::operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z, m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

RotationMatrix RotationMatrix::transposed() const {
    RotationMatrix r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
}

double RotationMatrix::determinant() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

bool RotationMatrix::is_rotation(double tol) const {
    const RotationMatrix rtr = transposed() * *this;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!(std::abs(rtr.m[i][j] - (i == j ? 1.0 : 0.0)) <= tol)) return false;
    return std::abs(determinant() - 1.0) <= tol;
}

void CameraPose::validate() const {
    if (!(azimuth >= -180.0 && azimuth <= 180.0)) throw std::invalid_argument("azimuth outside [-180, 180]");
    if (!(elevation >= -90.0 && elevation <= 90.0)) throw std::invalid_argument("elevation outside [-90, 90]");
    if (!std::isfinite(theta)) throw std::invalid_argument("theta not finite");
    if (!(distance > 0.0) || !std::isfinite(distance)) throw std::invalid_argument("distance must be positive");
}

RotationMatrix pose_to_rotation(const CameraPose& pose) {
    return RotationMatrix::about_z(deg2rad(pose.theta)) * RotationMatrix::about_x(deg2rad(pose.elevation)) *
           RotationMatrix::about_y(deg2rad(pose.azimuth));
}

namespace {

std::vector<double> axis_values(AngleRange r, double step, const char* name) {
    if (!(step > 0.0)) throw std::invalid_argument(std::string(name) + " step must be positive");
    if (!(r.hi >= r.lo)) throw std::invalid_argument(std::string(name) + " range is empty");
    const int count = static_cast<int>(std::floor((r.hi - r.lo) / step + 1e-9)) + 1;
    std::vector<double> v(count);
    for (int i = 0; i < count; ++i) v[i] = r.lo + i * step;
    return v;
}

}  // namespace

std::vector<CameraPose> camera_grid(AngleRange azimuth, AngleRange elevation, double azimuth_step,
                                    double elevation_step) {
    const auto az = axis_values(azimuth, azimuth_step, "azimuth");
    const auto el = axis_values(elevation, elevation_step, "elevation");
    std::vector<CameraPose> poses;
    poses.reserve(az.size() * el.size());
    for (double e : el)
        for (double a : az) {
            CameraPose p{a, e, 0.0, 1.0};
            p.validate();
            poses.push_back(p);
        }
    return poses;
}

void Mesh::validate() const {
    const int nv = static_cast<int>(vertices.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Face& face = faces[f];
        for (int idx : face)
            if (idx < 0 || idx >= nv)
                throw std::invalid_argument("face " + std::to_string(f) + " references missing vertex " +
                                            std::to_string(idx));
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            throw std::invalid_argument("face " + std::to_string(f) + " repeats a vertex");
        const Vec3 n = cross(vertices[face[1]] - vertices[face[0]], vertices[face[2]] - vertices[face[0]]);
        if (!(norm(n) > 1e-12)) throw std::invalid_argument("face " + std::to_string(f) + " has zero area");
    }
}

Mesh Mesh::transformed(const RotationMatrix& r) const {
    Mesh out = *this;
    for (auto& v : out.vertices) v = r * v;
    return out;
}

std::size_t NormalMap::foreground_count() const {
    return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), is_foreground));
}

namespace {

Framing framing_for(const Mesh& mesh) {
    Vec3 c;
    for (const auto& v : mesh.vertices) c = c + v;
    c = c * (1.0 / static_cast<double>(mesh.vertices.size()));
    double radius = 0.0;
    for (const auto& v : mesh.vertices) radius = std::max(radius, norm(v - c));
    return {c, radius > 0.0 ? radius : 1.0};
}

}  // namespace

NormalMap rasterize_normal_map(const Mesh& mesh, const CameraPose& pose, int resolution, const RenderOptions& options) {
    if (resolution < 8) throw std::invalid_argument("resolution must be at least 8");
    if (!(options.fill_fraction > 0.0)) throw std::invalid_argument("fill fraction must be positive");
    pose.validate();
    mesh.validate();

    NormalMap out(resolution, resolution);
    if (mesh.vertices.empty() || mesh.faces.empty()) return out;

    const Framing framing = options.framing ? *options.framing : framing_for(mesh);
    const RotationMatrix rot = pose_to_rotation(pose);
    const double half = 0.5 * resolution;
    const double scale = options.fill_fraction * half / framing.radius;

    // Camera-space positions, then screen positions (x right, y down).
    std::vector<Vec3> cam(mesh.vertices.size());
    std::vector<std::array<double, 2>> screen(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        cam[i] = rot * (mesh.vertices[i] - framing.center);
        screen[i] = {half + cam[i].x * scale, half - cam[i].y * scale};
    }

    std::vector<double> depth(static_cast<std::size_t>(resolution) * resolution,
                              -std::numeric_limits<double>::infinity());

    for (const Face& f : mesh.faces) {
        const Vec3 n = cross(cam[f[1]] - cam[f[0]], cam[f[2]] - cam[f[0]]);
        if (!(n.z > 0.0)) continue;  // back-facing or edge-on
        const Vec3 normal = normalized(n);

        const auto& a = screen[f[0]];
        const auto& b = screen[f[1]];
        const auto& c = screen[f[2]];
        const double area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if (area == 0.0) continue;

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a[0], b[0], c[0]}) - 0.5)));
        const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a[0], b[0], c[0]}) - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a[1], b[1], c[1]}) - 0.5)));
        const int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(std::max({a[1], b[1], c[1]}) - 0.5)));

        for (int py = y0; py <= y1; ++py) {
            const double sy = py + 0.5;
            for (int px = x0; px <= x1; ++px) {
                const double sx = px + 0.5;
                double w0 = (b[0] - sx) * (c[1] - sy) - (b[1] - sy) * (c[0] - sx);
                double w1 = (c[0] - sx) * (a[1] - sy) - (c[1] - sy) * (a[0] - sx);
                double w2 = (a[0] - sx) * (b[1] - sy) - (a[1] - sy) * (b[0] - sx);
                if (area < 0) {
                    w0 = -w0;
                    w1 = -w1;
                    w2 = -w2;
                }
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                const double inv = 1.0 / std::abs(area);
                const double z = (w0 * cam[f[0]].z + w1 * cam[f[1]].z + w2 * cam[f[2]].z) * inv;
                double& d = depth[static_cast<std::size_t>(py) * resolution + px];
                if (z > d) {
                    d = z;
                    out.at(px, py) = normal;
                }
            }
        }
    }
    return out;
}

ShadedImage shade_normal_map(const NormalMap& normals, const ShadeParams& shade) {
    if (std::abs(norm(shade.light_dir) - 1.0) > 1e-6) throw std::invalid_argument("light direction must be unit length");
    ShadedImage img(normals.width, normals.height);
    const double albedo[3] = {shade.albedo.r, shade.albedo.g, shade.albedo.b};
    const double bg[3] = {shade.background.r, shade.background.g, shade.background.b};
    for (int y = 0; y < normals.height; ++y)
        for (int x = 0; x < normals.width; ++x) {
            const Vec3& n = normals.at(x, y);
            const bool fg = NormalMap::is_foreground(n);
            const double lambert = fg ? std::max(0.0, dot(n, shade.light_dir)) : 0.0;
            for (int c = 0; c < 3; ++c) {
                double v = fg ? albedo[c] * lambert + shade.ambient : bg[c];
                v = std::clamp(v, 0.0, 1.0);
                img.at(x, y, c) = 2.0 * v - 1.0;
            }
        }
    return img;
}

ShadedImage shade_image(const Mesh& mesh, const CameraPose& pose, const ShadeParams& shade, int resolution,
                        const RenderOptions& options) {
    return shade_normal_map(rasterize_normal_map(mesh, pose, resolution, options), shade);
}

PrimitiveKind parse_primitive_kind(std::string_view name) {
    if (name == "box") return PrimitiveKind::box;
    if (name == "sphere") return PrimitiveKind::sphere;
    if (name == "cylinder") return PrimitiveKind::cylinder;
    if (name == "composite") return PrimitiveKind::composite;
    throw std::invalid_argument("unknown primitive kind '" + std::string(name) + "'");
}

std::string to_string(PrimitiveKind kind) {
    switch (kind) {
        case PrimitiveKind::box: return "box";
        case PrimitiveKind::sphere: return "sphere";
        case PrimitiveKind::cylinder: return "cylinder";
        case PrimitiveKind::composite: return "composite";
    }
    return "unknown";
}

namespace {

// Appends a triangle wound counter-clockwise as seen from outside, given a
// point known to be inside the (convex) solid.
void add_outward(Mesh& m, int a, int b, int c, const Vec3& inside) {
    const Vec3& pa = m.vertices[a];
    const Vec3 n = cross(m.vertices[b] - pa, m.vertices[c] - pa);
    const Vec3 centroid = (pa + m.vertices[b] + m.vertices[c]) * (1.0 / 3.0);
    if (dot(n, centroid - inside) >= 0) m.faces.push_back({a, b, c});
    else m.faces.push_back({a, c, b});
}

void append_box(Mesh& m, const Vec3& size, const Vec3& center) {
    const int base = static_cast<int>(m.vertices.size());
    for (int i = 0; i < 8; ++i) {
        const double x = (i & 1) ? 0.5 : -0.5;
        const double y = (i & 2) ? 0.5 : -0.5;
        const double z = (i & 4) ? 0.5 : -0.5;
        m.vertices.push_back({center.x + x * size.x, center.y + y * size.y, center.z + z * size.z});
    }
    // Quads as corner-index quadruples in cyclic order.
    static constexpr int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                                        {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        add_outward(m, base + q[0], base + q[1], base + q[2], center);
        add_outward(m, base + q[0], base + q[2], base + q[3], center);
    }
}

Mesh make_icosphere(double radius, int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                               {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                               {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (auto& p : v) p = normalized(p);

    // Orient so that a face centre looks down the +z (camera) axis.
    Vec3 best{0, 0, -2};
    for (const Face& f : faces) {
        const Vec3 c = normalized(v[f[0]] + v[f[1]] + v[f[2]]);
        if (c.z > best.z) best = c;
    }
    const Vec3 axis = cross(best, {0, 0, 1});
    if (norm(axis) > 1e-12) {
        const RotationMatrix r = RotationMatrix::axis_angle(axis, std::acos(std::clamp(best.z, -1.0, 1.0)));
        for (auto& p : v) p = r * p;
    }

    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            v.push_back(normalized(v[a] + v[b]));
            const int idx = static_cast<int>(v.size()) - 1;
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<Face> next;
        next.reserve(faces.size() * 4);
        for (const Face& f : faces) {
            const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    Mesh m;
    for (auto& p : v) m.vertices.push_back(p * radius);
    for (const Face& f : faces) add_outward(m, f[0], f[1], f[2], {0, 0, 0});
    return m;
}

Mesh make_cylinder(double radius, double height, int segments) {
    Mesh m;
    const double h = 0.5 * height;
    for (int i = 0; i < segments; ++i) {
        const double a = 2.0 * kPi * i / segments;
        m.vertices.push_back({radius * std::cos(a), -h, radius * std::sin(a)});
        m.vertices.push_back({radius * std::cos(a), h, radius * std::sin(a)});
    }
    const int bottom = static_cast<int>(m.vertices.size());
    m.vertices.push_back({0, -h, 0});
    const int top = bottom + 1;
    m.vertices.push_back({0, h, 0});
    const Vec3 inside{0, 0, 0};
    for (int i = 0; i < segments; ++i) {
        const int j = (i + 1) % segments;
        const int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
        add_outward(m, b0, b1, t1, inside);
        add_outward(m, b0, t1, t0, inside);
        add_outward(m, bottom, b1, b0, inside);
        add_outward(m, top, t0, t1, inside);
    }
    return m;
}

}  // namespace

Mesh make_primitive(PrimitiveKind kind, const PrimitiveParams& params, std::uint64_t seed) {
    if (!(params.size.x > 0 && params.size.y > 0 && params.size.z > 0))
        throw std::invalid_argument("primitive dimensions must be positive");
    Mesh m;
    switch (kind) {
        case PrimitiveKind::box:
            append_box(m, params.size, {0, 0, 0});
            break;
        case PrimitiveKind::sphere:
            if (params.subdivisions < 0) throw std::invalid_argument("subdivisions must be non-negative");
            m = make_icosphere(params.size.x, params.subdivisions);
            break;
        case PrimitiveKind::cylinder:
            if (params.segments < 3) throw std::invalid_argument("cylinder needs at least 3 segments");
            m = make_cylinder(0.5 * params.size.x, params.size.y, params.segments);
            break;
        case PrimitiveKind::composite: {
            // Sofa-like: a seat, a back along -z and 0-2 arms, each randomly
            // sized, scaled by params.size.
            std::mt19937_64 rng(seed);
            const auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
            const int arms = std::uniform_int_distribution<int>(0, 2)(rng);
            const Vec3 s = params.size;
            const double width = u(0.8, 1.0), seat_h = u(0.2, 0.35), depth = u(0.4, 0.6);
            const double back_h = u(0.3, 0.55), back_t = u(0.1, 0.2);
            const double seat_y = -0.5 * (seat_h + back_h) + 0.5 * seat_h;
            append_box(m, {width * s.x, seat_h * s.y, depth * s.z}, {0, seat_y * s.y, 0});
            append_box(m, {width * s.x, (seat_h + back_h) * s.y, back_t * s.z},
                       {0, (seat_y - 0.5 * seat_h + 0.5 * (seat_h + back_h)) * s.y, -0.5 * (depth + back_t) * s.z});
            const int first_side = std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1;
            for (int a = 0; a < arms; ++a) {
                const double arm_t = u(0.08, 0.16), arm_h = u(0.1, 0.25);
                const double side = a == 0 ? first_side : -first_side;
                append_box(m, {arm_t * s.x, (seat_h + arm_h) * s.y, depth * s.z},
                           {side * 0.5 * (width + arm_t) * s.x, (seat_y - 0.5 * seat_h + 0.5 * (seat_h + arm_h)) * s.y, 0});
            }
            break;
        }
    }
    m.model_id = to_string(kind);
    m.validate();
    return m;
}

Mesh make_primitive(std::string_view kind, const PrimitiveParams& params, std::uint64_t seed) {
    return make_primitive(parse_primitive_kind(kind), params, seed);
}

Mesh read_obj(std::istream& in, std::string model_id) {
    Mesh m;
    m.model_id = std::move(model_id);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x >> p.y >> p.z))
                throw std::runtime_error("obj line " + std::to_string(line_no) + ": malformed vertex");
            m.vertices.push_back(p);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                const std::string head = tok.substr(0, tok.find('/'));
                int i = 0;
                try {
                    i = std::stoi(head);
                } catch (const std::exception&) {
                    throw std::runtime_error("obj line " + std::to_string(line_no) + ": bad face index '" + tok + "'");
                }
                if (i == 0) throw std::runtime_error("obj line " + std::to_string(line_no) + ": face index 0");
                idx.push_back(i > 0 ? i - 1 : static_cast<int>(m.vertices.size()) + i);
            }
            if (idx.size() < 3) throw std::runtime_error("obj line " + std::to_string(line_no) + ": face needs 3 indices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) m.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
        // Other record types (vn, vt, o, g, s, usemtl, ...) carry nothing we render.
    }
    m.validate();
    return m;
}

Mesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open mesh file " + path);
    std::string stem = path.substr(path.find_last_of('/') + 1);
    stem = stem.substr(0, stem.find_last_of('.'));
    return read_obj(in, stem);
}

void write_obj(std::ostream& out, const Mesh& mesh) {
    out.precision(17);
    if (!mesh.model_id.empty()) out << "o " << mesh.model_id << '\n';
    for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

}  // namespace scgan::geometry
