#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scgan::geometry {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    bool operator==(const Vec3&) const = default;
};

double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);
Vec3 normalized(const Vec3& a);

// Proper rotation, row-major. Maps world coordinates to camera coordinates
// when produced by pose_to_rotation.
struct RotationMatrix {
    std::array<std::array<double, 3>, 3> m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

    static RotationMatrix identity() { return {}; }
    static RotationMatrix about_x(double radians);
    static RotationMatrix about_y(double radians);
    static RotationMatrix about_z(double radians);
    // Rotation by `radians` about a (not necessarily unit) axis.
    static RotationMatrix axis_angle(const Vec3& axis, double radians);

    RotationMatrix operator*(const RotationMatrix& o) const;
    Vec3 operator*(const Vec3& v) const;
    RotationMatrix transposed() const;
    double trace() const { return m[0][0] + m[1][1] + m[2][2]; }
    double determinant() const;
    // R^T R = I and det R = 1, elementwise within tol.
    bool is_rotation(double tol = 1e-9) const;
};

struct CameraPose {
    double azimuth = 0;    // degrees, about the world up axis
    double elevation = 0;  // degrees, camera pitched down toward the object
    double theta = 0;      // degrees, roll about the optical axis
    double distance = 1;   // object units; orthographic rendering ignores it

    void validate() const;
    bool operator==(const CameraPose&) const = default;
};

// R = R_roll(theta) * R_pitch(elevation) * R_yaw(azimuth).
RotationMatrix pose_to_rotation(const CameraPose& pose);

struct AngleRange {
    double lo = 0, hi = 0;
};

// Inclusive Cartesian grid over azimuth x elevation with theta = 0.
std::vector<CameraPose> camera_grid(AngleRange azimuth, AngleRange elevation, double azimuth_step,
                                    double elevation_step);

using Face = std::array<int, 3>;

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::string model_id;

    // Throws std::invalid_argument on out-of-range indices or degenerate faces.
    void validate() const;
    Mesh transformed(const RotationMatrix& r) const;
};

// Camera-space unit normals; the zero vector marks background.
struct NormalMap {
    int width = 0, height = 0;
    std::vector<Vec3> pixels;

    NormalMap() = default;
    NormalMap(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h) {}

    Vec3& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    const Vec3& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    static bool is_foreground(const Vec3& v) { return v.x != 0.0 || v.y != 0.0 || v.z != 0.0; }
    std::size_t foreground_count() const;
    bool operator==(const NormalMap&) const = default;
};

struct Rgb {
    double r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

// Interleaved RGB with channel values in [-1, 1].
struct ShadedImage {
    int width = 0, height = 0;
    std::vector<double> pixels;

    ShadedImage() = default;
    ShadedImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {}

    double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const ShadedImage&) const = default;
};

// World-space region mapped onto the frame: `center` lands in the middle and a
// sphere of `radius` spans fill_fraction of the frame width.
struct Framing {
    Vec3 center;
    double radius = 1;
};

struct RenderOptions {
    double fill_fraction = 0.75;
    // Derived from the mesh (vertex centroid, max vertex distance) when unset.
    std::optional<Framing> framing;
};

NormalMap rasterize_normal_map(const Mesh& mesh, const CameraPose& pose, int resolution,
                               const RenderOptions& options = {});

struct ShadeParams {
    Rgb albedo{1, 1, 1};
    Vec3 light_dir{0, 0, 1};  // camera space, unit length
    Rgb background{0, 0, 0};
    double ambient = 0.2;
};

ShadedImage shade_image(const Mesh& mesh, const CameraPose& pose, const ShadeParams& shade, int resolution,
                        const RenderOptions& options = {});

// Lambertian shading of an already rasterized normal map.
ShadedImage shade_normal_map(const NormalMap& normals, const ShadeParams& shade);

enum class PrimitiveKind { box, sphere, cylinder, composite };

PrimitiveKind parse_primitive_kind(std::string_view name);
std::string to_string(PrimitiveKind kind);

struct PrimitiveParams {
    Vec3 size{1, 1, 1};   // box extents; sphere uses size.x as radius; cylinder diameter x, height y
    int subdivisions = 2; // icosphere levels
    int segments = 16;    // cylinder sides
};

Mesh make_primitive(PrimitiveKind kind, const PrimitiveParams& params, std::uint64_t seed = 0);
Mesh make_primitive(std::string_view kind, const PrimitiveParams& params, std::uint64_t seed = 0);

// Wavefront-style v/f records. Polygons are fan-triangulated.
Mesh read_obj(std::istream& in, std::string model_id = {});
Mesh load_obj(const std::string& path);
void write_obj(std::ostream& out, const Mesh& mesh);

constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace scgan::geometry
