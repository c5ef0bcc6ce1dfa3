#pragma once

#include <array>
#include <cmath>

#include "unihand/errors.hpp"

namespace unihand {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major
using Mat4 = std::array<double, 16>; // row-major rigid transform

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
    double n = norm(a);
    if (n < 1e-300) throw ValidationError("normalizing zero-length vector");
    return (1.0 / n) * a;
}

Mat3 mat3_identity();
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Vec3 mat3_apply(const Mat3& m, const Vec3& v);
double mat3_det(const Mat3& m);
Mat3 mat3_inverse(const Mat3& m);

Mat4 mat4_identity();
Mat4 mat4_mul(const Mat4& a, const Mat4& b);
Vec3 mat4_apply_point(const Mat4& m, const Vec3& p);
// Inverse of a rigid transform (rotation + translation).
Mat4 mat4_rigid_inverse(const Mat4& m);
Mat4 mat4_from_rt(const Mat3& r, const Vec3& t);
Mat3 mat4_rotation(const Mat4& m);
Vec3 mat4_translation(const Mat4& m);

// Max absolute deviation of R^T R from identity.
double rotation_orthonormality_error(const Mat4& pose);

// Camera conventions: +x right, +y down, +z forward (optical axis).
struct Pinhole {
    double fx = 300.0, fy = 300.0, cx = 320.0, cy = 240.0;
    int width = 640, height = 480;
};

// Projects a camera-frame point. Returns false when the point is not in
// front of the camera (z <= 0).
bool pinhole_project(const Pinhole& k, const Vec3& p_cam, double& u, double& v);

// world_from_camera pose for a camera at eye looking at target, with the
// world up direction mapping to camera -y.
Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

// Homography induced by the plane n.X = d (expressed in the source camera
// frame) between two cameras, mapping source pixels to destination pixels.
// dst_from_src is the rigid transform taking source-camera coordinates to
// destination-camera coordinates. Normalized so H[2][2] = 1.
Mat3 plane_homography(const Pinhole& k, const Mat4& dst_from_src, const Vec3& n_src,
                      double d_src);

// Applies a homography to a pixel. Returns the homogeneous w so callers can
// flag points that map behind the canvas (w <= 0).
void homography_apply(const Mat3& h, double u, double v, double& ou, double& ov, double& ow);

} // namespace unihand
