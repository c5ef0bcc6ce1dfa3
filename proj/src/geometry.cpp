#include "unihand/geometry.hpp"

namespace unihand {

Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[size_t(i * 3 + k)] * b[size_t(k * 3 + j)];
            c[size_t(i * 3 + j)] = s;
        }
    return c;
}

Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

double mat3_det(const Mat3& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 mat3_inverse(const Mat3& m) {
    double det = mat3_det(m);
    if (std::fabs(det) < 1e-12) throw ValidationError("singular 3x3 matrix");
    double inv = 1.0 / det;
    Mat3 r;
    r[0] = (m[4] * m[8] - m[5] * m[7]) * inv;
    r[1] = (m[2] * m[7] - m[1] * m[8]) * inv;
    r[2] = (m[1] * m[5] - m[2] * m[4]) * inv;
    r[3] = (m[5] * m[6] - m[3] * m[8]) * inv;
    r[4] = (m[0] * m[8] - m[2] * m[6]) * inv;
    r[5] = (m[2] * m[3] - m[0] * m[5]) * inv;
    r[6] = (m[3] * m[7] - m[4] * m[6]) * inv;
    r[7] = (m[1] * m[6] - m[0] * m[7]) * inv;
    r[8] = (m[0] * m[4] - m[1] * m[3]) * inv;
    return r;
}

Mat4 mat4_identity() {
    Mat4 m{};
    m[0] = m[5] = m[10] = m[15] = 1.0;
    return m;
}

Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
    Mat4 c{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a[size_t(i * 4 + k)] * b[size_t(k * 4 + j)];
            c[size_t(i * 4 + j)] = s;
        }
    return c;
}

Vec3 mat4_apply_point(const Mat4& m, const Vec3& p) {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
}

Mat3 mat4_rotation(const Mat4& m) {
    return {m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]};
}

Vec3 mat4_translation(const Mat4& m) { return {m[3], m[7], m[11]}; }

Mat4 mat4_from_rt(const Mat3& r, const Vec3& t) {
    Mat4 m{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) m[size_t(i * 4 + j)] = r[size_t(i * 3 + j)];
        m[size_t(i * 4 + 3)] = t[size_t(i)];
    }
    m[15] = 1.0;
    return m;
}

Mat4 mat4_rigid_inverse(const Mat4& m) {
    Mat3 r = mat4_rotation(m);
    Vec3 t = mat4_translation(m);
    // R^T, -R^T t
    Mat3 rt = {r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]};
    Vec3 it = -1.0 * mat3_apply(rt, t);
    return mat4_from_rt(rt, it);
}

double rotation_orthonormality_error(const Mat4& pose) {
    Mat3 r = mat4_rotation(pose);
    Mat3 rt = {r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]};
    Mat3 p = mat3_mul(rt, r);
    Mat3 id = mat3_identity();
    double err = 0.0;
    for (int i = 0; i < 9; ++i) err = std::max(err, std::fabs(p[size_t(i)] - id[size_t(i)]));
    return err;
}

bool pinhole_project(const Pinhole& k, const Vec3& p, double& u, double& v) {
    if (p[2] <= 1e-9) return false;
    u = k.cx + k.fx * p[0] / p[2];
    v = k.cy + k.fy * p[1] / p[2];
    return true;
}

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    Vec3 z = normalized(target - eye);       // forward
    Vec3 x = normalized(cross(-1.0 * up, z)); // right, with +y down
    Vec3 y = cross(z, x);                     // down
    Mat3 r = {x[0], y[0], z[0], x[1], y[1], z[1], x[2], y[2], z[2]}; // columns are axes
    return mat4_from_rt(r, eye);
}

Mat3 plane_homography(const Pinhole& kk, const Mat4& dst_from_src, const Vec3& n_src,
                      double d_src) {
    if (std::fabs(d_src) < 1e-9)
        throw ValidationError("plane passes through the source camera center");
    Mat3 r = mat4_rotation(dst_from_src);
    Vec3 t = mat4_translation(dst_from_src);
    Mat3 m = r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            m[size_t(i * 3 + j)] += t[size_t(i)] * n_src[size_t(j)] / d_src;
    Mat3 k = {kk.fx, 0, kk.cx, 0, kk.fy, kk.cy, 0, 0, 1};
    Mat3 kinv = {1.0 / kk.fx, 0, -kk.cx / kk.fx, 0, 1.0 / kk.fy, -kk.cy / kk.fy, 0, 0, 1};
    Mat3 h = mat3_mul(k, mat3_mul(m, kinv));
    if (std::fabs(h[8]) < 1e-12) throw ValidationError("degenerate plane homography");
    for (auto& x : h) x /= h[8];
    h[8] = 1.0;
    return h;
}

void homography_apply(const Mat3& h, double u, double v, double& ou, double& ov, double& ow) {
    ow = h[6] * u + h[7] * v + h[8];
    ou = h[0] * u + h[1] * v + h[2];
    ov = h[3] * u + h[4] * v + h[5];
    if (std::fabs(ow) > 1e-300) {
        ou /= ow;
        ov /= ow;
    }
}

} // namespace unihand
