#include "v2vlc/geometry.hpp"
#include "v2vlc/ops.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace v2vlc {

double normalize_angle(double a) {
    const double two_pi = 2.0 * M_PI;
    a = std::fmod(a, two_pi);
    if (a <= -M_PI) a += two_pi;
    if (a > M_PI) a -= two_pi;
    return a;
}

void Pose::normalize() {
    yaw = normalize_angle(yaw);
    pitch = normalize_angle(pitch);
    roll = normalize_angle(roll);
}

HomogeneousTransform::HomogeneousTransform(Tensor t) : m(std::move(t)) {
    if (m.rank() != 2 || m.shape[0] != 4 || m.shape[1] != 4)
        throw DimensionError("homogeneous transform must be 4x4, got " + shape_str(m.shape));
}

bool HomogeneousTransform::valid(double tol) const {
    if (m(3, 0) != 0 || m(3, 1) != 0 || m(3, 2) != 0 || m(3, 3) != 1) return false;
    // R Rᵀ = I and det(R) = +1
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double dot = 0;
            for (int k = 0; k < 3; ++k) dot += m(i, k) * m(j, k);
            if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
        }
    const double det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                       m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                       m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    return std::abs(det - 1.0) <= tol;
}

HomogeneousTransform HomogeneousTransform::inverse() const {
    // rigid inverse: Rᵀ, -Rᵀ t
    Tensor inv = Tensor::identity(4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) inv(i, j) = m(j, i);
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int j = 0; j < 3; ++j) s += inv(i, j) * m(j, 3);
        inv(i, 3) = -s;
    }
    return HomogeneousTransform(std::move(inv));
}

HomogeneousTransform HomogeneousTransform::compose(const HomogeneousTransform& other) const {
    return HomogeneousTransform(ops::matmul(m, other.m));
}

HomogeneousTransform pose_to_world(const Pose& p) {
    const double cy = std::cos(p.yaw), sy = std::sin(p.yaw);
    const double cp = std::cos(p.pitch), sp = std::sin(p.pitch);
    const double cr = std::cos(p.roll), sr = std::sin(p.roll);
    Tensor t = Tensor::identity(4);
    // R = Rz(yaw) Ry(pitch) Rx(roll)
    t(0, 0) = cy * cp;
    t(0, 1) = cy * sp * sr - sy * cr;
    t(0, 2) = cy * sp * cr + sy * sr;
    t(1, 0) = sy * cp;
    t(1, 1) = sy * sp * sr + cy * cr;
    t(1, 2) = sy * sp * cr - cy * sr;
    t(2, 0) = -sp;
    t(2, 1) = cp * sr;
    t(2, 2) = cp * cr;
    t(0, 3) = p.x;
    t(1, 3) = p.y;
    t(2, 3) = p.z;
    return HomogeneousTransform(std::move(t));
}

HomogeneousTransform transform_from_poses(const Pose& cav, const Pose& ego) {
    return pose_to_world(ego).inverse().compose(pose_to_world(cav));
}

Tensor project_points(const Tensor& points, const HomogeneousTransform& t) {
    if (points.rank() != 2 || points.shape[1] != 4)
        throw DimensionError("points must be N×4 homogeneous, got " + shape_str(points.shape));
    for (int i = 0; i < points.shape[0]; ++i)
        if (std::abs(points(i, 3) - 1.0) > 1e-9)
            throw std::invalid_argument("homogeneous point " + std::to_string(i) +
                                        " has fourth coordinate != 1");
    return ops::matmul(points, ops::transpose2d(t.m));
}

namespace {

using nlohmann::json;

json pose_to_json(const Pose& p) {
    return json{{"x", p.x}, {"y", p.y}, {"z", p.z},
                {"yaw", p.yaw}, {"pitch", p.pitch}, {"roll", p.roll}};
}

Pose pose_from_json(const json& j) {
    Pose p;
    p.x = j.value("x", 0.0);
    p.y = j.value("y", 0.0);
    p.z = j.value("z", 0.0);
    p.yaw = j.value("yaw", 0.0);
    p.pitch = j.value("pitch", 0.0);
    p.roll = j.value("roll", 0.0);
    p.normalize();
    return p;
}

}  // namespace

Scene load_scene(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open scene file: " + path);
    json j = json::parse(is);
    Scene s;
    s.ego = pose_from_json(j.at("ego_pose"));
    s.comm_range = j.value("comm_range", 70.0);
    for (const auto& c : j.value("cavs", json::array())) {
        SceneCav cav;
        cav.id = c.at("id").get<int>();
        cav.pose = pose_from_json(c.at("pose"));
        s.cavs.push_back(cav);
    }
    for (const auto& b : j.value("gt_boxes", json::array())) {
        Box3D box;
        box.x = b.at("x").get<double>();
        box.y = b.at("y").get<double>();
        box.z = b.at("z").get<double>();
        box.l = b.at("l").get<double>();
        box.w = b.at("w").get<double>();
        box.h = b.at("h").get<double>();
        box.yaw = normalize_angle(b.at("yaw").get<double>());
        s.gt_boxes.push_back(box);
    }
    return s;
}

void save_scene(const std::string& path, const Scene& s) {
    json j;
    j["ego_pose"] = pose_to_json(s.ego);
    j["comm_range"] = s.comm_range;
    j["cavs"] = json::array();
    for (const auto& c : s.cavs)
        j["cavs"].push_back(json{{"id", c.id}, {"pose", pose_to_json(c.pose)}});
    j["gt_boxes"] = json::array();
    for (const auto& b : s.gt_boxes)
        j["gt_boxes"].push_back(json{{"x", b.x}, {"y", b.y}, {"z", b.z},
                                     {"l", b.l}, {"w", b.w}, {"h", b.h}, {"yaw", b.yaw}});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write scene file: " + path);
    os << j.dump(2) << "\n";
}

}  // namespace v2vlc
