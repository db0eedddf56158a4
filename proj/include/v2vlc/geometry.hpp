#pragma once

#include <string>
#include <vector>

#include "v2vlc/tensor.hpp"

namespace v2vlc {

double normalize_angle(double a);  // into (-pi, pi]

struct Pose {
    double x = 0, y = 0, z = 0;
    double yaw = 0, pitch = 0, roll = 0;  // radians, normalized to (-pi, pi]

    void normalize();
};

// 4x4 rigid transform; bottom row (0,0,0,1), rotation block orthonormal.
struct HomogeneousTransform {
    Tensor m;  // 4x4

    HomogeneousTransform() : m(Tensor::identity(4)) {}
    explicit HomogeneousTransform(Tensor t);

    HomogeneousTransform inverse() const;
    HomogeneousTransform compose(const HomogeneousTransform& other) const;  // this * other
    bool valid(double tol = 1e-6) const;
};

// world-from-pose transform; rotation order yaw -> pitch -> roll, intrinsic,
// right handed, z up: R = Rz(yaw) * Ry(pitch) * Rx(roll)
HomogeneousTransform pose_to_world(const Pose& p);

// transform taking CAV-frame coordinates into the ego frame
HomogeneousTransform transform_from_poses(const Pose& cav, const Pose& ego);

// points: N×4 homogeneous rows with fourth coordinate 1
Tensor project_points(const Tensor& points, const HomogeneousTransform& t);

struct Box3D {
    double x = 0, y = 0, z = 0;
    double l = 1, w = 1, h = 1;
    double yaw = 0;
};

struct SceneCav {
    int id = 0;
    Pose pose;
};

struct Scene {
    Pose ego;
    std::vector<SceneCav> cavs;  // neighbors only; ego is separate
    std::vector<Box3D> gt_boxes;
    double comm_range = 70.0;
};

Scene load_scene(const std::string& path);
void save_scene(const std::string& path, const Scene& s);

}  // namespace v2vlc
