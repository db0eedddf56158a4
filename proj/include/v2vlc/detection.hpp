#pragma once

#include <string>
#include <vector>

#include "v2vlc/checkpoint.hpp"
#include "v2vlc/geometry.hpp"

namespace v2vlc {

struct DetectionSet {
    std::vector<Box3D> boxes;
    std::vector<double> scores;  // matched, in [0,1]
};

struct HeaderParams {
    ag::Var score_w, score_b;  // 1×1 conv C→1
    ag::Var reg_w, reg_b;      // 1×1 conv C→7

    HeaderParams() = default;
    HeaderParams(int channels, ParamStore& store, Rng& rng, const std::string& prefix);
    HeaderParams(int channels, const ParamStore& store, const std::string& prefix);
};

struct HeadOutput {
    ag::Var scores;      // 1×H×W, sigmoid applied
    ag::Var regression;  // 7×H×W box deltas per anchor cell
};

HeadOutput detect(const ag::Var& fused, const HeaderParams& params);

// mean over cells of -alpha_t (1-p_t)^gamma log(p_t); alpha < 0 disables the
// alpha balance. Predictions are clamped to [1e-7, 1-1e-7] before the log.
ag::Var focal_loss(const ag::Var& pred, const Tensor& target, double gamma = 2.0,
                   double alpha = 0.25);

struct SmoothL1Result {
    ag::Var loss;
    bool had_positives = true;
};

// averaged over positive anchor cells only; pos_mask is 1×H×W with 1 at
// positive cells
SmoothL1Result smooth_l1(const ag::Var& pred, const Tensor& target, const Tensor& pos_mask,
                         double beta = 1.0);

ag::Var total_loss(const ag::Var& l_det, const ag::Var& l_lc, double mu, double lambda);

// rotated-rectangle intersection over union in the ground plane
double iou_bev(const Box3D& a, const Box3D& b);

struct RangeFilter {
    double x_min = -140, x_max = 140;
    double y_min = -40, y_max = 40;

    bool contains(const Box3D& b) const {
        return b.x >= x_min && b.x <= x_max && b.y >= y_min && b.y <= y_max;
    }
};

struct ApResult {
    double ap = 0.0;
    bool defined = true;  // false when there are no GT boxes in range
    std::vector<double> precisions;  // PR points in detection-score order
    std::vector<double> recalls;
};

// greedy matching, all-point interpolation
ApResult average_precision(const DetectionSet& dets, const std::vector<Box3D>& gts,
                           double iou_thresh, const RangeFilter& range = RangeFilter{});

DetectionSet nms(const DetectionSet& dets, double iou_thresh);

// text records, one per line: x y z l w h yaw [score]
void save_boxes(const std::string& path, const std::vector<Box3D>& boxes,
                const std::vector<double>* scores = nullptr);
DetectionSet load_boxes(const std::string& path);  // scores default to 1 when absent

}  // namespace v2vlc
