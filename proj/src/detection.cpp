#include "v2vlc/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace v2vlc {

using ag::Var;

HeaderParams::HeaderParams(int channels, ParamStore& store, Rng& rng, const std::string& prefix) {
    score_w = store.add(prefix + ".score.w", init_conv_weight(1, channels, 1, 1, rng));
    score_b = store.add(prefix + ".score.b", Tensor({1}));
    reg_w = store.add(prefix + ".reg.w", init_conv_weight(7, channels, 1, 1, rng));
    reg_b = store.add(prefix + ".reg.b", Tensor({7}));
}

HeaderParams::HeaderParams(int channels, const ParamStore& store, const std::string& prefix) {
    (void)channels;
    score_w = store.get(prefix + ".score.w");
    score_b = store.get(prefix + ".score.b");
    reg_w = store.get(prefix + ".reg.w");
    reg_b = store.get(prefix + ".reg.b");
}

HeadOutput detect(const Var& fused, const HeaderParams& params) {
    HeadOutput out;
    out.scores = ag::sigmoid(ag::conv2d(fused, params.score_w, params.score_b, ops::Padding::Same));
    out.regression = ag::conv2d(fused, params.reg_w, params.reg_b, ops::Padding::Same);
    return out;
}

Var focal_loss(const Var& pred, const Tensor& target, double gamma, double alpha) {
    if (!pred->value.same_shape(target))
        throw DimensionError("focal loss shape mismatch: " + shape_str(pred->value.shape) +
                             " vs " + shape_str(target.shape));
    constexpr double kEps = 1e-7;
    const std::size_t n = pred->value.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = target.data[i];
        const double p = std::clamp(pred->value.data[i], kEps, 1.0 - kEps);
        const double pt = t > 0.5 ? p : 1.0 - p;
        const double at = alpha < 0 ? 1.0 : (t > 0.5 ? alpha : 1.0 - alpha);
        total += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    Tensor tgt = target;
    return ag::make_node(Tensor::scalar(total / static_cast<double>(n)), {pred},
                         [pred, tgt, gamma, alpha, n, kEps](ag::Node& node) {
        const double g = node.grad.data[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = tgt.data[i];
            const double p = std::clamp(pred->value.data[i], kEps, 1.0 - kEps);
            const double pt = t > 0.5 ? p : 1.0 - p;
            const double at = alpha < 0 ? 1.0 : (t > 0.5 ? alpha : 1.0 - alpha);
            // d/dpt of -at (1-pt)^gamma log(pt)
            double d = -at * ((1.0 - pt) > 0 && gamma != 0.0
                                  ? -gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt)
                                  : 0.0) -
                       at * std::pow(1.0 - pt, gamma) / pt;
            if (t <= 0.5) d = -d;  // pt = 1 - p
            pred->grad.data[i] += g * d;
        }
    });
}

SmoothL1Result smooth_l1(const Var& pred, const Tensor& target, const Tensor& pos_mask,
                         double beta) {
    if (!pred->value.same_shape(target))
        throw DimensionError("smooth_l1 shape mismatch: " + shape_str(pred->value.shape) +
                             " vs " + shape_str(target.shape));
    const int d = pred->value.shape[0];
    const int h = pred->value.shape[1], w = pred->value.shape[2];
    long n_pos = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (pos_mask(0, i, j) > 0.5) ++n_pos;
    SmoothL1Result res;
    if (n_pos == 0) {
        res.loss = ag::constant(Tensor::scalar(0.0));
        res.had_positives = false;
        return res;
    }
    const double denom = static_cast<double>(n_pos) * d;
    double total = 0.0;
    for (int c = 0; c < d; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                if (pos_mask(0, i, j) <= 0.5) continue;
                const double x = pred->value(c, i, j) - target(c, i, j);
                total += std::abs(x) < beta ? 0.5 * x * x / beta : std::abs(x) - 0.5 * beta;
            }
    Tensor tgt = target, mask = pos_mask;
    res.loss = ag::make_node(Tensor::scalar(total / denom), {pred},
                             [pred, tgt, mask, beta, denom, d, h, w](ag::Node& node) {
        const double g = node.grad.data[0] / denom;
        for (int c = 0; c < d; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    if (mask(0, i, j) <= 0.5) continue;
                    const double x = pred->value(c, i, j) - tgt(c, i, j);
                    const double dx = std::abs(x) < beta ? x / beta : (x > 0 ? 1.0 : -1.0);
                    pred->grad(c, i, j) += g * dx;
                }
    });
    return res;
}

Var total_loss(const Var& l_det, const Var& l_lc, double mu, double lambda) {
    return ag::add(ag::scale(l_det, mu), ag::scale(l_lc, lambda));
}

namespace {

struct Pt {
    double x, y;
};

std::vector<Pt> box_corners(const Box3D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = b.l / 2, hw = b.w / 2;
    std::vector<Pt> out;
    const double dx[4] = {hl, hl, -hl, -hl};
    const double dy[4] = {hw, -hw, -hw, hw};
    for (int i = 0; i < 4; ++i)
        out.push_back({b.x + c * dx[i] - s * dy[i], b.y + s * dx[i] + c * dy[i]});
    return out;
}

double polygon_area(const std::vector<Pt>& p) {
    double a = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % p.size()];
        a += u.x * v.y - v.x * u.y;
    }
    return std::abs(a) / 2.0;
}

// Sutherland–Hodgman clip of subject against convex clip polygon (ccw)
std::vector<Pt> clip_polygon(std::vector<Pt> subject, const std::vector<Pt>& clip) {
    for (std::size_t i = 0; i < clip.size() && !subject.empty(); ++i) {
        const Pt a = clip[i];
        const Pt b = clip[(i + 1) % clip.size()];
        auto inside = [&](const Pt& p) {
            return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= -1e-12;
        };
        auto intersect = [&](const Pt& p, const Pt& q) {
            const double a1 = b.y - a.y, b1 = a.x - b.x;
            const double c1 = a1 * a.x + b1 * a.y;
            const double a2 = q.y - p.y, b2 = p.x - q.x;
            const double c2 = a2 * p.x + b2 * p.y;
            const double det = a1 * b2 - a2 * b1;
            return Pt{(b2 * c1 - b1 * c2) / det, (a1 * c2 - a2 * c1) / det};
        };
        std::vector<Pt> out;
        for (std::size_t j = 0; j < subject.size(); ++j) {
            const Pt p = subject[j];
            const Pt q = subject[(j + 1) % subject.size()];
            const bool pin = inside(p), qin = inside(q);
            if (pin && qin) {
                out.push_back(q);
            } else if (pin && !qin) {
                out.push_back(intersect(p, q));
            } else if (!pin && qin) {
                out.push_back(intersect(p, q));
                out.push_back(q);
            }
        }
        subject = std::move(out);
    }
    return subject;
}

std::vector<Pt> make_ccw(std::vector<Pt> p) {
    double a = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % p.size()];
        a += u.x * v.y - v.x * u.y;
    }
    if (a < 0) std::reverse(p.begin(), p.end());
    return p;
}

}  // namespace

double iou_bev(const Box3D& a, const Box3D& b) {
    const auto pa = make_ccw(box_corners(a));
    const auto pb = make_ccw(box_corners(b));
    const auto inter = clip_polygon(pa, pb);
    if (inter.size() < 3) return 0.0;
    const double ai = polygon_area(inter);
    const double au = polygon_area(pa) + polygon_area(pb) - ai;
    if (au <= 0) return 0.0;
    return std::clamp(ai / au, 0.0, 1.0);
}

ApResult average_precision(const DetectionSet& dets, const std::vector<Box3D>& gts,
                           double iou_thresh, const RangeFilter& range) {
    ApResult res;
    std::vector<Box3D> gt;
    for (const auto& b : gts)
        if (range.contains(b)) gt.push_back(b);
    if (gt.empty()) {
        res.defined = false;
        return res;
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < dets.boxes.size(); ++i)
        if (range.contains(dets.boxes[i])) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets.scores[a] > dets.scores[b];
    });

    std::vector<bool> claimed(gt.size(), false);
    long tp = 0, fp = 0;
    const double n_gt = static_cast<double>(gt.size());
    for (std::size_t idx : order) {
        double best = iou_thresh;
        int best_g = -1;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (claimed[g]) continue;
            const double iou = iou_bev(dets.boxes[idx], gt[g]);
            if (iou >= best) {
                best = iou;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0) {
            claimed[best_g] = true;
            ++tp;
        } else {
            ++fp;
        }
        res.precisions.push_back(static_cast<double>(tp) / (tp + fp));
        res.recalls.push_back(static_cast<double>(tp) / n_gt);
    }
    // all-point interpolation: area under the precision envelope
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < res.recalls.size(); ++i) {
        double env = 0.0;
        for (std::size_t j = i; j < res.precisions.size(); ++j) env = std::max(env, res.precisions[j]);
        if (res.recalls[i] > prev_recall) {
            ap += (res.recalls[i] - prev_recall) * env;
            prev_recall = res.recalls[i];
        }
    }
    res.ap = ap;
    return res;
}

DetectionSet nms(const DetectionSet& dets, double iou_thresh) {
    std::vector<std::size_t> order(dets.boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets.scores[a] > dets.scores[b];
    });
    DetectionSet out;
    std::vector<bool> removed(dets.boxes.size(), false);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (removed[order[i]]) continue;
        out.boxes.push_back(dets.boxes[order[i]]);
        out.scores.push_back(dets.scores[order[i]]);
        for (std::size_t j = i + 1; j < order.size(); ++j)
            if (!removed[order[j]] &&
                iou_bev(dets.boxes[order[i]], dets.boxes[order[j]]) > iou_thresh)
                removed[order[j]] = true;
    }
    return out;
}

void save_boxes(const std::string& path, const std::vector<Box3D>& boxes,
                const std::vector<double>* scores) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write boxes to " + path);
    os.precision(9);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        os << b.x << " " << b.y << " " << b.z << " " << b.l << " " << b.w << " " << b.h << " "
           << b.yaw;
        if (scores) os << " " << (*scores)[i];
        os << "\n";
    }
}

DetectionSet load_boxes(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read boxes from " + path);
    DetectionSet out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Box3D b;
        double score = 1.0;
        if (!(ls >> b.x >> b.y >> b.z >> b.l >> b.w >> b.h >> b.yaw))
            throw std::runtime_error("malformed box record: " + line);
        ls >> score;
        b.yaw = normalize_angle(b.yaw);
        out.boxes.push_back(b);
        out.scores.push_back(score);
    }
    return out;
}

}  // namespace v2vlc
