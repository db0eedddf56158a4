#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "v2vlc/attention.hpp"
#include "v2vlc/channel.hpp"
#include "v2vlc/detection.hpp"
#include "v2vlc/geometry.hpp"
#include "v2vlc/repair.hpp"

namespace v2vlc {

enum class Scheme { I, II };
enum class FusionKind { V2vam, AveFuse };

struct GeneratorParams {
    int n_train = 32;
    int n_eval = 16;
    int grid_c = 16;
    int grid_h = 32;
    int grid_w = 32;
    int boxes_min = 3, boxes_max = 8;
    int neighbors_min = 1, neighbors_max = 4;  // CAV count 1+N in [2,5]
    double box_l_min = 10, box_l_max = 16;
    double box_w_min = 3.5, box_w_max = 5.5;
    double box_h_min = 1.5, box_h_max = 2.5;
    double box_yaw_max = 0.35;
    double min_center_dist = 18.0;  // regenerate boxes closer than this
    double vis_half_angle = 2.2;    // radians; per-CAV visibility cone
    double vis_range = 170.0;
    double x_half = 140.0;          // grid covers x in [-x_half, x_half]
    double y_half = 40.0;           //             y in [-y_half, y_half]
    double comm_range = 70.0;
    double bump_amplitude = 5.0;
    double bump_sigma = 1.2;  // in cells
};

struct OptimizerParams {
    double lr = 1e-3;
    double decay_factor = 0.1;
    int decay_every_epochs = 10;
};

struct LossParams {
    double mu = 1.0;
    double lambda = 0.1;
    double gamma = 2.0;
    double alpha = 0.25;
};

struct DetectorParams {
    double score_threshold = 0.5;
    double nms_iou = 0.15;
    double anchor_l = 13.0, anchor_w = 4.5, anchor_h = 2.0;
};

struct ExperimentConfig {
    Scheme scheme = Scheme::I;
    ChannelConfig channel;
    bool lcrn = true;
    LcrnConfig lcrn_net;  // in_channels is overridden by generator.grid_c
    FusionKind fusion = FusionKind::V2vam;
    LossParams loss;
    OptimizerParams optimizer;
    DetectorParams detector;
    GeneratorParams generator;
    std::uint64_t seed = 1;
    int epochs = 10;
    RangeFilter eval_range;

    // channel actually used while training: Scheme I forces Ideal
    ChannelConfig training_channel() const;
};

ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

struct SceneFeatures {
    Scene scene;
    std::vector<FeatureMap> features;  // index 0 = ego, then neighbors by ascending id
    std::vector<std::vector<int>> visible_boxes;  // per feature slot, GT box indices
};

struct SyntheticScenePack {
    std::vector<SceneFeatures> train;
    std::vector<SceneFeatures> eval;
    double value_min = 0.0, value_max = 1.0;  // uncorrupted feature range
};

SyntheticScenePack generate_scenes(const GeneratorParams& gen, std::uint64_t seed);

// trainable parameter bundle for one configuration
struct Model {
    ParamStore store;
    std::optional<Lcrn> lcrn;
    IntraParams intra;
    InterParams inter;
    FusionHeadParams fusion_head;
    HeaderParams header;
    ag::Var ave_w, ave_b;  // AveFuse 1×1 conv
    FusionKind fusion = FusionKind::V2vam;
};

std::unique_ptr<Model> build_model(const ExperimentConfig& cfg);

// elementwise mean of ego+neighbor features followed by a 1×1 conv
ag::Var ave_fuse(const std::vector<ag::Var>& features, const ag::Var& w, const ag::Var& b);

struct PipelineDiagnostics {
    int apply_channel_calls = 0;
    bool ego_through_channel = false;  // must stay false
    std::vector<Tensor> corrupted;     // per neighbor
    std::vector<Tensor> repaired;
    Tensor fused;
    ag::Var loss_det, loss_lc, loss_total;
};

struct ForwardResult {
    DetectionSet detections;
    PipelineDiagnostics diag;
};

// Full end-to-end pass over one scene. `channel` selects the corruption
// applied to neighbor features; ego never traverses it.
ForwardResult forward_pipeline(const SceneFeatures& sf, const ExperimentConfig& cfg,
                               const Model& model, const ChannelConfig& channel,
                               std::uint64_t scene_key, bool with_loss = false,
                               const SyntheticScenePack* pack = nullptr);

struct EpochLog {
    int epoch = 0;
    double l_det = 0, l_lc = 0, l_total = 0, lr = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
};

TrainResult train(const ExperimentConfig& cfg, const SyntheticScenePack& pack, Model& model,
                  const std::string& run_dir = "");

struct ApRow {
    std::string mode;  // "ideal" or the configured lossy mode
    double ap50 = 0, ap70 = 0;
};

struct ApReport {
    std::vector<ApRow> rows;
    std::string to_json() const;  // deterministic serialization
};

ApReport evaluate(const ExperimentConfig& cfg, const SyntheticScenePack& pack, const Model& model);

// AP pooled over scenes: detections are matched only against their own
// scene's ground truth
double multi_scene_ap(const std::vector<std::pair<DetectionSet, std::vector<Box3D>>>& per_scene,
                      double iou_thresh, const RangeFilter& range);

// score/regression targets for one scene on the generator grid
struct Targets {
    Tensor score;      // 1×H×W binary
    Tensor regression; // 7×H×W deltas, valid at positive cells
};
Targets make_targets(const Scene& scene, const GeneratorParams& gen, const DetectorParams& det);

DetectionSet decode_detections(const Tensor& scores, const Tensor& regression,
                               const GeneratorParams& gen, const DetectorParams& det);

}  // namespace v2vlc
