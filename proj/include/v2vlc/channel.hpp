#pragma once

#include <cstdint>
#include <vector>

#include "v2vlc/rng.hpp"
#include "v2vlc/tensor.hpp"

namespace v2vlc {

struct FeatureMap {
    Tensor tensor;  // C×H×W
    double value_min = 0.0;
    double value_max = 1.0;

    FeatureMap() = default;
    explicit FeatureMap(Tensor t, double vmin = 0.0, double vmax = 1.0);

    int channels() const { return tensor.shape[0]; }
    int height() const { return tensor.shape[1]; }
    int width() const { return tensor.shape[2]; }
};

enum class ChannelMode { Ideal, GlobalLossy, ChannelwiseLossy };

struct ChannelConfig {
    ChannelMode mode = ChannelMode::Ideal;
    double p = 0.0;                // selection probability; ignored when resample_p
    bool resample_p = false;       // Scheme II: draw p ~ U[0,1] per transmission
    bool has_noise_range = false;  // when unset, defaults to the feature's value_range
    double noise_min = 0.0;
    double noise_max = 1.0;
    std::uint64_t seed = 0;
};

struct CorruptionMask {
    std::vector<std::uint8_t> replaced;  // one flag per scalar, row-major
    std::vector<int> corrupted_channels;

    std::size_t replaced_count() const;
};

struct ChannelResult {
    FeatureMap feature;
    CorruptionMask mask;
    double effective_p = 0.0;  // the p actually applied (after resampling)
};

// Lossy transmission of one feature map. Deterministic given the rng stream.
ChannelResult apply_channel(const FeatureMap& f, const ChannelConfig& cfg, Rng& rng);

// Scheme II: one fresh uniform draw of the transmission probability.
double sample_transmission_p(const ChannelConfig& cfg, Rng& rng);

}  // namespace v2vlc
