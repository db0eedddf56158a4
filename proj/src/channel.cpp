#include "v2vlc/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace v2vlc {

FeatureMap::FeatureMap(Tensor t, double vmin, double vmax)
    : tensor(std::move(t)), value_min(vmin), value_max(vmax) {
    if (tensor.rank() != 3)
        throw DimensionError("feature map must be C×H×W, got " + shape_str(tensor.shape));
    if (value_min > value_max) throw std::invalid_argument("feature value range inverted");
}

std::size_t CorruptionMask::replaced_count() const {
    return static_cast<std::size_t>(std::count(replaced.begin(), replaced.end(), 1));
}

double sample_transmission_p(const ChannelConfig& cfg, Rng& rng) {
    if (!cfg.resample_p)
        throw std::invalid_argument("sample_transmission_p called with fixed p");
    return rng.uniform();
}

ChannelResult apply_channel(const FeatureMap& f, const ChannelConfig& cfg, Rng& rng) {
    ChannelResult res;
    res.feature = f;
    res.mask.replaced.assign(f.tensor.size(), 0);

    if (cfg.mode == ChannelMode::Ideal) return res;

    double p = cfg.p;
    if (cfg.resample_p)
        p = rng.uniform();
    else if (p < 0.0 || p > 1.0)
        throw std::invalid_argument("channel p must lie in [0,1], got " + std::to_string(p));
    res.effective_p = p;

    const double lo = cfg.has_noise_range ? cfg.noise_min : f.value_min;
    const double hi = cfg.has_noise_range ? cfg.noise_max : f.value_max;

    if (cfg.mode == ChannelMode::GlobalLossy) {
        for (std::size_t i = 0; i < f.tensor.size(); ++i)
            if (rng.uniform() < p) {
                res.feature.tensor.data[i] = rng.uniform(lo, hi);
                res.mask.replaced[i] = 1;
            }
    } else {  // ChannelwiseLossy: exactly ⌊p·C⌋ whole channels replaced
        const int c = f.channels();
        const int n_corrupt = static_cast<int>(std::floor(p * c));
        std::vector<int> order(c);
        std::iota(order.begin(), order.end(), 0);
        // partial Fisher-Yates for a uniform sample without replacement
        for (int i = 0; i < n_corrupt; ++i)
            std::swap(order[i], order[i + rng.uniform_int(c - i)]);
        res.mask.corrupted_channels.assign(order.begin(), order.begin() + n_corrupt);
        std::sort(res.mask.corrupted_channels.begin(), res.mask.corrupted_channels.end());
        const std::size_t plane = static_cast<std::size_t>(f.height()) * f.width();
        for (int ch : res.mask.corrupted_channels) {
            const std::size_t base = static_cast<std::size_t>(ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                res.feature.tensor.data[base + i] = rng.uniform(lo, hi);
                res.mask.replaced[base + i] = 1;
            }
        }
    }
    return res;
}

}  // namespace v2vlc
