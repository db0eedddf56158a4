#include "v2vlc/checkpoint.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace v2vlc {

namespace fs = std::filesystem;
using nlohmann::json;

ag::Var ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto v = ag::param(std::move(init));
    index_[name] = entries_.size();
    entries_.emplace_back(name, v);
    return v;
}

void ParamStore::add_var(const std::string& name, ag::Var v) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(v));
}

ag::Var ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return entries_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

void ParamStore::zero_grads() {
    for (auto& [name, v] : entries_)
        std::fill(v->grad.data.begin(), v->grad.data.end(), 0.0);
}

void ParamStore::save(const std::string& dir, const std::map<std::string, std::string>& meta) const {
    fs::create_directories(dir);
    json manifest;
    manifest["version"] = 1;
    manifest["params"] = json::array();
    for (const auto& [name, v] : entries_) {
        std::string file = name + ".v2vt";
        write_tensor((fs::path(dir) / file).string(), v->value);
        manifest["params"].push_back(json{{"name", name}, {"shape", v->value.shape}, {"file", file}});
    }
    for (const auto& [k, val] : meta) manifest["meta"][k] = val;
    std::ofstream os(fs::path(dir) / "manifest.json");
    os << manifest.dump(2) << "\n";
}

void ParamStore::load(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw std::runtime_error("cannot open checkpoint manifest in " + dir);
    json manifest = json::parse(is);
    for (const auto& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        Tensor t = read_tensor((fs::path(dir) / p.at("file").get<std::string>()).string());
        auto v = get(name);
        if (t.shape != v->value.shape)
            throw DimensionError("checkpoint shape mismatch for " + name + ": " +
                                 shape_str(t.shape) + " vs " + shape_str(v->value.shape));
        v->value = std::move(t);
    }
}

Tensor init_uniform(Shape s, double limit, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

Tensor init_conv_weight(int cout, int cin, int kh, int kw, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(cin) * kh * kw);
    return init_uniform({cout, cin, kh, kw}, limit, rng);
}

}  // namespace v2vlc
