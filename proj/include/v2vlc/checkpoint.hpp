#pragma once

#include <map>
#include <string>
#include <vector>

#include "v2vlc/autograd.hpp"
#include "v2vlc/rng.hpp"

namespace v2vlc {

// Ordered, named collection of trainable parameters. Order of insertion is
// the optimizer's iteration order, which keeps updates deterministic.
class ParamStore {
public:
    ag::Var add(const std::string& name, Tensor init);
    // register an existing variable (used to rebind a model to external leaves)
    void add_var(const std::string& name, ag::Var v);
    ag::Var get(const std::string& name) const;
    bool has(const std::string& name) const;

    const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }

    void zero_grads();

    // Checkpoint directory: manifest.json + one tensor file per parameter.
    void save(const std::string& dir, const std::map<std::string, std::string>& meta = {}) const;
    void load(const std::string& dir);  // shapes must match existing entries

private:
    std::vector<std::pair<std::string, ag::Var>> entries_;
    std::map<std::string, std::size_t> index_;
};

// uniform(-limit, limit) with a fan-in based limit
Tensor init_conv_weight(int cout, int cin, int kh, int kw, Rng& rng);
Tensor init_uniform(Shape s, double limit, Rng& rng);

}  // namespace v2vlc
