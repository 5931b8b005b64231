#include "lpad/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace lpad {

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (index_.count(name)) {
        throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
    }
    Entry e;
    e.name = name;
    e.trainable = trainable;
    if (trainable) {
        e.m = Tensor(value.shape);
        e.v = Tensor(value.shape);
    }
    e.value = std::move(value);
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return entries_[it->second];
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return entries_[it->second];
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParamStore::value(const std::string& name) const { return entry(name).value; }
bool ParamStore::trainable(const std::string& name) const { return entry(name).trainable; }

void ParamStore::adam_step(const std::unordered_map<std::string, Tensor>& grads, const AdamConfig& cfg) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (Entry& e : entries_) {
        if (!e.trainable) continue;
        auto it = grads.find(e.name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (g.shape != e.value.shape) {
            throw std::invalid_argument("ParamStore: gradient shape " + shape_str(g.shape) +
                                        " does not match parameter '" + e.name + "' " +
                                        shape_str(e.value.shape));
        }
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = e.m[i] / bc1;
            const double vhat = e.v[i] / bc2;
            e.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

std::int64_t ParamStore::trainable_count() const {
    std::int64_t n = 0;
    for (const Entry& e : entries_)
        if (e.trainable) n += e.value.numel();
    return n;
}

Tensor fan_init(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor out(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    for (auto& v : out.data) v = bound * (2.0 * rng.uniform() - 1.0);
    return out;
}

}  // namespace lpad
