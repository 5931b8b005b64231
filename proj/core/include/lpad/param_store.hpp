#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lpad/rng.hpp"
#include "lpad/tensor.hpp"

namespace lpad {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named parameter tensors plus Adam moment accumulators. Entries keep their
/// registration order; every traversal uses that order, so updates are
/// deterministic. Buffers (trainable == false) hold state such as batch-norm
/// running statistics and are excluded from optimization.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;
        Tensor m, v;  // Adam moments, shapes mirror value
    };

    void add(const std::string& name, Tensor value, bool trainable = true);
    bool has(const std::string& name) const;
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    bool trainable(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    std::int64_t step_count() const { return step_; }
    void set_step_count(std::int64_t s) { step_ = s; }

    /// One Adam update over all trainable entries present in `grads`
    /// (registration order). Missing gradients are treated as zero updates.
    void adam_step(const std::unordered_map<std::string, Tensor>& grads, const AdamConfig& cfg);

    /// Total number of scalar parameters in trainable entries.
    std::int64_t trainable_count() const;

private:
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::int64_t step_ = 0;
};

/// Centered uniform init with fan-based scale: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_init(Shape shape, std::int64_t fan_in, Rng& rng);

}  // namespace lpad
