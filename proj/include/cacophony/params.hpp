#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cacophony/tensor.hpp"

#include <json.hpp>

namespace cacophony {

// Ordered collection of named trainable tensors. Iteration order is
// registration order, which fixes the flatten order used by SAM's global
// gradient norm and by checkpoints.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool decay;  // decoupled weight decay applies to this tensor
    };

    Tensor& add(const std::string& name, Tensor t, bool decay = true);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t count() const { return entries_.size(); }
    int64_t total_values() const;

    void zero_grad();
    double grad_global_norm() const;

    std::vector<std::vector<double>> clone_values() const;
    void restore_values(const std::vector<std::vector<double>>& snapshot);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Checkpoint container: <base>.json manifest + <base>.bin little-endian
// float32 blob. The manifest embeds a config echo plus its hash so loads
// into a mismatched model fail loudly.
void save_checkpoint(const ParamStore& params, const std::string& base_path, const std::string& stage,
                     const nlohmann::json& config,
                     const std::function<bool(const std::string&)>& name_filter = nullptr);

struct LoadedCheckpoint {
    ParamStore params;
    std::string stage;
    nlohmann::json config;
};

LoadedCheckpoint load_checkpoint(const std::string& base_path);

uint64_t fnv1a64(const std::string& s);

}  // namespace cacophony
