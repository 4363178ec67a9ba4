#include "cacophony/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cacophony {

Tensor& ParamStore::add(const std::string& name, Tensor t, bool decay) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t), decay});
    return entries_.back().tensor;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return entries_[it->second].tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return entries_[it->second].tensor;
}

int64_t ParamStore::total_values() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

double ParamStore::grad_global_norm() const {
    double sq = 0.0;
    for (const auto& e : entries_) {
        if (!e.tensor.has_grad()) continue;
        for (double g : e.tensor.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

std::vector<std::vector<double>> ParamStore::clone_values() const {
    std::vector<std::vector<double>> snap;
    snap.reserve(entries_.size());
    for (const auto& e : entries_) snap.push_back(e.tensor.data());
    return snap;
}

void ParamStore::restore_values(const std::vector<std::vector<double>>& snapshot) {
    if (snapshot.size() != entries_.size()) throw std::invalid_argument("restore_values: snapshot size mismatch");
    for (size_t i = 0; i < entries_.size(); ++i) entries_[i].tensor.data() = snapshot[i];
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

void write_f32_le(std::ofstream& out, double v) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, sizeof(bits));
    unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff), static_cast<unsigned char>((bits >> 8) & 0xff),
                          static_cast<unsigned char>((bits >> 16) & 0xff),
                          static_cast<unsigned char>((bits >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

double read_f32_le(const unsigned char* p) {
    const uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                          (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return static_cast<double>(f);
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& base_path, const std::string& stage,
                     const nlohmann::json& config, const std::function<bool(const std::string&)>& name_filter) {
    if (stage != "mae" && stage != "clap" && stage != "opt")
        throw std::invalid_argument("save_checkpoint: stage must be mae, clap or opt");
    nlohmann::json manifest;
    manifest["stage"] = stage;
    manifest["config"] = config;
    manifest["config_hash"] = hex64(fnv1a64(config.dump()));
    manifest["flatten_order"] = "row-major";
    manifest["dtype"] = "f32";
    nlohmann::json tensors = nlohmann::json::array();

    std::ofstream blob(base_path + ".bin", std::ios::binary);
    if (!blob) throw std::runtime_error("save_checkpoint: cannot open " + base_path + ".bin");
    int64_t offset = 0;
    for (const auto& e : params.entries()) {
        if (name_filter && !name_filter(e.name)) continue;
        nlohmann::json t;
        t["name"] = e.name;
        t["shape"] = e.tensor.shape();
        t["offset"] = offset;
        t["decay"] = e.decay;
        tensors.push_back(t);
        for (double v : e.tensor.data()) write_f32_le(blob, v);
        offset += e.tensor.size() * 4;
    }
    manifest["tensors"] = tensors;
    manifest["blob_bytes"] = offset;
    blob.close();

    std::ofstream mf(base_path + ".json");
    if (!mf) throw std::runtime_error("save_checkpoint: cannot open " + base_path + ".json");
    mf << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& base_path) {
    std::ifstream mf(base_path + ".json");
    if (!mf) throw std::runtime_error("load_checkpoint: missing manifest " + base_path + ".json");
    nlohmann::json manifest = nlohmann::json::parse(mf);

    const std::string stored_hash = manifest.at("config_hash").get<std::string>();
    const std::string recomputed = hex64(fnv1a64(manifest.at("config").dump()));
    if (stored_hash != recomputed)
        throw std::runtime_error("load_checkpoint: config hash mismatch (corrupt or edited manifest)");

    std::ifstream blob(base_path + ".bin", std::ios::binary);
    if (!blob) throw std::runtime_error("load_checkpoint: missing blob " + base_path + ".bin");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    const int64_t expected = manifest.at("blob_bytes").get<int64_t>();
    if (static_cast<int64_t>(bytes.size()) != expected)
        throw std::runtime_error("load_checkpoint: blob size mismatch (truncated or corrupt)");

    LoadedCheckpoint out;
    out.stage = manifest.at("stage").get<std::string>();
    out.config = manifest.at("config");
    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const std::vector<int> shape = t.at("shape").get<std::vector<int>>();
        const int64_t offset = t.at("offset").get<int64_t>();
        int64_t numel = 1;
        for (int d : shape) numel *= d;
        if (offset + numel * 4 > static_cast<int64_t>(bytes.size()))
            throw std::runtime_error("load_checkpoint: tensor extends past blob end");
        std::vector<double> data(static_cast<size_t>(numel));
        for (int64_t i = 0; i < numel; ++i)
            data[static_cast<size_t>(i)] = read_f32_le(bytes.data() + offset + i * 4);
        out.params.add(name, Tensor::from(shape, std::move(data), true), t.at("decay").get<bool>());
    }
    return out;
}

}  // namespace cacophony
