#include "cacophony/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cacophony/rng.hpp"

namespace cacophony {

namespace {

constexpr double kMaskedScore = -1e9;

Tensor gaussian_tensor(Rng& rng, const std::vector<int>& shape, double stddev) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.gaussian(0.0, stddev);
    return Tensor::from(shape, std::move(v), true);
}

void add_linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in, int out) {
    ps.add(prefix + ".w", gaussian_tensor(rng, {in, out}, 0.02), true);
    ps.add(prefix + ".b", Tensor::zeros({out}, true), false);
}

void add_layer_norm(ParamStore& ps, const std::string& prefix, int d) {
    ps.add(prefix + ".g", Tensor::full({d}, 1.0, true), false);
    ps.add(prefix + ".b", Tensor::zeros({d}, true), false);
}

void add_attention(ParamStore& ps, Rng& rng, const std::string& prefix, int d) {
    add_linear(ps, rng, prefix + ".q", d, d);
    add_linear(ps, rng, prefix + ".k", d, d);
    add_linear(ps, rng, prefix + ".v", d, d);
    add_linear(ps, rng, prefix + ".o", d, d);
}

void add_block(ParamStore& ps, Rng& rng, const std::string& prefix, int d, int d_ff) {
    add_layer_norm(ps, prefix + ".ln1", d);
    add_attention(ps, rng, prefix + ".attn", d);
    add_layer_norm(ps, prefix + ".ln2", d);
    add_linear(ps, rng, prefix + ".ff1", d, d_ff);
    add_linear(ps, rng, prefix + ".ff2", d_ff, d);
}

void add_decoder_block(ParamStore& ps, Rng& rng, const std::string& prefix, int d, int d_ff) {
    add_layer_norm(ps, prefix + ".ln1", d);
    add_attention(ps, rng, prefix + ".self", d);
    add_layer_norm(ps, prefix + ".ln2", d);
    add_attention(ps, rng, prefix + ".cross", d);
    add_layer_norm(ps, prefix + ".ln3", d);
    add_linear(ps, rng, prefix + ".ff1", d, d_ff);
    add_linear(ps, rng, prefix + ".ff2", d_ff, d);
}

void add_pooler(ParamStore& ps, Rng& rng, const std::string& prefix, int d) {
    ps.add(prefix + ".query", gaussian_tensor(rng, {1, d}, 0.02), true);
    add_attention(ps, rng, prefix + ".attn", d);
}

// Additive attention mask: 0 where allowed, a large negative where not.
// The large negative underflows to exactly zero weight after the
// max-subtracted softmax.
Tensor attn_mask(int lq, int lk, bool causal, const std::vector<uint8_t>& key_valid) {
    std::vector<double> m(static_cast<size_t>(lq) * lk, 0.0);
    for (int i = 0; i < lq; ++i)
        for (int j = 0; j < lk; ++j) {
            bool blocked = causal && j > i;
            if (!key_valid.empty() && !key_valid[static_cast<size_t>(j)]) blocked = true;
            if (blocked) m[static_cast<size_t>(i) * lk + j] = kMaskedScore;
        }
    return Tensor::from({lq, lk}, std::move(m));
}

Tensor linear(ParamStore& ps, const std::string& prefix, const Tensor& x) {
    return add_rowvec(matmul(x, ps.at(prefix + ".w")), ps.at(prefix + ".b"));
}

Tensor attention(ParamStore& ps, const std::string& prefix, const Tensor& xq, const Tensor& xkv, int heads,
                 const Tensor& mask) {
    const int d = xq.cols();
    if (d % heads != 0) throw std::invalid_argument("attention: d_model not divisible by heads");
    const int dh = d / heads;
    Tensor q = linear(ps, prefix + ".q", xq);
    Tensor k = linear(ps, prefix + ".k", xkv);
    Tensor v = linear(ps, prefix + ".v", xkv);
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), sc);
        if (mask.defined()) scores = add(scores, mask);
        head_outs.push_back(matmul(softmax(scores), vh));
    }
    Tensor cat = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return linear(ps, prefix + ".o", cat);
}

Tensor feed_forward(ParamStore& ps, const std::string& prefix, const Tensor& x) {
    return linear(ps, prefix + ".ff2", silu(linear(ps, prefix + ".ff1", x)));
}

// Pre-norm self-attention block.
Tensor tf_block(ParamStore& ps, const std::string& prefix, const Tensor& x, int heads, const Tensor& mask) {
    Tensor n1 = layer_norm(x, ps.at(prefix + ".ln1.g"), ps.at(prefix + ".ln1.b"));
    Tensor h = add(x, attention(ps, prefix + ".attn", n1, n1, heads, mask));
    Tensor n2 = layer_norm(h, ps.at(prefix + ".ln2.g"), ps.at(prefix + ".ln2.b"));
    return add(h, feed_forward(ps, prefix, n2));
}

Tensor final_norm(ParamStore& ps, const std::string& prefix, const Tensor& x) {
    return layer_norm(x, ps.at(prefix + ".g"), ps.at(prefix + ".b"));
}

// time sinusoid + learnable frequency row for every patch of an N-patch grid
Tensor grid_positional(ParamStore& ps, const std::string& freq_name, int t_patches, int d) {
    Tensor tt = time_sinusoid_table(t_patches, d);
    const int n = t_patches * kFreqPatches;
    std::vector<int> t_idx(static_cast<size_t>(n)), f_idx(static_cast<size_t>(n));
    for (int p = 0; p < n; ++p) {
        t_idx[static_cast<size_t>(p)] = p / kFreqPatches;
        f_idx[static_cast<size_t>(p)] = p % kFreqPatches;
    }
    return add(gather_rows(tt, t_idx), gather_rows(ps.at(freq_name), f_idx));
}

}  // namespace

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::reference_scale() {
    ModelConfig cfg;
    cfg.audio_enc = {12, 8, 768, 3072};
    cfg.mae_dec = {12, 8, 768, 3072};
    cfg.text_enc = {12, 8, 768, 3072};
    cfg.text_dec_depth = 6;
    cfg.pool_heads = 8;
    cfg.d_embed = 512;
    return cfg;
}

ModelConfig ModelConfig::micro() {
    ModelConfig cfg;
    cfg.audio_enc = {1, 2, 8, 16};
    cfg.mae_dec = {1, 2, 8, 16};
    cfg.text_enc = {1, 2, 8, 16};
    cfg.text_dec_depth = 1;
    cfg.pool_heads = 2;
    cfg.d_embed = 4;
    cfg.max_text_len = 16;
    return cfg;
}

nlohmann::json ModelConfig::to_json() const {
    auto net = [](const NetConfig& n) {
        return nlohmann::json{{"depth", n.depth}, {"heads", n.heads}, {"d_model", n.d_model}, {"d_ff", n.d_ff}};
    };
    return nlohmann::json{{"audio_enc", net(audio_enc)}, {"mae_dec", net(mae_dec)},
                          {"text_enc", net(text_enc)},   {"text_dec_depth", text_dec_depth},
                          {"pool_heads", pool_heads},    {"d_embed", d_embed},
                          {"vocab_size", vocab_size},    {"max_text_len", max_text_len}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    auto net = [](const nlohmann::json& n) {
        return NetConfig{n.at("depth").get<int>(), n.at("heads").get<int>(), n.at("d_model").get<int>(),
                         n.at("d_ff").get<int>()};
    };
    ModelConfig cfg;
    cfg.audio_enc = net(j.at("audio_enc"));
    cfg.mae_dec = net(j.at("mae_dec"));
    cfg.text_enc = net(j.at("text_enc"));
    cfg.text_dec_depth = j.at("text_dec_depth").get<int>();
    cfg.pool_heads = j.at("pool_heads").get<int>();
    cfg.d_embed = j.at("d_embed").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_text_len = j.at("max_text_len").get<int>();
    return cfg;
}

void init_stage1_params(ParamStore& ps, const ModelConfig& cfg, uint64_t seed) {
    Rng rng(mix_seed(seed, 0xA0D10));
    const int d = cfg.audio_enc.d_model;
    add_linear(ps, rng, "audio_enc.patch_proj", kPatchDim, d);
    ps.add("audio_enc.pos_freq", gaussian_tensor(rng, {kFreqPatches, d}, 0.02), true);
    for (int i = 0; i < cfg.audio_enc.depth; ++i)
        add_block(ps, rng, "audio_enc.block" + std::to_string(i), d, cfg.audio_enc.d_ff);
    add_layer_norm(ps, "audio_enc.ln_f", d);

    const int dd = cfg.mae_dec.d_model;
    add_linear(ps, rng, "mae_dec.in_proj", d, dd);
    ps.add("mae_dec.mask_token", gaussian_tensor(rng, {1, dd}, 0.02), true);
    ps.add("mae_dec.pos_freq", gaussian_tensor(rng, {kFreqPatches, dd}, 0.02), true);
    for (int i = 0; i < cfg.mae_dec.depth; ++i)
        add_block(ps, rng, "mae_dec.block" + std::to_string(i), dd, cfg.mae_dec.d_ff);
    add_layer_norm(ps, "mae_dec.ln_f", dd);
    add_linear(ps, rng, "mae_dec.head", dd, kPatchDim);
}

void init_stage2_params(ParamStore& ps, const ModelConfig& cfg, uint64_t seed) {
    Rng rng(mix_seed(seed, 0xC1A9));
    const int d = cfg.audio_enc.d_model;
    add_linear(ps, rng, "audio_enc.patch_proj", kPatchDim, d);
    ps.add("audio_enc.pos_freq", gaussian_tensor(rng, {kFreqPatches, d}, 0.02), true);
    for (int i = 0; i < cfg.audio_enc.depth; ++i)
        add_block(ps, rng, "audio_enc.block" + std::to_string(i), d, cfg.audio_enc.d_ff);
    add_layer_norm(ps, "audio_enc.ln_f", d);

    const int dt = cfg.text_enc.d_model;
    if (dt != d) throw std::invalid_argument("init_stage2_params: cross-attention requires equal widths");
    ps.add("text_enc.tok_embed", gaussian_tensor(rng, {cfg.vocab_size, dt}, 0.02), true);
    ps.add("text_enc.pos_embed", gaussian_tensor(rng, {cfg.max_text_len, dt}, 0.02), true);
    for (int i = 0; i < cfg.text_enc.depth; ++i)
        add_block(ps, rng, "text_enc.block" + std::to_string(i), dt, cfg.text_enc.d_ff);
    add_layer_norm(ps, "text_enc.ln_f", dt);

    for (int i = 0; i < cfg.text_dec_depth; ++i)
        add_decoder_block(ps, rng, "text_dec.block" + std::to_string(i), dt, cfg.text_enc.d_ff);
    add_layer_norm(ps, "text_dec.ln_f", dt);
    add_linear(ps, rng, "text_dec.head", dt, cfg.vocab_size);

    add_pooler(ps, rng, "audio_pool", d);
    add_pooler(ps, rng, "text_pool", dt);
    ps.add("audio_proj.w", gaussian_tensor(rng, {d, cfg.d_embed}, 0.02), true);
    ps.add("text_proj.w", gaussian_tensor(rng, {dt, cfg.d_embed}, 0.02), true);
    // s = ln(1/tau), initialized at 1/tau = 14.3 and clamped at ln(100).
    ps.add("temperature.s", Tensor::scalar(std::log(14.3), true), false);
}

bool is_encoder_param(const std::string& name) { return name.rfind("audio_enc.", 0) == 0; }

void load_encoder_params(ParamStore& dst, const LoadedCheckpoint& ck, const ModelConfig& expect) {
    const ModelConfig got =
        ModelConfig::from_json(ck.config.contains("model") ? ck.config.at("model") : ck.config);
    if (got.audio_enc.depth != expect.audio_enc.depth || got.audio_enc.heads != expect.audio_enc.heads ||
        got.audio_enc.d_model != expect.audio_enc.d_model || got.audio_enc.d_ff != expect.audio_enc.d_ff)
        throw std::runtime_error("load_encoder_params: checkpoint audio-encoder config mismatch");
    for (const auto& e : ck.params.entries()) {
        if (!is_encoder_param(e.name)) continue;
        Tensor& dst_t = dst.at(e.name);
        if (dst_t.shape() != e.tensor.shape())
            throw std::runtime_error("load_encoder_params: shape mismatch for " + e.name);
        dst_t.data() = e.tensor.data();
    }
}

int64_t param_count_for_config(const ModelConfig& cfg) {
    auto linear_n = [](int64_t in, int64_t out) { return in * out + out; };
    auto attn_n = [&](int64_t d) { return 4 * linear_n(d, d); };
    auto block_n = [&](int64_t d, int64_t ff) { return 4 * d + attn_n(d) + linear_n(d, ff) + linear_n(ff, d); };

    const int64_t d = cfg.audio_enc.d_model;
    int64_t n = linear_n(kPatchDim, d) + static_cast<int64_t>(kFreqPatches) * d;
    n += cfg.audio_enc.depth * block_n(d, cfg.audio_enc.d_ff) + 2 * d;

    const int64_t dd = cfg.mae_dec.d_model;
    n += linear_n(d, dd) + dd + static_cast<int64_t>(kFreqPatches) * dd;
    n += cfg.mae_dec.depth * block_n(dd, cfg.mae_dec.d_ff) + 2 * dd + linear_n(dd, kPatchDim);

    const int64_t dt = cfg.text_enc.d_model;
    n += static_cast<int64_t>(cfg.vocab_size) * dt + static_cast<int64_t>(cfg.max_text_len) * dt;
    n += cfg.text_enc.depth * block_n(dt, cfg.text_enc.d_ff) + 2 * dt;
    n += cfg.text_dec_depth * (block_n(dt, cfg.text_enc.d_ff) + 2 * dt + attn_n(dt)) + 2 * dt +
         linear_n(dt, cfg.vocab_size);

    n += (dt + attn_n(dt)) + (d + attn_n(d));                    // poolers
    n += d * static_cast<int64_t>(cfg.d_embed) + dt * static_cast<int64_t>(cfg.d_embed);  // projections
    n += 1;                                                      // temperature
    return n;
}

Tensor audio_encode(const PatchGrid& grid, const MaskPlan& plan, ParamStore& ps, const ModelConfig& cfg) {
    if (plan.kept.empty()) throw std::invalid_argument("audio_encode: empty kept set");
    if (plan.n_real != grid.n()) throw std::invalid_argument("audio_encode: plan does not match grid");
    const int d = cfg.audio_enc.d_model;

    Tensor x = linear(ps, "audio_enc.patch_proj", grid.patches);
    x = add(x, grid_positional(ps, "audio_enc.pos_freq", grid.t_patches, d));

    Tensor seq = gather_rows(x, plan.kept);
    const int n_kept = static_cast<int>(plan.kept.size());
    const int n_pad = static_cast<int>(plan.padded.size());
    Tensor mask;
    if (n_pad > 0) {
        seq = concat_rows({seq, Tensor::zeros({n_pad, d})});
        std::vector<uint8_t> key_valid(static_cast<size_t>(n_kept + n_pad), 1);
        std::fill(key_valid.begin() + n_kept, key_valid.end(), 0);
        mask = attn_mask(n_kept + n_pad, n_kept + n_pad, false, key_valid);
    }
    for (int i = 0; i < cfg.audio_enc.depth; ++i)
        seq = tf_block(ps, "audio_enc.block" + std::to_string(i), seq, cfg.audio_enc.heads, mask);
    seq = final_norm(ps, "audio_enc.ln_f", seq);
    return n_pad > 0 ? slice_rows(seq, 0, n_kept) : seq;
}

Tensor mae_decode(const Tensor& enc_out, const MaskPlan& plan, ParamStore& ps, const ModelConfig& cfg) {
    const int n = plan.n_real;
    if (n % kFreqPatches != 0) throw std::invalid_argument("mae_decode: patch count not a grid");
    if (enc_out.rows() != static_cast<int>(plan.kept.size()))
        throw std::invalid_argument("mae_decode: encoder rows do not match kept set");
    const int dd = cfg.mae_dec.d_model;
    const int n_kept = enc_out.rows();

    Tensor z = linear(ps, "mae_dec.in_proj", enc_out);
    Tensor stacked = concat_rows({z, ps.at("mae_dec.mask_token")});
    std::vector<int> sel(static_cast<size_t>(n), n_kept);  // default: shared mask token
    for (int r = 0; r < n_kept; ++r) sel[static_cast<size_t>(plan.kept[static_cast<size_t>(r)])] = r;
    Tensor full = gather_rows(stacked, sel);
    full = add(full, grid_positional(ps, "mae_dec.pos_freq", n / kFreqPatches, dd));

    Tensor mask;
    for (int i = 0; i < cfg.mae_dec.depth; ++i)
        full = tf_block(ps, "mae_dec.block" + std::to_string(i), full, cfg.mae_dec.heads, mask);
    full = final_norm(ps, "mae_dec.ln_f", full);
    return linear(ps, "mae_dec.head", full);
}

Tensor text_encode(const TokenSequence& tokens, ParamStore& ps, const ModelConfig& cfg) {
    const int L = tokens.length();
    if (L < 1) throw std::invalid_argument("text_encode: empty sequence");
    if (L > cfg.max_text_len) throw std::invalid_argument("text_encode: sequence exceeds max length");

    Tensor x = add(embedding_lookup(ps.at("text_enc.tok_embed"), tokens.ids),
                   slice_rows(ps.at("text_enc.pos_embed"), 0, L));
    std::vector<uint8_t> key_valid(tokens.pad_mask.size());
    for (size_t i = 0; i < key_valid.size(); ++i) key_valid[i] = tokens.pad_mask[i] ? 0 : 1;
    Tensor mask = attn_mask(L, L, true, key_valid);
    for (int i = 0; i < cfg.text_enc.depth; ++i)
        x = tf_block(ps, "text_enc.block" + std::to_string(i), x, cfg.text_enc.heads, mask);
    return final_norm(ps, "text_enc.ln_f", x);
}

Tensor text_decode(const TokenSequence& tokens, const Tensor& audio_mem, ParamStore& ps, const ModelConfig& cfg,
                   bool use_cross) {
    if (use_cross && (!audio_mem.defined() || audio_mem.rows() < 1))
        throw std::invalid_argument("text_decode: audio memory must be nonempty");
    Tensor h = text_encode(tokens, ps, cfg);

    const int L = tokens.length();
    std::vector<uint8_t> key_valid(tokens.pad_mask.size());
    for (size_t i = 0; i < key_valid.size(); ++i) key_valid[i] = tokens.pad_mask[i] ? 0 : 1;
    Tensor self_mask = attn_mask(L, L, true, key_valid);
    Tensor no_mask;
    for (int i = 0; i < cfg.text_dec_depth; ++i) {
        const std::string prefix = "text_dec.block" + std::to_string(i);
        Tensor n1 = layer_norm(h, ps.at(prefix + ".ln1.g"), ps.at(prefix + ".ln1.b"));
        h = add(h, attention(ps, prefix + ".self", n1, n1, cfg.text_enc.heads, self_mask));
        if (use_cross) {
            Tensor n2 = layer_norm(h, ps.at(prefix + ".ln2.g"), ps.at(prefix + ".ln2.b"));
            h = add(h, attention(ps, prefix + ".cross", n2, audio_mem, cfg.text_enc.heads, no_mask));
        }
        Tensor n3 = layer_norm(h, ps.at(prefix + ".ln3.g"), ps.at(prefix + ".ln3.b"));
        h = add(h, feed_forward(ps, prefix, n3));
    }
    h = final_norm(ps, "text_dec.ln_f", h);
    return linear(ps, "text_dec.head", h);
}

Tensor attention_pool(const Tensor& seq, const std::vector<uint8_t>& key_valid, ParamStore& ps,
                      const std::string& prefix, int heads) {
    if (!key_valid.empty()) {
        bool any = false;
        for (uint8_t v : key_valid) any = any || v;
        if (!any) throw std::invalid_argument("attention_pool: all rows are padding");
        if (static_cast<int>(key_valid.size()) != seq.rows())
            throw std::invalid_argument("attention_pool: key_valid length mismatch");
    }
    Tensor mask;
    if (!key_valid.empty()) mask = attn_mask(1, seq.rows(), false, key_valid);
    return attention(ps, prefix + ".attn", ps.at(prefix + ".query"), seq, heads, mask);
}

Tensor project_embed(const Tensor& pooled, ParamStore& ps, Side side) {
    check_finite(pooled, "project_embed input");
    const Tensor& w = ps.at(side == Side::audio ? "audio_proj.w" : "text_proj.w");
    return l2_normalize(matmul(pooled, w));
}

}  // namespace cacophony
