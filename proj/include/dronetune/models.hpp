#pragma once

#include <array>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dronetune/adapters.hpp"
#include "dronetune/nn_ops.hpp"
#include "dronetune/rng.hpp"

namespace dronetune {

enum class ModelFamily { Cnn, Transformer };

inline std::string_view family_name(ModelFamily f) {
    return f == ModelFamily::Cnn ? "cnn" : "transformer";
}

struct ForwardContext {
    bool train = false;
    Rng* rng = nullptr; // required when train and the model uses dropout
};

template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
};

/// Ordered name -> tensor registry. Names are unique and stable across runs;
/// PEFT masking, optimizers and checkpoints all key off them. Buffers
/// (batchnorm running stats) are tracked separately and never trained.
template <typename T>
class ParamRegistry {
public:
    Tensor<T>& add(std::string name, Tensor<T> t, bool trainable = true) {
        if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        t.set_requires_grad(trainable);
        entries_.push_back({std::move(name), std::move(t), trainable});
        return entries_.back().tensor;
    }

    void add_buffer(std::string name, std::vector<T>* storage) {
        buffers_.emplace_back(std::move(name), storage);
    }

    ParamEntry<T>* find(std::string_view name) {
        for (auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    const ParamEntry<T>* find(std::string_view name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    std::vector<ParamEntry<T>>& entries() { return entries_; }
    const std::vector<ParamEntry<T>>& entries() const { return entries_; }
    const std::vector<std::pair<std::string, std::vector<T>*>>& buffers() const {
        return buffers_;
    }

    void set_trainable(std::string_view name, bool b) {
        auto* e = find(name);
        if (!e) throw std::invalid_argument("unknown parameter: " + std::string(name));
        e->trainable = b;
        e->tensor.set_requires_grad(b);
    }

    void set_all_trainable(bool b) {
        for (auto& e : entries_) {
            e.trainable = b;
            e.tensor.set_requires_grad(b);
        }
    }

    std::vector<Tensor<T>> trainable_tensors() const {
        std::vector<Tensor<T>> out;
        for (const auto& e : entries_)
            if (e.trainable) out.push_back(e.tensor);
        return out;
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    /// Values of all params and buffers, for best-epoch bookkeeping.
    std::map<std::string, std::vector<T>> snapshot() const {
        std::map<std::string, std::vector<T>> s;
        for (const auto& e : entries_) s[e.name] = e.tensor.values();
        for (const auto& [n, v] : buffers_) s["buffer." + n] = *v;
        return s;
    }

    void restore(const std::map<std::string, std::vector<T>>& s) {
        for (auto& e : entries_) {
            auto it = s.find(e.name);
            if (it != s.end()) e.tensor.values() = it->second;
        }
        for (auto& [n, v] : buffers_) {
            auto it = s.find("buffer." + n);
            if (it != s.end()) *v = it->second;
        }
    }

private:
    std::vector<ParamEntry<T>> entries_;
    std::vector<std::pair<std::string, std::vector<T>*>> buffers_;
};

template <typename T>
class Model {
public:
    virtual ~Model() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) = 0;
    virtual ModelFamily family() const = 0;
    virtual std::string architecture() const = 0;
    virtual std::vector<std::string> classifier_param_names() const = 0;
    virtual std::size_t n_classes() const = 0;

    ParamRegistry<T>& params() { return reg_; }
    const ParamRegistry<T>& params() const { return reg_; }

    AdapterSet<T> adapters;

    Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

protected:
    ParamRegistry<T> reg_;

    Tensor<T> kaiming_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<T> v(fan_in * fan_out);
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
        return Tensor<T>::from_data(std::move(v), {fan_in, fan_out});
    }
};

// ---------------------------------------------------------------------------
// Compact CNN: 3 blocks of conv3x3 -> relu -> pool2 -> batchnorm, then
// adaptive-average-pool 4x4 -> fc -> dropout -> linear classifier.
// ---------------------------------------------------------------------------

struct CompactCnnConfig {
    std::size_t in_channels = 1;
    std::array<std::size_t, 3> widths{16, 32, 64};
    std::size_t adaptive_out = 4;
    std::size_t hidden_fc = 128;
    double dropout_p = 0.5;
    std::size_t n_classes = 31;
    bool avg_pool = false; // pooling-ambiguity switch; max pooling by default
};

template <typename T>
class CompactCnn : public Model<T> {
public:
    CompactCnn(CompactCnnConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(Rng::mix(seed, 0xC44));
        std::size_t ci = cfg.in_channels;
        for (std::size_t i = 0; i < 3; ++i) {
            std::size_t co = cfg.widths[i];
            std::string p = "conv" + std::to_string(i + 1);
            double bound = 1.0 / std::sqrt(static_cast<double>(ci * 9));
            std::vector<T> w(co * ci * 9);
            for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
            blocks_[i].w =
                this->reg_.add(p + ".weight", Tensor<T>::from_data(std::move(w), {co, ci, 3, 3}));
            blocks_[i].b = this->reg_.add(p + ".bias", Tensor<T>::zeros({co}));
            std::string bn = "bn" + std::to_string(i + 1);
            blocks_[i].gamma = this->reg_.add(bn + ".gamma", Tensor<T>::full({co}, T(1)));
            blocks_[i].beta = this->reg_.add(bn + ".beta", Tensor<T>::zeros({co}));
            blocks_[i].bn.running_mean.assign(co, T(0));
            blocks_[i].bn.running_var.assign(co, T(1));
            this->reg_.add_buffer(bn + ".running_mean", &blocks_[i].bn.running_mean);
            this->reg_.add_buffer(bn + ".running_var", &blocks_[i].bn.running_var);
            ci = co;
        }
        std::size_t feat = cfg.widths[2] * cfg.adaptive_out * cfg.adaptive_out;
        fc1_w_ = this->reg_.add("fc1.weight", this->kaiming_linear(feat, cfg.hidden_fc, rng));
        fc1_b_ = this->reg_.add("fc1.bias", Tensor<T>::zeros({cfg.hidden_fc}));
        fc2_w_ =
            this->reg_.add("fc2.weight", this->kaiming_linear(cfg.hidden_fc, cfg.n_classes, rng));
        fc2_b_ = this->reg_.add("fc2.bias", Tensor<T>::zeros({cfg.n_classes}));
    }

    Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
        if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
            throw std::invalid_argument("cnn forward: expected [B, " +
                                        std::to_string(cfg_.in_channels) + ", mels, frames]");
        std::size_t min_dim = cfg_.adaptive_out * 8; // three halvings then 4x4 pool
        if (x.dim(2) < min_dim || x.dim(3) < min_dim)
            throw std::invalid_argument(
                "cnn forward: spatial dims too small to pool three times (need >= " +
                std::to_string(min_dim) + ", got " + std::to_string(x.dim(2)) + "x" +
                std::to_string(x.dim(3)) + ")");
        auto& ad = this->adapters;
        Tensor<T> h = x;
        for (std::size_t i = 0; i < 3; ++i) {
            auto& blk = blocks_[i];
            std::size_t co = cfg_.widths[i];
            h = add(conv2d(h, blk.w), reshape(blk.b, {1, co, 1, 1}));
            h = ad.ssf_maybe("conv" + std::to_string(i + 1), h);
            h = relu(h);
            h = cfg_.avg_pool ? avg_pool2d(h) : max_pool2d(h);
            h = batch_norm2d(h, blk.gamma, blk.beta, blk.bn, ctx.train);
            h = ad.ssf_maybe("bn" + std::to_string(i + 1), h);
        }
        h = adaptive_avg_pool2d(h, cfg_.adaptive_out, cfg_.adaptive_out);
        h = flatten(h);
        h = linear(h, fc1_w_, fc1_b_);
        h = ad.ssf_maybe("fc1", h);
        if (ctx.train && !ctx.rng)
            throw std::invalid_argument("cnn forward: train mode requires an rng for dropout");
        static Rng dummy(0);
        h = dropout(h, cfg_.dropout_p, ctx.train, ctx.rng ? *ctx.rng : dummy);
        return linear(h, fc2_w_, fc2_b_);
    }

    ModelFamily family() const override { return ModelFamily::Cnn; }

    std::string architecture() const override {
        std::ostringstream os;
        os << "family=cnn\n"
           << "in_channels=" << cfg_.in_channels << "\n"
           << "widths=" << cfg_.widths[0] << "," << cfg_.widths[1] << "," << cfg_.widths[2]
           << "\n"
           << "adaptive_out=" << cfg_.adaptive_out << "\n"
           << "hidden_fc=" << cfg_.hidden_fc << "\n"
           << "dropout=" << cfg_.dropout_p << "\n"
           << "pool=" << (cfg_.avg_pool ? "avg" : "max") << "\n"
           << "n_classes=" << cfg_.n_classes << "\n";
        return os.str();
    }

    std::vector<std::string> classifier_param_names() const override {
        return {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"};
    }

    std::size_t n_classes() const override { return cfg_.n_classes; }
    const CompactCnnConfig& config() const { return cfg_; }

    /// SSF attach points: every conv output, every batchnorm output, and the
    /// hidden (non-classifier) linear; name -> (width, channel axis).
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> ssf_attach_points() const {
        std::vector<std::tuple<std::string, std::size_t, std::size_t>> pts;
        for (std::size_t i = 0; i < 3; ++i) {
            pts.emplace_back("conv" + std::to_string(i + 1), cfg_.widths[i], 1);
            pts.emplace_back("bn" + std::to_string(i + 1), cfg_.widths[i], 1);
        }
        pts.emplace_back("fc1", cfg_.hidden_fc, 1);
        return pts;
    }

    std::vector<std::string> batchnorm_param_names() const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < 3; ++i) {
            out.push_back("bn" + std::to_string(i + 1) + ".gamma");
            out.push_back("bn" + std::to_string(i + 1) + ".beta");
        }
        return out;
    }

private:
    struct Block {
        Tensor<T> w, b, gamma, beta;
        BatchNormState<T> bn;
    };

    CompactCnnConfig cfg_;
    std::array<Block, 3> blocks_;
    Tensor<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// ---------------------------------------------------------------------------
// Compact spectrogram transformer: non-overlapping 16x16 patches, learnable
// CLS token and positional embeddings, pre-norm encoder blocks, linear head
// on the CLS token.
// ---------------------------------------------------------------------------

struct SpecTransformerConfig {
    std::size_t patch = 16;
    std::size_t embed_dim = 64;
    std::size_t heads = 4;
    std::size_t depth = 4;
    std::size_t mlp_ratio = 4;
    std::size_t n_classes = 31;
    std::size_t n_mels = 64;
    std::size_t input_frames = 157; // pins the positional table size

    std::size_t n_patches() const { return (n_mels / patch) * (input_frames / patch); }
};

template <typename T>
class SpecTransformer : public Model<T> {
public:
    SpecTransformer(SpecTransformerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.embed_dim % cfg.heads != 0)
            throw std::invalid_argument("transformer: embed_dim must be divisible by heads");
        if (cfg.n_mels < cfg.patch || cfg.input_frames < cfg.patch)
            throw std::invalid_argument("transformer: input smaller than one patch");
        Rng rng(Rng::mix(seed, 0x55F));
        std::size_t d = cfg.embed_dim;
        std::size_t pdim = cfg.patch * cfg.patch;
        std::size_t n_tok = cfg.n_patches() + 1;

        pe_w_ = this->reg_.add("patch_embed.weight", this->kaiming_linear(pdim, d, rng));
        pe_b_ = this->reg_.add("patch_embed.bias", Tensor<T>::zeros({d}));

        auto normal_init = [&](Shape shape) {
            std::vector<T> v(detail::numel(shape));
            for (auto& x : v) x = static_cast<T>(0.02 * rng.normal());
            return Tensor<T>::from_data(std::move(v), std::move(shape));
        };
        cls_ = this->reg_.add("cls_token", normal_init({1, 1, d}));
        pos_ = this->reg_.add("pos_embed", normal_init({1, n_tok, d}));

        blocks_.resize(cfg.depth);
        for (std::size_t i = 0; i < cfg.depth; ++i) {
            auto& blk = blocks_[i];
            std::string p = "blocks." + std::to_string(i) + ".";
            blk.ln1_g = this->reg_.add(p + "ln1.gamma", Tensor<T>::full({d}, T(1)));
            blk.ln1_b = this->reg_.add(p + "ln1.beta", Tensor<T>::zeros({d}));
            static constexpr std::array<const char*, 4> proj_names{"q", "k", "v", "proj"};
            for (std::size_t idx = 0; idx < 4; ++idx) {
                std::string nm = p + "attn." + proj_names[idx];
                blk.attn_w[idx] = this->reg_.add(nm + ".weight", this->kaiming_linear(d, d, rng));
                blk.attn_b[idx] = this->reg_.add(nm + ".bias", Tensor<T>::zeros({d}));
            }
            blk.ln2_g = this->reg_.add(p + "ln2.gamma", Tensor<T>::full({d}, T(1)));
            blk.ln2_b = this->reg_.add(p + "ln2.beta", Tensor<T>::zeros({d}));
            std::size_t hidden = d * cfg.mlp_ratio;
            blk.mlp1_w = this->reg_.add(p + "mlp.fc1.weight", this->kaiming_linear(d, hidden, rng));
            blk.mlp1_b = this->reg_.add(p + "mlp.fc1.bias", Tensor<T>::zeros({hidden}));
            blk.mlp2_w = this->reg_.add(p + "mlp.fc2.weight", this->kaiming_linear(hidden, d, rng));
            blk.mlp2_b = this->reg_.add(p + "mlp.fc2.bias", Tensor<T>::zeros({d}));
        }
        norm_g_ = this->reg_.add("norm.gamma", Tensor<T>::full({d}, T(1)));
        norm_b_ = this->reg_.add("norm.beta", Tensor<T>::zeros({d}));
        head_w_ = this->reg_.add("head.weight", this->kaiming_linear(d, cfg.n_classes, rng));
        head_b_ = this->reg_.add("head.bias", Tensor<T>::zeros({cfg.n_classes}));
    }

    /// Non-overlapping patches in row-major (patch-row, patch-col) order,
    /// each flattened 16x16 tile; trailing remainder columns dropped.
    Tensor<T> patchify(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != 1)
            throw std::invalid_argument("patchify: expected [B, 1, mels, frames]");
        std::size_t b = x.dim(0), mels = x.dim(2), frames = x.dim(3);
        std::size_t pr = mels / cfg_.patch, pc = frames / cfg_.patch;
        if (pr == 0 || pc == 0)
            throw std::invalid_argument("patchify: input smaller than one patch");
        auto g = reshape(x, {b, mels, frames});
        if (pc * cfg_.patch != frames) g = slice(g, 2, 0, pc * cfg_.patch);
        g = reshape(g, {b, pr, cfg_.patch, pc, cfg_.patch});
        g = permute(g, {0, 1, 3, 2, 4});
        return reshape(g, {b, pr * pc, cfg_.patch * cfg_.patch});
    }

    Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
        (void)ctx; // no dropout in this compact encoder
        auto& ad = this->adapters;
        std::size_t b = x.dim(0);
        auto patches = patchify(x);
        std::size_t n = patches.dim(1);
        if (n != cfg_.n_patches())
            throw std::invalid_argument(
                "transformer forward: sequence length " + std::to_string(n) +
                " does not match positional table built for " +
                std::to_string(cfg_.n_patches()) + " patches");
        auto tok = linear(patches, pe_w_, pe_b_);
        tok = ad.ssf_maybe("patch_embed", tok);
        auto seq = concat(broadcast_to(cls_, {b, 1, cfg_.embed_dim}), tok, 1);
        seq = add(seq, pos_);

        std::size_t heads = cfg_.heads;
        std::size_t dh = cfg_.embed_dim / heads;
        std::size_t s_len = n + 1;
        for (std::size_t i = 0; i < cfg_.depth; ++i) {
            auto& blk = blocks_[i];
            std::string p = "blocks." + std::to_string(i) + ".";
            auto h = layer_norm(seq, blk.ln1_g, blk.ln1_b);
            h = ad.ssf_maybe(p + "ln1", h);

            auto project = [&](int idx, const char* nm) {
                Tensor<T> w = blk.attn_w[idx];
                if (ad.oft) w = oft_apply_weight(w, oft_skew(i, idx), ad.oft_block_count);
                auto y = linear(h, w, blk.attn_b[idx]);
                return ad.ssf_maybe(p + "attn." + nm, y);
            };
            auto q = project(0, "q");
            auto k = project(1, "k");
            auto v = project(2, "v");
            if (ad.ia3) {
                const auto& ia = ad.ia3_blocks[i];
                k = mul(k, ia.k);
                v = mul(v, ia.v);
                if (ad.ia3_scale_query) q = mul(q, ia.q);
            }
            auto split = [&](const Tensor<T>& t) {
                return permute(reshape(t, {b, s_len, heads, dh}), {0, 2, 1, 3});
            };
            auto att = scaled_dot_attention(split(q), split(k), split(v));
            att = reshape(permute(att, {0, 2, 1, 3}), {b, s_len, cfg_.embed_dim});
            Tensor<T> wo = blk.attn_w[3];
            if (ad.oft) wo = oft_apply_weight(wo, oft_skew(i, 3), ad.oft_block_count);
            auto o = linear(att, wo, blk.attn_b[3]);
            o = ad.ssf_maybe(p + "attn.proj", o);
            seq = add(seq, o);

            auto h2 = layer_norm(seq, blk.ln2_g, blk.ln2_b);
            h2 = ad.ssf_maybe(p + "ln2", h2);
            auto m = linear(h2, blk.mlp1_w, blk.mlp1_b);
            m = ad.ssf_maybe(p + "mlp.fc1", m);
            m = relu(m);
            if (ad.ia3) m = mul(m, ad.ia3_blocks[i].ff);
            m = linear(m, blk.mlp2_w, blk.mlp2_b);
            m = ad.ssf_maybe(p + "mlp.fc2", m);
            seq = add(seq, m);
        }
        seq = layer_norm(seq, norm_g_, norm_b_);
        seq = ad.ssf_maybe("norm", seq);
        auto cls_out = reshape(slice(seq, 1, 0, 1), {b, cfg_.embed_dim});
        return linear(cls_out, head_w_, head_b_);
    }

    ModelFamily family() const override { return ModelFamily::Transformer; }

    std::string architecture() const override {
        std::ostringstream os;
        os << "family=transformer\n"
           << "patch=" << cfg_.patch << "\n"
           << "embed_dim=" << cfg_.embed_dim << "\n"
           << "heads=" << cfg_.heads << "\n"
           << "depth=" << cfg_.depth << "\n"
           << "mlp_ratio=" << cfg_.mlp_ratio << "\n"
           << "n_mels=" << cfg_.n_mels << "\n"
           << "input_frames=" << cfg_.input_frames << "\n"
           << "n_classes=" << cfg_.n_classes << "\n";
        return os.str();
    }

    std::vector<std::string> classifier_param_names() const override {
        return {"head.weight", "head.bias"};
    }

    std::size_t n_classes() const override { return cfg_.n_classes; }
    const SpecTransformerConfig& config() const { return cfg_; }

    /// SSF attach points: patch embedding, every attention projection, every
    /// layer norm, both MLP linears, and the final norm; the head stays out.
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> ssf_attach_points() const {
        std::vector<std::tuple<std::string, std::size_t, std::size_t>> pts;
        std::size_t d = cfg_.embed_dim;
        pts.emplace_back("patch_embed", d, 2);
        for (std::size_t i = 0; i < cfg_.depth; ++i) {
            std::string p = "blocks." + std::to_string(i) + ".";
            pts.emplace_back(p + "ln1", d, 2);
            for (const char* nm : {"q", "k", "v", "proj"})
                pts.emplace_back(p + "attn." + std::string(nm), d, 2);
            pts.emplace_back(p + "ln2", d, 2);
            pts.emplace_back(p + "mlp.fc1", d * cfg_.mlp_ratio, 2);
            pts.emplace_back(p + "mlp.fc2", d, 2);
        }
        pts.emplace_back("norm", d, 2);
        return pts;
    }

private:
    struct Block {
        Tensor<T> ln1_g, ln1_b;
        std::array<Tensor<T>, 4> attn_w, attn_b; // q, k, v, proj
        Tensor<T> ln2_g, ln2_b;
        Tensor<T> mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    };

    const Tensor<T>& oft_skew(std::size_t layer, int proj_idx) const {
        const auto& a = this->adapters.oft_layers[layer];
        switch (proj_idx) {
        case 0: return a.q;
        case 1: return a.k;
        case 2: return a.v;
        default: return a.proj;
        }
    }

    SpecTransformerConfig cfg_;
    Tensor<T> pe_w_, pe_b_, cls_, pos_;
    std::vector<Block> blocks_;
    Tensor<T> norm_g_, norm_b_, head_w_, head_b_;
};

} // namespace dronetune
