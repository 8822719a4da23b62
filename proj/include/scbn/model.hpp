#pragma once

#include "scbn/adam.hpp"
#include "scbn/blocks.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <vector>

namespace scbn {

struct ArchConfig {
    int depth = 4;
    int base_filters = 16;
    int embed_channels = 16;
    int n_aux_channels = 1;
    int n_classes = 2;
    int patch_size = 160;
    DropBlockConfig dropblock;  // net #1 only

    void validate() const {
        require(depth >= 1 && base_filters >= 1 && embed_channels >= 1,
                "arch: depth/base_filters/embed_channels must be >= 1");
        require(n_classes >= 2, "arch: n_classes must be >= 2");
        require(n_aux_channels >= 1, "arch: n_aux_channels must be >= 1");
        require(patch_size % (1 << depth) == 0,
                "arch: patch_size " + std::to_string(patch_size) +
                    " not divisible by 2^depth");
        dropblock.validate();
    }
};

enum class ForwardMode { train, mc_sample, deterministic };

struct HistoryRow {
    int epoch = 0;
    double loss = 0;
    double train_acc = 0, test_acc = 0;
    double train_ssim = 0, test_ssim = 0;
    double wall_time_s = 0;
};

struct TrainHistory {
    std::string tag = "train";
    std::vector<HistoryRow> rows;
};

template <class S>
struct Checkpoint {
    ArchConfig arch;
    ParamStore<S> store;
    std::map<std::string, AdamState<S>> opt;
    std::vector<std::string> vocab;
    int epoch = 0;
    double best_test_acc = 0.0;
    TrainHistory history;
};

// ---------------------------------------------------------------------------
// Architecture construction. One attention res-unet per call; channel widths
// double per encoder level from base_filters.

namespace detail {

template <class S>
void init_unet(ParamStore<S>& st, const std::string& net, int c_in, int c_out,
               int depth, int base, std::mt19937_64& rng) {
    int prev = c_in;
    for (int i = 0; i < depth; ++i) {
        const int c = base << i;
        init_residual_block(st, net + ".enc" + std::to_string(i), prev, c, rng);
        prev = c;
    }
    init_residual_block(st, net + ".bott", prev, base << depth, rng);
    for (int i = depth - 1; i >= 0; --i) {
        const int c = base << i;
        init_conv(st, net + ".up" + std::to_string(i), c * 2, c, 3, rng);
        init_attention_gate(st, net + ".att" + std::to_string(i), c, c,
                            std::max(c / 2, 1), rng);
        init_residual_block(st, net + ".dec" + std::to_string(i), c * 2, c, rng);
    }
    init_conv(st, net + ".head", base, c_out, 1, rng);
}

inline int clamped_odd_block(int block_size, int fs) {
    int b = std::min(block_size, fs);
    if (b % 2 == 0) --b;
    return std::max(b, 1);
}

template <class S>
Var unet_forward(ParamBinding<S>& p, const std::string& net, Var x, int depth,
                 const DropBlockConfig* db, ForwardMode mode, std::mt19937_64& rng) {
    Graph<S>& g = *p.g;
    const bool training = (mode == ForwardMode::train);
    const bool db_active = db && (mode != ForwardMode::deterministic);

    auto maybe_dropblock = [&](Var v) {
        if (!db_active) return v;
        const Shape s = g.value(v).shape;
        DropBlockConfig eff = *db;
        eff.block_size = clamped_odd_block(db->block_size, std::min(s.h, s.w));
        return dropblock(g, v, eff, rng, true);
    };

    std::vector<Var> skips;
    Var h = x;
    for (int i = 0; i < depth; ++i) {
        h = residual_block(p, net + ".enc" + std::to_string(i), h, training);
        h = maybe_dropblock(h);
        skips.push_back(h);
        h = maxpool2d(g, h);
    }
    h = residual_block(p, net + ".bott", h, training);
    h = maybe_dropblock(h);
    for (int i = depth - 1; i >= 0; --i) {
        const std::string is = std::to_string(i);
        Var up = conv2d(g, upsample_nearest2x(g, h), p(net + ".up" + is + ".w"),
                        p(net + ".up" + is + ".b"), 1, 1);
        Var att = attention_gate(p, net + ".att" + is, skips[std::size_t(i)], up);
        h = residual_block(p, net + ".dec" + is, concat_channels(g, att, up), training);
        h = maybe_dropblock(h);
    }
    return conv2d(g, h, p(net + ".head.w"), p(net + ".head.b"), 1, 0);
}

}  // namespace detail

template <class S>
Checkpoint<S> build_model(const ArchConfig& cfg, std::mt19937_64& rng,
                          std::vector<std::string> vocab = {}) {
    cfg.validate();
    Checkpoint<S> ckpt;
    ckpt.arch = cfg;
    detail::init_unet(ckpt.store, "net1", cfg.n_aux_channels, cfg.embed_channels,
                      cfg.depth, cfg.base_filters, rng);
    detail::init_unet(ckpt.store, "net2", cfg.embed_channels + cfg.n_classes,
                      cfg.n_classes, cfg.depth, cfg.base_filters, rng);
    if (vocab.empty())
        for (int c = 0; c < cfg.n_classes; ++c)
            vocab.push_back("class_" + std::to_string(c));
    require(int(vocab.size()) == cfg.n_classes, "build_model: vocab length != n_classes");
    ckpt.vocab = std::move(vocab);
    return ckpt;
}

template <class S>
std::int64_t parameter_count(const Checkpoint<S>& ckpt) {
    std::int64_t n = 0;
    for (const auto& [name, t] : ckpt.store.params) n += t.size();
    return n;
}

// Graph-level forward: returns the per-pixel class probability Var.
template <class S>
Var forward_graph(Checkpoint<S>& ckpt, ParamBinding<S>& p, Var aux, Var masks,
                  ForwardMode mode, std::mt19937_64& rng) {
    Graph<S>& g = *p.g;
    const Shape as = g.value(aux).shape, ms = g.value(masks).shape;
    const ArchConfig& cfg = ckpt.arch;
    require(as.c == cfg.n_aux_channels, "forward: aux channels " + std::to_string(as.c) +
                                            " != " + std::to_string(cfg.n_aux_channels));
    require(ms.c == cfg.n_classes, "forward: mask channels != n_classes");
    require(as.n == ms.n && as.h == ms.h && as.w == ms.w,
            "forward: aux/mask shape mismatch " + as.str() + " vs " + ms.str());
    require(as.h % (1 << cfg.depth) == 0 && as.w % (1 << cfg.depth) == 0,
            "forward: spatial size " + as.str() + " not divisible by 2^depth");

    Var embed = detail::unet_forward(p, "net1", aux, cfg.depth, &cfg.dropblock, mode, rng);
    Var fused = concat_channels(g, embed, masks);
    Var logits = detail::unet_forward(p, "net2", fused, cfg.depth, nullptr, mode, rng);
    return softmax_channels(g, logits);
}

// Standalone forward over fresh graph state.
template <class S>
Tensor<S> forward(Checkpoint<S>& ckpt, const Tensor<S>& aux, const Tensor<S>& masks,
                  ForwardMode mode, std::mt19937_64& rng) {
    Graph<S> g;
    ParamBinding<S> p{&ckpt.store, &g, false, {}};
    Var out = forward_graph(ckpt, p, g.constant(aux), g.constant(masks), mode, rng);
    return g.value(out);
}

template <class S>
Tensor<S> zero_masks(int batch, int n_classes, int h, int w) {
    return Tensor<S>::zeros(Shape{batch, n_classes, h, w});
}

// Re-initializes the class head of net #2 and its mask-dependent first block
// for a new class count; all other parameters are copied verbatim.
template <class S>
Checkpoint<S> reinit_head(const Checkpoint<S>& src, int new_n_classes,
                          std::mt19937_64& rng, std::vector<std::string> vocab = {}) {
    require(new_n_classes >= 2, "reinit_head: new_n_classes must be >= 2");
    Checkpoint<S> out = src;
    out.arch.n_classes = new_n_classes;
    const ArchConfig& cfg = out.arch;
    const int c_in2 = cfg.embed_channels + new_n_classes;

    std::vector<std::string> reset = {"net2.head", "net2.enc0.conv1", "net2.enc0.proj"};
    for (const std::string& scope : reset)
        for (const char* sfx : {".w", ".b"}) {
            out.store.params.erase(scope + sfx);
            out.opt.erase(scope + sfx);
        }
    init_conv(out.store, "net2.head", cfg.base_filters, new_n_classes, 1, rng);
    init_conv(out.store, "net2.enc0.conv1", c_in2, cfg.base_filters, 3, rng);
    if (c_in2 != cfg.base_filters)
        init_conv(out.store, "net2.enc0.proj", c_in2, cfg.base_filters, 1, rng);

    if (vocab.empty())
        for (int c = 0; c < new_n_classes; ++c)
            vocab.push_back("class_" + std::to_string(c));
    require(int(vocab.size()) == new_n_classes, "reinit_head: vocab length mismatch");
    out.vocab = std::move(vocab);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint file: 8-byte magic, u64 JSON header length, JSON header, then
// little-endian float32 blobs at the offsets listed in the manifest.

namespace detail {

inline constexpr char kCkptMagic[8] = {'S', 'C', 'B', 'C', 'K', 'P', 'T', '1'};

template <class S>
void blob_append(std::vector<float>& blobs, const Tensor<S>& t) {
    for (std::int64_t i = 0; i < t.size(); ++i) blobs.push_back(float(t.data[i]));
}

}  // namespace detail

template <class S>
void save_checkpoint(const Checkpoint<S>& ckpt, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = {{"depth", ckpt.arch.depth},
                 {"base_filters", ckpt.arch.base_filters},
                 {"embed_channels", ckpt.arch.embed_channels},
                 {"n_aux_channels", ckpt.arch.n_aux_channels},
                 {"n_classes", ckpt.arch.n_classes},
                 {"patch_size", ckpt.arch.patch_size},
                 {"dropblock", {{"block_size", ckpt.arch.dropblock.block_size},
                                {"drop_rate", ckpt.arch.dropblock.drop_rate},
                                {"enabled_at_inference", ckpt.arch.dropblock.enabled_at_inference}}}};
    j["vocab"] = ckpt.vocab;
    j["epoch"] = ckpt.epoch;
    j["best_test_acc"] = ckpt.best_test_acc;
    nlohmann::json hist = nlohmann::json::array();
    for (const HistoryRow& r : ckpt.history.rows)
        hist.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"train_acc", r.train_acc},
                        {"test_acc", r.test_acc}, {"train_ssim", r.train_ssim},
                        {"test_ssim", r.test_ssim}});
    j["history"] = {{"tag", ckpt.history.tag}, {"rows", hist}};

    std::vector<float> blobs;
    nlohmann::json manifest = nlohmann::json::array();
    auto add = [&](const std::string& name, const std::string& kind, const Tensor<S>& t,
                   std::int64_t adam_t = 0) {
        manifest.push_back({{"name", name},
                            {"kind", kind},
                            {"shape", {t.shape.n, t.shape.c, t.shape.h, t.shape.w}},
                            {"offset", blobs.size()},
                            {"adam_t", adam_t}});
        detail::blob_append(blobs, t);
    };
    for (const auto& [name, t] : ckpt.store.params) add(name, "param", t);
    for (const auto& [name, t] : ckpt.store.buffers) add(name, "buffer", t);
    for (const auto& [name, st] : ckpt.opt) {
        add(name, "adam_m", st.m, st.t);
        add(name, "adam_v", st.v, st.t);
    }
    j["manifest"] = manifest;
    if (!ckpt.opt.empty()) {
        const auto& st = ckpt.opt.begin()->second;
        j["adam"] = {{"lr", double(st.lr)}, {"beta1", double(st.beta1)},
                     {"beta2", double(st.beta2)}, {"eps", double(st.eps)}};
    }

    const std::string header = j.dump();
    std::ofstream f(path, std::ios::binary);
    require(bool(f), "cannot open checkpoint for writing: " + path);
    f.write(detail::kCkptMagic, 8);
    const std::uint64_t len = header.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(header.data(), std::streamsize(header.size()));
    f.write(reinterpret_cast<const char*>(blobs.data()),
            std::streamsize(blobs.size() * sizeof(float)));
    require(bool(f), "checkpoint write failed: " + path);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), "cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    require(f && std::equal(magic, magic + 8, detail::kCkptMagic),
            "bad checkpoint magic in " + path);
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    std::string header(len, '\0');
    f.read(header.data(), std::streamsize(len));
    require(bool(f), "truncated checkpoint header in " + path);
    nlohmann::json j = nlohmann::json::parse(header);
    require(j.at("version").get<int>() == 1, "unsupported checkpoint version");

    Checkpoint<S> ckpt;
    const auto& a = j.at("arch");
    ckpt.arch.depth = a.at("depth");
    ckpt.arch.base_filters = a.at("base_filters");
    ckpt.arch.embed_channels = a.at("embed_channels");
    ckpt.arch.n_aux_channels = a.at("n_aux_channels");
    ckpt.arch.n_classes = a.at("n_classes");
    ckpt.arch.patch_size = a.at("patch_size");
    ckpt.arch.dropblock.block_size = a.at("dropblock").at("block_size");
    ckpt.arch.dropblock.drop_rate = a.at("dropblock").at("drop_rate");
    ckpt.arch.dropblock.enabled_at_inference = a.at("dropblock").at("enabled_at_inference");
    ckpt.vocab = j.at("vocab").get<std::vector<std::string>>();
    ckpt.epoch = j.at("epoch");
    ckpt.best_test_acc = j.at("best_test_acc");
    ckpt.history.tag = j.at("history").at("tag");
    for (const auto& r : j.at("history").at("rows")) {
        HistoryRow row;
        row.epoch = r.at("epoch");
        row.loss = r.at("loss");
        row.train_acc = r.at("train_acc");
        row.test_acc = r.at("test_acc");
        row.train_ssim = r.at("train_ssim");
        row.test_ssim = r.at("test_ssim");
        ckpt.history.rows.push_back(row);
    }

    f.seekg(0, std::ios::end);
    const std::streamoff end = f.tellg();
    const std::streamoff blob_bytes = end - std::streamoff(16 + len);
    std::vector<float> data(std::size_t(blob_bytes) / sizeof(float));
    f.seekg(std::streamoff(16 + len), std::ios::beg);
    f.read(reinterpret_cast<char*>(data.data()), blob_bytes);
    require(bool(f), "truncated checkpoint blobs in " + path);

    double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (j.contains("adam")) {
        lr = j["adam"].at("lr");
        b1 = j["adam"].at("beta1");
        b2 = j["adam"].at("beta2");
        eps = j["adam"].at("eps");
    }
    for (const auto& e : j.at("manifest")) {
        const std::string name = e.at("name");
        const std::string kind = e.at("kind");
        Shape s{e.at("shape")[0], e.at("shape")[1], e.at("shape")[2], e.at("shape")[3]};
        Tensor<S> t(s);
        const std::size_t off = e.at("offset");
        require(off + std::size_t(t.size()) <= data.size(), "checkpoint blob out of range");
        for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = S(data[off + i]);
        if (kind == "param") {
            ckpt.store.params[name] = std::move(t);
        } else if (kind == "buffer") {
            ckpt.store.buffers[name] = std::move(t);
        } else {
            auto& st = ckpt.opt[name];
            st.lr = S(lr);
            st.beta1 = S(b1);
            st.beta2 = S(b2);
            st.eps = S(eps);
            st.t = e.at("adam_t");
            if (kind == "adam_m")
                st.m = std::move(t);
            else
                st.v = std::move(t);
        }
    }
    return ckpt;
}

}  // namespace scbn
