// scbnet: sparse-sample lithological mapping pipeline as one executable.
//
// Subcommands cover the whole workflow: synth | ingest | rasterize | split |
// patches | train | finetune | predict | evaluate | plot | gradcheck.
// Every run writes a JSON manifest next to its outputs recording the
// subcommand, configuration, seed and FNV-1a hashes of the artifacts.
//
// Exit codes: 0 success, 1 usage error, 2 data/shape error, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include "scbn/gradcheck.hpp"
#include "scbn/infer.hpp"
#include "scbn/io.hpp"
#include "scbn/synth.hpp"
#include "scbn/train.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scbn;

namespace {

// ---------------------------------------------------------------------------
// Manifest plumbing

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), "cannot hash missing file: " + path);
    std::uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (f.read(buf, sizeof buf) || f.gcount())
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= std::uint8_t(buf[i]);
            h *= 1099511628211ull;
        }
    return h;
}

struct Manifest {
    std::string subcommand;
    std::string config_path;
    std::uint64_t seed = 0;
    json config;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

void write_manifest(const Manifest& m, const std::string& dir) {
    json j;
    j["subcommand"] = m.subcommand;
    j["config_file"] = m.config_path;
    j["seed"] = m.seed;
    j["config"] = m.config;
    j["inputs"] = m.inputs;
    json arts = json::array();
    for (const std::string& p : m.outputs) {
        char hex[32];
        std::snprintf(hex, sizeof hex, "%016llx",
                      static_cast<unsigned long long>(fnv1a_file(p)));
        arts.push_back({{"path", p}, {"fnv1a64", hex}});
    }
    j["artifacts"] = arts;
    const std::string path = (fs::path(dir) / ("manifest_" + m.subcommand + ".json")).string();
    std::ofstream f(path);
    require(bool(f), "cannot write manifest: " + path);
    f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Mask / split / vocab files

// Masks travel as GRD: one plane per class (named by class code) plus a final
// "__valid" plane.
void save_masks_grd(const SparseProbMasks& m, const std::vector<std::string>& vocab,
                    const std::string& path) {
    RasterStack s;
    s.width = m.width();
    s.height = m.height();
    s.channels = m.n_classes() + 1;
    s.names = vocab;
    s.names.push_back("__valid");
    s.nodata = -1.f;
    s.data = Tensor<float>(Shape{1, s.channels, s.height, s.width});
    const std::int64_t plane = std::int64_t(s.height) * s.width;
    s.data.data.segment(0, m.n_classes() * plane) = m.probs.data;
    s.data.data.segment(m.n_classes() * plane, plane) = m.valid.data;
    save_grd(s, path);
}

std::pair<SparseProbMasks, std::vector<std::string>> load_masks_grd(const std::string& path) {
    RasterStack s = load_grd(path);
    require(s.channels >= 2 && s.names.back() == "__valid",
            "not a mask raster (missing __valid plane): " + path);
    SparseProbMasks m;
    const int c = s.channels - 1;
    m.probs = Tensor<float>(Shape{1, c, s.height, s.width});
    m.valid = Tensor<float>(Shape{1, 1, s.height, s.width});
    const std::int64_t plane = std::int64_t(s.height) * s.width;
    m.probs.data = s.data.data.segment(0, c * plane);
    m.valid.data = s.data.data.segment(c * plane, plane);
    std::vector<std::string> vocab(s.names.begin(), s.names.end() - 1);
    return {m, vocab};
}

void save_split_json(const SpatialSplit& sp, const std::string& path) {
    json j;
    j["width"] = sp.width;
    j["height"] = sp.height;
    j["block"] = sp.block;
    j["blocks_x"] = sp.blocks_x;
    j["blocks_y"] = sp.blocks_y;
    std::vector<int> roles;
    for (Role r : sp.roles) roles.push_back(int(r));
    j["roles"] = roles;
    std::ofstream f(path);
    require(bool(f), "cannot write split: " + path);
    f << j.dump() << "\n";
}

SpatialSplit load_split_json(const std::string& path) {
    std::ifstream f(path);
    require(bool(f), "cannot open split: " + path);
    json j = json::parse(f);
    SpatialSplit sp;
    sp.width = j.at("width");
    sp.height = j.at("height");
    sp.block = j.at("block");
    sp.blocks_x = j.at("blocks_x");
    sp.blocks_y = j.at("blocks_y");
    for (int r : j.at("roles").get<std::vector<int>>()) sp.roles.push_back(Role(r));
    require(int(sp.roles.size()) == sp.blocks_x * sp.blocks_y, "split role table truncated");
    return sp;
}

Role parse_role(const std::string& s) {
    if (s == "train") return Role::train;
    if (s == "test") return Role::test;
    if (s == "validation") return Role::validation;
    throw ShapeError("unknown role: " + s + " (want train|test|validation)");
}

// ---------------------------------------------------------------------------
// PNG renderings

void render_argmax_png(const std::vector<int>& labels, int w, int h,
                       const std::string& path) {
    std::vector<std::array<std::uint8_t, 3>> px(std::size_t(w) * h);
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = labels[i] >= 0 ? class_color(labels[i])
                               : std::array<std::uint8_t, 3>{0, 0, 0};
    write_png_rgb(path, w, h, px);
}

void render_gray_png(const float* data, int w, int h, const std::string& path) {
    float lo = data[0], hi = data[0];
    const std::int64_t n = std::int64_t(w) * h;
    for (std::int64_t i = 0; i < n; ++i) {
        lo = std::min(lo, data[i]);
        hi = std::max(hi, data[i]);
    }
    const float span = hi - lo > 0 ? hi - lo : 1.f;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        px[std::size_t(i)] = std::uint8_t(255.f * (data[i] - lo) / span);
    write_png_gray(path, w, h, px);
}

// ---------------------------------------------------------------------------
// JSON config helper: CLI flags override file values.

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    require(bool(f), "cannot open config: " + path);
    json j = json::parse(f);
    require(j.value("config_version", 1) == 1, "unsupported config_version");
    return j;
}

template <class T>
T cfg_get(const json& j, const std::string& key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

PatchConfig patch_config_from(const json& j) {
    PatchConfig pc;
    pc.patch = cfg_get(j, "patch", pc.patch);
    pc.max_overlap = cfg_get(j, "max_overlap", pc.max_overlap);
    pc.n_patches = cfg_get(j, "n_patches", pc.n_patches);
    pc.downscale_frac = cfg_get(j, "downscale_frac", pc.downscale_frac);
    pc.rotate_frac = cfg_get(j, "rotate_frac", pc.rotate_frac);
    pc.rotate_range_deg = cfg_get(j, "rotate_range_deg", pc.rotate_range_deg);
    return pc;
}

ArchConfig arch_config_from(const json& j, int n_aux, int n_classes, int patch) {
    ArchConfig a;
    a.depth = cfg_get(j, "depth", a.depth);
    a.base_filters = cfg_get(j, "base_filters", a.base_filters);
    a.embed_channels = cfg_get(j, "embed_channels", a.embed_channels);
    a.n_aux_channels = n_aux;
    a.n_classes = n_classes;
    a.patch_size = patch;
    a.dropblock.block_size = cfg_get(j, "dropblock_size", a.dropblock.block_size);
    a.dropblock.drop_rate = cfg_get(j, "dropblock_rate", a.dropblock.drop_rate);
    return a;
}

TrainConfig train_config_from(const json& j) {
    TrainConfig t;
    t.batch_size = cfg_get(j, "batch_size", t.batch_size);
    t.learning_rate = cfg_get(j, "learning_rate", t.learning_rate);
    t.max_epochs = cfg_get(j, "max_epochs", t.max_epochs);
    t.early_stop_delta = cfg_get(j, "early_stop_delta", t.early_stop_delta);
    t.patience = cfg_get(j, "patience", t.patience);
    t.gamma = cfg_get(j, "gamma", t.gamma);
    t.holdout_rate = cfg_get(j, "holdout_rate", t.holdout_rate);
    t.eval_every = cfg_get(j, "eval_every", t.eval_every);
    t.clip_norm = cfg_get(j, "clip_norm", t.clip_norm);
    return t;
}

int default_threads() {
    if (const char* env = std::getenv("SCBNET_THREADS")) return std::max(1, std::atoi(env));
    return 1;
}

// Shared training driver for `train` and `finetune`.
int run_training(const std::string& aux_path, const std::string& masks_path,
                 const std::string& split_path, const std::string& out_dir,
                 const std::string& config_path, const json& cfg, std::uint64_t seed,
                 bool quiet, const std::string& init_ckpt, const std::string& name) {
    RasterStack stack = load_grd(aux_path);
    auto [masks, vocab] = load_masks_grd(masks_path);
    SpatialSplit split = load_split_json(split_path);
    require(split.width == stack.width && split.height == stack.height,
            "split grid does not match the raster stack");

    PatchConfig pc = patch_config_from(cfg.value("patches", json::object()));
    PatchSet train_patches = extract_patches(stack, masks, split, Role::train, pc, seed + 1);
    PatchSet test_patches = extract_patches(stack, masks, split, Role::test, pc, seed + 2);
    require(!train_patches.patches.empty(), "no training patches extracted");

    TrainConfig tc = train_config_from(cfg.value("train", json::object()));
    tc.seed = seed;
    tc.verbose = !quiet;

    fs::create_directories(out_dir);
    TrainResult res;
    if (init_ckpt.empty()) {
        ArchConfig arch = arch_config_from(cfg.value("arch", json::object()),
                                           stack.channels, int(vocab.size()), pc.patch);
        std::mt19937_64 rng(seed);
        res = train(build_model<float>(arch, rng, vocab), train_patches, test_patches, tc);
    } else {
        Checkpoint<float> pre = load_checkpoint<float>(init_ckpt);
        require(pre.arch.n_aux_channels == stack.channels,
                "pretrained checkpoint expects a different aux channel count");
        res = finetune(pre, train_patches, test_patches, vocab, tc);
    }

    const std::string ckpt_path = (fs::path(out_dir) / "best.ckpt").string();
    const std::string hist_path = (fs::path(out_dir) / "history.csv").string();
    save_checkpoint(res.ckpt, ckpt_path);
    save_history_csv(res.history, hist_path);
    if (!quiet)
        std::printf("%s done: %zu epochs, best test accuracy %.4f (epoch %d)\n",
                    name.c_str(), res.history.rows.size(), res.ckpt.best_test_acc,
                    res.ckpt.epoch);

    Manifest m;
    m.subcommand = name;
    m.config_path = config_path;
    m.seed = seed;
    m.config = cfg;
    m.inputs = {aux_path, masks_path, split_path};
    if (!init_ckpt.empty()) m.inputs.push_back(init_ckpt);
    m.outputs = {ckpt_path, hist_path};
    write_manifest(m, out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage attention res-unet pipeline for sparse-sample lithological mapping"};
    app.require_subcommand(1);

    // ----- synth -----------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a deterministic synthetic dataset");
    SynthConfig syn;
    std::string synth_out = "data";
    synth->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();
    synth->add_option("--width", syn.width)->capture_default_str();
    synth->add_option("--height", syn.height)->capture_default_str();
    synth->add_option("--classes", syn.n_classes)->capture_default_str();
    synth->add_option("--aux", syn.n_aux, "Auxiliary channel count")->capture_default_str();
    synth->add_option("--samples", syn.n_samples)->capture_default_str();
    synth->add_option("--separation", syn.separation)->capture_default_str();
    synth->add_option("--noise", syn.noise_std)->capture_default_str();
    synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

    // ----- ingest ----------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest", "Stack CSV grids into a normalized GRD raster");
    std::vector<std::string> ingest_csvs;
    std::string ingest_out = "stack.grd";
    float ingest_nodata = -9999.f;
    bool ingest_raw = false;
    ingest->add_option("--csv", ingest_csvs, "CSV grid files, one channel each")->required();
    ingest->add_option("--nodata", ingest_nodata)->capture_default_str();
    ingest->add_flag("--raw", ingest_raw, "Skip z-score normalization");
    ingest->add_option("--out", ingest_out)->capture_default_str();

    // ----- rasterize -------------------------------------------------------
    auto* rast = app.add_subcommand("rasterize", "Turn a sample CSV into sparse probability masks");
    std::string rast_samples, rast_out = "masks.grd";
    int rast_w = 0, rast_h = 0;
    double rast_threshold = 0.01;
    rast->add_option("--samples", rast_samples, "CSV with header x,y,code")->required();
    rast->add_option("--width", rast_w)->required();
    rast->add_option("--height", rast_h)->required();
    rast->add_option("--rare-threshold", rast_threshold,
                     "Drop classes at or below this sample frequency")
        ->capture_default_str();
    rast->add_option("--out", rast_out)->capture_default_str();

    // ----- split -----------------------------------------------------------
    auto* split_cmd = app.add_subcommand("split", "Block-wise train/test split");
    std::string split_masks, split_out = "split.json";
    int split_block = 15;
    double split_frac = 0.8;
    std::uint64_t split_seed = 0;
    std::vector<int> split_val;
    split_cmd->add_option("--masks", split_masks)->required();
    split_cmd->add_option("--block", split_block, "Block edge in pixels")->capture_default_str();
    split_cmd->add_option("--train-frac", split_frac)->capture_default_str();
    split_cmd->add_option("--seed", split_seed)->capture_default_str();
    split_cmd->add_option("--validation", split_val, "Validation window x y w h")->expected(4);
    split_cmd->add_option("--out", split_out)->capture_default_str();

    // ----- patches ---------------------------------------------------------
    auto* patches_cmd = app.add_subcommand("patches", "Report the patch set a config would extract");
    std::string pat_aux, pat_masks, pat_split, pat_role = "train", pat_out = "patches.json";
    std::string pat_config;
    std::uint64_t pat_seed = 0;
    patches_cmd->add_option("--aux", pat_aux)->required();
    patches_cmd->add_option("--masks", pat_masks)->required();
    patches_cmd->add_option("--split", pat_split)->required();
    patches_cmd->add_option("--role", pat_role)->capture_default_str();
    patches_cmd->add_option("--config", pat_config, "JSON config (patches section)");
    patches_cmd->add_option("--seed", pat_seed)->capture_default_str();
    patches_cmd->add_option("--out", pat_out)->capture_default_str();

    // ----- train / finetune ------------------------------------------------
    std::string tr_aux, tr_masks, tr_split, tr_out = "run", tr_config, tr_init;
    std::uint64_t tr_seed = 0;
    bool tr_quiet = false;
    auto add_train_opts = [&](CLI::App* c, bool with_init) {
        c->add_option("--aux", tr_aux)->required();
        c->add_option("--masks", tr_masks)->required();
        c->add_option("--split", tr_split)->required();
        c->add_option("--config", tr_config, "JSON config with arch/patches/train sections");
        c->add_option("--seed", tr_seed)->capture_default_str();
        c->add_option("--out", tr_out, "Output directory")->capture_default_str();
        c->add_flag("--quiet", tr_quiet);
        if (with_init) c->add_option("--init", tr_init, "Pretrained checkpoint")->required();
    };
    auto* train_cmd = app.add_subcommand("train", "Train from scratch");
    add_train_opts(train_cmd, false);
    auto* fine_cmd = app.add_subcommand("finetune", "Warm-start from a checkpoint");
    add_train_opts(fine_cmd, true);

    // ----- predict ---------------------------------------------------------
    auto* pred = app.add_subcommand("predict", "Monte Carlo ensemble prediction over the raster");
    std::string pr_ckpt, pr_aux, pr_masks, pr_out = "pred";
    int pr_draws = 100, pr_tile = 0, pr_overlap = 16, pr_threads = default_threads();
    std::uint64_t pr_seed = 0;
    bool pr_constrained = false, pr_unconstrained = false, pr_det = false;
    pred->add_option("--ckpt", pr_ckpt)->required();
    pred->add_option("--aux", pr_aux)->required();
    pred->add_option("--masks", pr_masks, "Mask GRD (required for --constrained)");
    pred->add_option("--draws", pr_draws)->capture_default_str();
    pred->add_option("--tile", pr_tile, "Tile edge (0 = full grid)")->capture_default_str();
    pred->add_option("--overlap", pr_overlap)->capture_default_str();
    pred->add_option("--threads", pr_threads, "Parallel draws (std loses bit-determinism ~1e-7)")
        ->capture_default_str();
    pred->add_option("--seed", pr_seed)->capture_default_str();
    pred->add_flag("--constrained", pr_constrained, "Condition on the sample masks");
    pred->add_flag("--unconstrained", pr_unconstrained, "Zeroed masks (default)");
    pred->add_flag("--deterministic", pr_det, "Disable dropout during draws");
    pred->add_option("--out", pr_out, "Output directory")->capture_default_str();

    // ----- evaluate --------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("evaluate", "Score a prediction against sampled pixels");
    std::string ev_mean, ev_masks, ev_split, ev_role = "test", ev_out = "eval";
    eval_cmd->add_option("--mean", ev_mean, "mean.grd from predict")->required();
    eval_cmd->add_option("--masks", ev_masks)->required();
    eval_cmd->add_option("--split", ev_split)->required();
    eval_cmd->add_option("--role", ev_role)->capture_default_str();
    eval_cmd->add_option("--out", ev_out, "Output directory")->capture_default_str();

    // ----- plot ------------------------------------------------------------
    auto* plot_cmd = app.add_subcommand("plot", "Render a GRD raster to PNG");
    std::string pl_grd, pl_out = "plot.png";
    int pl_channel = 0;
    bool pl_classes = false;
    plot_cmd->add_option("--grd", pl_grd)->required();
    plot_cmd->add_option("--channel", pl_channel, "Channel for grayscale rendering")
        ->capture_default_str();
    plot_cmd->add_flag("--classes", pl_classes, "Render the per-pixel argmax with the class palette");
    plot_cmd->add_option("--out", pl_out)->capture_default_str();

    // ----- gradcheck -------------------------------------------------------
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference audit of the core gradients");
    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-4;
    gc_cmd->add_option("--seed", gc_seed)->capture_default_str();
    gc_cmd->add_option("--tol", gc_tol, "Maximum relative error")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            SynthDataset ds = gen_dataset(syn);
            fs::create_directories(synth_out);
            const std::string aux_path = (fs::path(synth_out) / "aux.grd").string();
            const std::string csv_path = (fs::path(synth_out) / "samples.csv").string();
            const std::string truth_path = (fs::path(synth_out) / "truth.png").string();
            save_grd(ds.stack, aux_path);
            save_samples_csv(ds.samples, csv_path);
            render_argmax_png(ds.truth, syn.width, syn.height, truth_path);
            Manifest m{"synth", "", syn.seed, json{{"width", syn.width},
                                                   {"height", syn.height},
                                                   {"classes", syn.n_classes},
                                                   {"aux", syn.n_aux},
                                                   {"samples", syn.n_samples}},
                       {}, {aux_path, csv_path, truth_path}};
            write_manifest(m, synth_out);
        } else if (*ingest) {
            std::vector<std::pair<std::string, RasterStack>> channels;
            for (const std::string& p : ingest_csvs) {
                const std::string name = fs::path(p).stem().string();
                channels.emplace_back(name, load_csv_grid(p, name, ingest_nodata));
            }
            RasterStack out = stack_channels(channels);
            if (!ingest_raw) zscore_normalize(out);
            save_grd(out, ingest_out);
            Manifest m{"ingest", "", 0, json{{"raw", ingest_raw}}, ingest_csvs, {ingest_out}};
            write_manifest(m, fs::path(ingest_out).parent_path().string().empty()
                                  ? "."
                                  : fs::path(ingest_out).parent_path().string());
        } else if (*rast) {
            SampleTable raw = load_samples_csv(rast_samples);
            auto [kept, vocab] = filter_rare_classes(raw, rast_threshold);
            SparseProbMasks m = rasterize_samples(kept, rast_w, rast_h, vocab);
            save_masks_grd(m, vocab, rast_out);
            std::printf("rasterize: %zu samples kept, %zu classes\n", kept.rows.size(),
                        vocab.size());
            Manifest mf{"rasterize", "", 0,
                        json{{"rare_threshold", rast_threshold},
                             {"width", rast_w}, {"height", rast_h}, {"vocab", vocab}},
                        {rast_samples}, {rast_out}};
            write_manifest(mf, fs::path(rast_out).parent_path().string().empty()
                                   ? "."
                                   : fs::path(rast_out).parent_path().string());
        } else if (*split_cmd) {
            auto [m, vocab] = load_masks_grd(split_masks);
            std::optional<Rect> vr;
            if (!split_val.empty())
                vr = Rect{split_val[0], split_val[1], split_val[2], split_val[3]};
            SpatialSplit sp = make_spatial_split(m.width(), m.height(), m, split_block,
                                                 split_frac, vr, split_seed);
            save_split_json(sp, split_out);
            Manifest mf{"split", "", split_seed,
                        json{{"block", split_block}, {"train_frac", split_frac}},
                        {split_masks}, {split_out}};
            write_manifest(mf, fs::path(split_out).parent_path().string().empty()
                                   ? "."
                                   : fs::path(split_out).parent_path().string());
        } else if (*patches_cmd) {
            RasterStack stack = load_grd(pat_aux);
            auto [m, vocab] = load_masks_grd(pat_masks);
            SpatialSplit sp = load_split_json(pat_split);
            json cfg = load_config(pat_config);
            PatchConfig pc = patch_config_from(cfg.value("patches", json::object()));
            PatchSet ps = extract_patches(stack, m, sp, parse_role(pat_role), pc, pat_seed);
            json rep;
            rep["n_patches"] = ps.patches.size();
            rep["patch_size"] = ps.patch_size;
            int n_ds = 0, n_rot = 0;
            json prov = json::array();
            for (const Patch& p : ps.patches) {
                n_ds += p.prov.scale == 2;
                n_rot += p.prov.rotation_deg != 0.0;
                prov.push_back({{"ox", p.prov.ox}, {"oy", p.prov.oy},
                                {"scale", p.prov.scale},
                                {"rotation_deg", p.prov.rotation_deg}});
            }
            rep["n_downscaled"] = n_ds;
            rep["n_rotated"] = n_rot;
            rep["provenance"] = prov;
            std::ofstream f(pat_out);
            require(bool(f), "cannot write " + pat_out);
            f << rep.dump(2) << "\n";
            f.close();
            std::printf("patches: %zu emitted (%d downscaled, %d rotated)\n",
                        ps.patches.size(), n_ds, n_rot);
            Manifest mf{"patches", pat_config, pat_seed, cfg,
                        {pat_aux, pat_masks, pat_split}, {pat_out}};
            write_manifest(mf, fs::path(pat_out).parent_path().string().empty()
                                   ? "."
                                   : fs::path(pat_out).parent_path().string());
        } else if (*train_cmd || *fine_cmd) {
            const bool ft = bool(*fine_cmd);
            json cfg = load_config(tr_config);
            return run_training(tr_aux, tr_masks, tr_split, tr_out, tr_config, cfg, tr_seed,
                                tr_quiet, ft ? tr_init : std::string(),
                                ft ? "finetune" : "train");
        } else if (*pred) {
            if (pr_constrained && pr_unconstrained)
                throw ShapeError("--constrained and --unconstrained are mutually exclusive");
            Checkpoint<float> ckpt = load_checkpoint<float>(pr_ckpt);
            RasterStack stack = load_grd(pr_aux);
            std::optional<SparseProbMasks> masks;
            if (pr_constrained) {
                require(!pr_masks.empty(), "--constrained requires --masks");
                masks = load_masks_grd(pr_masks).first;
            }
            int tile = pr_tile > 0 ? pr_tile : std::min(stack.width, stack.height);
            tile -= tile % (1 << ckpt.arch.depth);
            const int overlap = std::min(pr_overlap, tile - 1);
            EnsembleResult r =
                mc_predict(ckpt, stack, masks ? &*masks : nullptr, pr_draws, tile,
                           tile < std::min(stack.width, stack.height) ? overlap : 0,
                           pr_seed, pr_threads, pr_det);

            fs::create_directories(pr_out);
            auto grd_path = [&](const char* n) { return (fs::path(pr_out) / n).string(); };
            RasterStack mean_grd;
            mean_grd.width = stack.width;
            mean_grd.height = stack.height;
            mean_grd.channels = ckpt.arch.n_classes;
            mean_grd.names = ckpt.vocab;
            mean_grd.nodata = -1.f;
            mean_grd.data = r.mean;
            save_grd(mean_grd, grd_path("mean.grd"));
            RasterStack std_grd = mean_grd;
            std_grd.data = r.stddev;
            save_grd(std_grd, grd_path("std.grd"));
            render_argmax_png(r.argmax_map, stack.width, stack.height,
                              grd_path("argmax.png"));
            // average channel std as one uncertainty surface
            Tensor<float> u(Shape{1, 1, stack.height, stack.width});
            const std::int64_t plane = std::int64_t(stack.height) * stack.width;
            for (std::int64_t q = 0; q < plane; ++q) {
                float s = 0;
                for (int c = 0; c < ckpt.arch.n_classes; ++c)
                    s += r.stddev.data[c * plane + q];
                u.data[q] = s / float(ckpt.arch.n_classes);
            }
            render_gray_png(u.data.data(), stack.width, stack.height,
                            grd_path("uncertainty.png"));
            std::printf("predict: %d draws, %s, tile %d\n", pr_draws,
                        r.constrained ? "constrained" : "unconstrained", tile);

            Manifest mf{"predict", "", pr_seed,
                        json{{"draws", pr_draws}, {"tile", tile}, {"overlap", overlap},
                             {"threads", pr_threads}, {"constrained", r.constrained},
                             {"deterministic", pr_det}},
                        {pr_ckpt, pr_aux},
                        {grd_path("mean.grd"), grd_path("std.grd"), grd_path("argmax.png"),
                         grd_path("uncertainty.png")}};
            if (!pr_masks.empty()) mf.inputs.push_back(pr_masks);
            write_manifest(mf, pr_out);
        } else if (*eval_cmd) {
            RasterStack mean = load_grd(ev_mean);
            auto [masks, vocab] = load_masks_grd(ev_masks);
            SpatialSplit sp = load_split_json(ev_split);
            require(mean.channels == masks.n_classes(),
                    "prediction channel count != mask classes");
            EnsembleResult r;
            r.mean = mean.data;
            r.stddev = Tensor<float>(mean.data.shape);
            r.n_draws = 1;
            const std::int64_t plane = std::int64_t(mean.height) * mean.width;
            r.argmax_map.assign(std::size_t(plane), 0);
            for (std::int64_t q = 0; q < plane; ++q) {
                int best = 0;
                float bv = mean.data.data[q];
                for (int c = 1; c < mean.channels; ++c)
                    if (mean.data.data[c * plane + q] > bv) {
                        bv = mean.data.data[c * plane + q];
                        best = c;
                    }
                r.argmax_map[std::size_t(q)] = best;
            }
            EvalBundle ev = evaluate(r, masks, sp, parse_role(ev_role));

            fs::create_directories(ev_out);
            json rep;
            rep["role"] = ev_role;
            rep["n_pixels"] = ev.n_pixels;
            rep["weighted_accuracy"] = ev.weighted_acc;
            rep["per_class_accuracy"] = ev.per_class_acc;
            rep["vocab"] = vocab;
            json cm = json::array();
            for (int t = 0; t < ev.cm.n_classes; ++t) {
                json row = json::array();
                for (int p = 0; p < ev.cm.n_classes; ++p) row.push_back(ev.cm.count(t, p));
                cm.push_back(row);
            }
            rep["confusion_counts"] = cm;
            const std::string rep_path = (fs::path(ev_out) / "report.json").string();
            std::ofstream f(rep_path);
            f << rep.dump(2) << "\n";
            f.close();
            std::vector<std::uint8_t> mis(ev.misclass.size());
            for (std::size_t i = 0; i < mis.size(); ++i)
                mis[i] = ev.misclass[i] == 0 ? 0 : (ev.misclass[i] == 1 ? 255 : 128);
            const std::string mis_path = (fs::path(ev_out) / "misclass.png").string();
            write_png_gray(mis_path, mean.width, mean.height, mis);
            std::printf("evaluate[%s]: %lld pixels, weighted accuracy %.4f\n",
                        ev_role.c_str(), static_cast<long long>(ev.n_pixels),
                        ev.weighted_acc);
            Manifest mf{"evaluate", "", 0, json{{"role", ev_role}},
                        {ev_mean, ev_masks, ev_split}, {rep_path, mis_path}};
            write_manifest(mf, ev_out);
        } else if (*plot_cmd) {
            RasterStack s = load_grd(pl_grd);
            if (pl_classes) {
                const std::int64_t plane = std::int64_t(s.height) * s.width;
                std::vector<int> labels(std::size_t(plane), 0);
                for (std::int64_t q = 0; q < plane; ++q) {
                    int best = 0;
                    float bv = s.data.data[q];
                    for (int c = 1; c < s.channels; ++c)
                        if (s.data.data[c * plane + q] > bv) {
                            bv = s.data.data[c * plane + q];
                            best = c;
                        }
                    labels[std::size_t(q)] = best;
                }
                render_argmax_png(labels, s.width, s.height, pl_out);
            } else {
                require(pl_channel >= 0 && pl_channel < s.channels,
                        "channel out of range (raster has " +
                            std::to_string(s.channels) + ")");
                render_gray_png(s.data.data.data() +
                                    std::int64_t(pl_channel) * s.height * s.width,
                                s.width, s.height, pl_out);
            }
        } else if (*gc_cmd) {
            std::mt19937_64 rng(gc_seed);
            double worst = 0;
            auto report = [&](const char* name, const GradCheckReport& r) {
                std::printf("%-22s rel err %.3e over %lld coords\n", name, r.max_rel_err,
                            static_cast<long long>(r.n_checked));
                worst = std::max(worst, r.max_rel_err);
            };
            {
                Tensor<double> x = Tensor<double>::randn(Shape{1, 2, 6, 6}, rng);
                Tensor<double> w = Tensor<double>::randn(Shape{3, 2, 3, 3}, rng, 0.5);
                Tensor<double> b = Tensor<double>::randn(Shape{1, 3, 1, 1}, rng, 0.1);
                report("conv2d", grad_check(
                                     [&](Graph<double>& g, Var xin) {
                                         Var y = conv2d(g, xin, g.constant(w),
                                                        g.constant(b), 1, 1);
                                         return sum_all(g, mul(g, y, y));
                                     },
                                     x, 1e-5));
            }
            {
                Tensor<double> x = Tensor<double>::randn(Shape{1, 3, 5, 5}, rng);
                Tensor<double> t(Shape{1, 3, 5, 5});
                Tensor<double> v(Shape{1, 1, 5, 5});
                std::uniform_int_distribution<int> cls(0, 2);
                for (int q = 0; q < 25; ++q)
                    if (q % 2 == 0) {
                        v.data[q] = 1;
                        t.data[cls(rng) * 25 + q] = 1;
                    }
                FocalLossConfig<double> fc;
                fc.class_weights = {1, 1, 1};
                DilationSchedule<double> sched;
                report("softmax+dilated_fcce",
                       grad_check(
                           [&](Graph<double>& g, Var xin) {
                               return dilated_fcce(g, softmax_channels(g, xin), t, v,
                                                   sched, fc);
                           },
                           x, 1e-5));
            }
            {
                ArchConfig a;
                a.depth = 2;
                a.base_filters = 4;
                a.embed_channels = 4;
                a.n_aux_channels = 2;
                a.n_classes = 3;
                a.patch_size = 8;
                a.dropblock.drop_rate = 0.0;
                std::mt19937_64 mrng(gc_seed + 1);
                auto ckpt = build_model<double>(a, mrng);
                Tensor<double> masks = zero_masks<double>(1, 3, 8, 8);
                Tensor<double> ws = Tensor<double>::randn(Shape{1, 3, 8, 8}, rng);
                report("full model (input)",
                       grad_check(
                           [&](Graph<double>& g, Var xin) {
                               ParamBinding<double> p{&ckpt.store, &g, false, {}};
                               std::mt19937_64 frng(0);
                               Var probs = forward_graph(ckpt, p, xin, g.constant(masks),
                                                         ForwardMode::deterministic, frng);
                               return sum_all(g, mul(g, probs, g.constant(ws)));
                           },
                           Tensor<double>::randn(Shape{1, 2, 8, 8}, rng, 0.5), 1e-5));
            }
            std::printf("worst relative error %.3e (tolerance %.1e)\n", worst, gc_tol);
            if (worst > gc_tol) {
                std::fprintf(stderr, "gradcheck failed tolerance\n");
                return 3;
            }
        }
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
