// vsr: desk-scale generative canopy-height super-resolution.
//
// Subcommands: gen-data, split, train-ae, train-flow, infer, evaluate,
// grad-check, solver-check. Exit codes: 0 success, 2 configuration error,
// 3 data error, 4 numerical failure.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vsr/baseline.hpp"
#include "vsr/checks.hpp"
#include "vsr/dataset.hpp"
#include "vsr/pipeline.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace vsr;

namespace {

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
    return buf;
}

RunConfig load_config(const std::string& path) {
    return path.empty() ? RunConfig() : RunConfig::parse_file(path);
}

void write_resolved(const RunConfig& cfg, const std::string& dir, const std::string& sub) {
    fs::create_directories(dir);
    write_text_atomic(dir + "/config." + sub + ".cfg", cfg.resolved_text());
}

uint64_t file_digest(const std::string& path) {
    auto bytes = read_file_bytes(path);
    return fnv1a64(bytes.data(), bytes.size());
}

MetricsConfig metrics_from(const RunConfig& cfg) {
    MetricsConfig m;
    m.mask_threshold = float(cfg.get_double("metrics", "mask_threshold"));
    m.block = size_t(cfg.get_int("metrics", "block"));
    m.block_mean_variant = cfg.get_bool("metrics", "block_mean_variant");
    m.bin_edges = cfg.get_list("metrics", "bin_edges");
    m.quantiles = cfg.get_list("metrics", "quantiles");
    m.agg_factor = size_t(cfg.get_int("metrics", "agg_factor"));
    return m;
}

IntegratorConfig integrator_from(const RunConfig& cfg) {
    IntegratorConfig ic;
    ic.method = ode_method_from(cfg.get_str("integrator", "method"));
    ic.mode = ode_mode_from(cfg.get_str("integrator", "mode"));
    ic.steps = int(cfg.get_int("integrator", "steps"));
    ic.rtol = cfg.get_double("integrator", "rtol");
    ic.atol = cfg.get_double("integrator", "atol");
    return ic;
}

AutoencoderConfig source_ae_config(const RunConfig& cfg) {
    return AutoencoderConfig{size_t(cfg.get_int("data", "bands")),
                             size_t(cfg.get_int("data", "source_size")),
                             size_t(cfg.get_int("autoencoders", "source_patch")),
                             size_t(cfg.get_int("autoencoders", "cs")),
                             size_t(cfg.get_int("autoencoders", "hidden"))};
}

AutoencoderConfig target_ae_config(const RunConfig& cfg) {
    const size_t fine = size_t(cfg.get_int("data", "source_size") * cfg.get_int("data", "scale"));
    return AutoencoderConfig{1, fine, size_t(cfg.get_int("autoencoders", "target_patch")),
                             size_t(cfg.get_int("autoencoders", "ct")),
                             size_t(cfg.get_int("autoencoders", "hidden"))};
}

struct FoldTiles {
    std::vector<TilePair> train, validation;
};

// Kept tiles (water and negative-height dropped) split by fold.
FoldTiles load_fold_tiles(const std::string& root) {
    DatasetManifest m = load_manifest(root);
    FilterResult filt = filter_tiles(load_tiles(root, m));
    FoldTiles out;
    for (auto& t : filt.kept)
        (t.fold == Fold::train ? out.train : out.validation).push_back(std::move(t));
    return out;
}

// Manifest entries an inference/evaluation run operates on.
std::vector<DatasetManifestEntry> select_entries(const DatasetManifest& m,
                                                 const std::string& fold,
                                                 const std::vector<uint32_t>& ids) {
    if (fold != "train" && fold != "validation" && fold != "all")
        throw ConfigError("fold must be train, validation, or all, got '" + fold + "'");
    std::vector<DatasetManifestEntry> out;
    for (const auto& e : m.entries) {
        if (e.water) continue;
        if (fold == "train" && e.fold != Fold::train) continue;
        if (fold == "validation" && e.fold != Fold::validation) continue;
        if (!ids.empty() && std::find(ids.begin(), ids.end(), e.id) == ids.end()) continue;
        out.push_back(e);
    }
    return out;
}

Tensor load_checked(const std::string& root, const std::string& rel, uint64_t digest) {
    auto bytes = read_file_bytes(root + "/" + rel);
    if (fnv1a64(bytes.data(), bytes.size()) != digest)
        throw DataError(rel + ": digest mismatch (corrupt file)");
    return decode_tile(bytes, rel);
}

void write_loss_csv(const std::string& path, const TrainCurve& curve) {
    CsvWriter csv(path, {"step", "loss"});
    for (size_t i = 0; i < curve.steps.size(); ++i)
        csv.row({std::to_string(curve.steps[i]), csv_num(curve.losses[i])});
    csv.flush();
}

// Mean reconstruction RMSE in normalized space over a set of inputs.
double recon_rmse(const PatchAutoencoder& ae, const std::vector<Tensor>& inputs) {
    double sse = 0;
    size_t n = 0;
    for (const auto& x : inputs) {
        Tensor recon = ae.decode(ae.encode(x));
        for (size_t i = 0; i < x.numel(); ++i) {
            const double d = double(recon.data()[i]) - double(x.data()[i]);
            sse += d * d;
        }
        n += x.numel();
    }
    if (n == 0) throw DataError("reconstruction RMSE over an empty tile set");
    return std::sqrt(sse / double(n));
}

Tensor as_2d(const Tensor& chw) {
    if (chw.ndim() == 3 && chw.dim(0) == 1) return reshape(chw, {chw.dim(1), chw.dim(2)});
    if (chw.ndim() == 2) return chw;
    throw DimensionError("expected a single-channel field, got " + shape_str(chw.shape()));
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out) {
    write_resolved(cfg, out, "gen-data");
    GenSummary s = generate_dataset(cfg, out);
    std::printf("gen-data: %zu tiles (%zu train kept, %zu validation kept, %zu water, %zu negative)\n",
                s.tiles, s.train_kept, s.validation_kept, s.water_flagged, s.negative_dropped);
    return 0;
}

int cmd_split(const RunConfig& cfg0, const std::string& data, uint32_t cell) {
    RunConfig cfg = cfg0;
    cfg.set("data", "cell", std::to_string(cell));
    split_dataset(data, cell);
    write_resolved(cfg, data, "split");
    DatasetManifest m = load_manifest(data);
    size_t train = 0, val = 0;
    for (const auto& e : m.entries) (e.fold == Fold::train ? train : val) += 1;
    std::printf("split: cell %u -> %zu train / %zu validation tiles\n", cell, train, val);
    return 0;
}

int cmd_train_ae(const RunConfig& cfg, const std::string& data, const std::string& out,
                 const std::string& which) {
    if (which != "source" && which != "target")
        throw ConfigError("--which must be source or target, got '" + which + "'");
    write_resolved(cfg, out, "train-ae");

    DatasetStats stats = load_stats(data);
    FoldTiles folds = load_fold_tiles(data);
    if (folds.train.empty()) throw DataError("train-ae: no training tiles in " + data);

    const bool src = which == "source";
    std::vector<Tensor> train_in, val_in;
    for (const auto& t : folds.train)
        train_in.push_back(src ? normalize_source(t.coarse, stats) : normalize_target(t.fine, stats));
    for (const auto& t : folds.validation)
        val_in.push_back(src ? normalize_source(t.coarse, stats) : normalize_target(t.fine, stats));

    AutoencoderConfig acfg = src ? source_ae_config(cfg) : target_ae_config(cfg);
    acfg.validate();
    const uint64_t seed = uint64_t(cfg.get_int("data", "seed"));
    PatchAutoencoder ae = PatchAutoencoder::init(acfg, derive_seed(seed, src ? 0xae50 : 0xae51));

    AeTrainConfig tc;
    tc.steps = size_t(cfg.get_int("autoencoders", "steps"));
    tc.batch = size_t(cfg.get_int("autoencoders", "batch"));
    tc.opt.lr = float(cfg.get_double("autoencoders", "lr"));
    tc.opt.weight_decay = float(cfg.get_double("autoencoders", "weight_decay"));
    tc.seed = derive_seed(seed, src ? 0xae52 : 0xae53);

    std::printf("train-ae(%s): %zu training tiles, %zu steps\n", which.c_str(), train_in.size(),
                tc.steps);
    TrainCurve curve = train_autoencoder(ae, train_in, tc);
    write_loss_csv(out + "/loss_" + which + ".csv", curve);
    if (curve.aborted)
        throw NumericError("train-ae(" + which + "): non-finite loss at step " +
                           std::to_string(curve.steps_done) + "; last good weights discarded");

    const double train_rmse = recon_rmse(ae, train_in);
    const double heldout_rmse = val_in.empty() ? 0.0 : recon_rmse(ae, val_in);
    ae.freeze();

    std::map<std::string, std::string> meta;
    meta["which"] = which;
    meta["stats_digest"] = hex64(stats.digest());
    Checkpoint ck = autoencoder_to_checkpoint(ae, meta);
    const std::string ck_path = out + "/" + which + "_ae.vsrc";
    save_checkpoint(ck_path, ck);

    ordered_json man;
    man["format"] = "vsr-train-ae-1";
    man["which"] = which;
    man["inputs"]["dataset_manifest_digest"] = hex64(file_digest(data + "/manifest.json"));
    man["inputs"]["stats_digest"] = hex64(stats.digest());
    man["checkpoint"] = which + "_ae.vsrc";
    man["checkpoint_digest"] = hex64(ck.digest());
    man["params_digest"] = hex64(params_digest(ae.named_params()));
    man["steps_done"] = curve.steps_done;
    man["final_loss"] = curve.losses.empty() ? 0.0 : curve.losses.back();
    man["train_rmse"] = train_rmse;
    man["heldout_rmse"] = heldout_rmse;
    write_text_atomic(out + "/manifest.json", man.dump(2) + "\n");

    std::printf("train-ae(%s): final loss %.6g, train RMSE %.6g, held-out RMSE %.6g\n",
                which.c_str(), man["final_loss"].get<double>(), train_rmse, heldout_rmse);
    return 0;
}

int cmd_train_flow(const RunConfig& cfg, const std::string& data, const std::string& src_ck,
                   const std::string& tgt_ck, const std::string& out) {
    write_resolved(cfg, out, "train-flow");

    PatchAutoencoder src = autoencoder_from_checkpoint(load_checkpoint(src_ck));
    PatchAutoencoder tgt = autoencoder_from_checkpoint(load_checkpoint(tgt_ck));
    DatasetStats stats = load_stats(data);
    FoldTiles folds = load_fold_tiles(data);
    if (folds.train.empty()) throw DataError("train-flow: no training tiles in " + data);

    if (src.cfg.latent_grid() != tgt.cfg.latent_grid())
        throw ConfigError("train-flow: latent grids disagree (" +
                          std::to_string(src.cfg.latent_grid()) + " vs " +
                          std::to_string(tgt.cfg.latent_grid()) + ")");

    UViTConfig ucfg;
    ucfg.depth = size_t(cfg.get_int("uvit", "depth"));
    ucfg.heads = size_t(cfg.get_int("uvit", "heads"));
    ucfg.dim = size_t(cfg.get_int("uvit", "dim"));
    ucfg.mlp_ratio = size_t(cfg.get_int("uvit", "mlp_ratio"));
    ucfg.grid = src.cfg.latent_grid();
    ucfg.state_channels = src.cfg.latent_channels + tgt.cfg.latent_channels;
    ucfg.validate();

    const uint64_t seed = uint64_t(cfg.get_int("data", "seed"));
    UViT model = UViT::init(ucfg, derive_seed(seed, 0xf100));

    FlowTrainConfig tc;
    tc.steps = size_t(cfg.get_int("flow", "steps"));
    tc.batch = size_t(cfg.get_int("flow", "batch"));
    tc.opt.lr = float(cfg.get_double("flow", "lr"));
    tc.opt.weight_decay = float(cfg.get_double("flow", "weight_decay"));
    tc.seed = derive_seed(seed, 0xf101);
    tc.log_every = size_t(cfg.get_int("flow", "log_every"));

    std::printf("train-flow: %zu training tiles, %zu steps, model depth %zu dim %zu\n",
                folds.train.size(), tc.steps, ucfg.depth, ucfg.dim);
    TrainCurve curve = train_flow(model, folds.train, src, tgt, stats, tc);
    write_loss_csv(out + "/loss_flow.csv", curve);
    if (curve.aborted)
        throw NumericError("train-flow: non-finite loss at step " +
                           std::to_string(curve.steps_done) + "; last good weights discarded");

    std::map<std::string, std::string> meta;
    meta["source_ae_digest"] = hex64(params_digest(src.named_params()));
    meta["target_ae_digest"] = hex64(params_digest(tgt.named_params()));
    meta["stats_digest"] = hex64(stats.digest());
    Checkpoint ck = uvit_to_checkpoint(model, meta);
    save_checkpoint(out + "/flow_model.vsrc", ck);

    ordered_json man;
    man["format"] = "vsr-train-flow-1";
    man["inputs"]["source_ae"] = src_ck;
    man["inputs"]["source_ae_digest"] = hex64(file_digest(src_ck));
    man["inputs"]["target_ae"] = tgt_ck;
    man["inputs"]["target_ae_digest"] = hex64(file_digest(tgt_ck));
    man["inputs"]["dataset_manifest_digest"] = hex64(file_digest(data + "/manifest.json"));
    man["inputs"]["stats_digest"] = hex64(stats.digest());
    man["checkpoint"] = "flow_model.vsrc";
    man["checkpoint_digest"] = hex64(ck.digest());
    man["steps_done"] = curve.steps_done;
    man["final_loss"] = curve.losses.empty() ? 0.0 : curve.losses.back();
    write_text_atomic(out + "/manifest.json", man.dump(2) + "\n");

    std::printf("train-flow: done, final loss %.6g\n", man["final_loss"].get<double>());
    return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& data, const std::string& src_ck,
              const std::string& tgt_ck, const std::string& model_ck, const std::string& out,
              const std::string& fold, const std::vector<uint32_t>& ids, bool baseline,
              bool clamp_conditioning, size_t render) {
    write_resolved(cfg, out, "infer");
    fs::create_directories(fs::path(out) / "tiles");

    DatasetManifest m = load_manifest(data);
    std::vector<DatasetManifestEntry> sel = select_entries(m, fold, ids);
    if (sel.empty()) throw DataError("infer: no tiles selected (fold " + fold + ")");

    DatasetStats stats = load_stats(data);
    InferOptions opt;
    opt.integrator = integrator_from(cfg);
    opt.clamp_conditioning = clamp_conditioning;

    PatchAutoencoder src, tgt;
    UViT model;
    if (!baseline) {
        if (src_ck.empty() || tgt_ck.empty() || model_ck.empty())
            throw ConfigError("infer: --source-ae, --target-ae and --model are required "
                              "(or pass --baseline)");
        src = autoencoder_from_checkpoint(load_checkpoint(src_ck));
        tgt = autoencoder_from_checkpoint(load_checkpoint(tgt_ck));
        model = uvit_from_checkpoint(load_checkpoint(model_ck));
    }

    ordered_json tiles_json = ordered_json::array();
    std::string traj;
    if (render) fs::create_directories(fs::path(out) / "render");

    size_t done = 0;
    for (const auto& e : sel) {
        Tensor coarse = load_checked(data, e.coarse_file, e.coarse_digest);
        Tensor pred;
        if (baseline) {
            pred = baseline_predict(coarse, m.scale, double(stats.chm_max));
        } else {
            InferResult r = infer_tile(coarse, src, tgt, model, stats, opt);
            pred = std::move(r.chm);
            ordered_json jt;
            jt["id"] = e.id;
            jt["nfev"] = r.rec.nfev;
            jt["max_err"] = r.rec.max_err;
            jt["cond_drift"] = r.rec.cond_drift;
            traj += jt.dump() + "\n";
        }
        char name[32];
        std::snprintf(name, sizeof(name), "tiles/p_%05u.vsrt", e.id);
        auto bytes = encode_tile(pred);
        write_file_atomic(out + "/" + name, bytes);
        ordered_json jt;
        jt["id"] = e.id;
        jt["file"] = name;
        jt["digest"] = hex64(fnv1a64(bytes.data(), bytes.size()));
        tiles_json.push_back(std::move(jt));

        if (done < render) {
            char pname[48];
            std::snprintf(pname, sizeof(pname), "render/p_%05u.pgm", e.id);
            write_pgm16(out + "/" + pname, pred.data(), pred.dim(1), pred.dim(2), 0.0f,
                        stats.chm_max);
        }
        ++done;
        if (done % 100 == 0 || done == sel.size())
            std::printf("infer: %zu/%zu tiles\n", done, sel.size());
    }
    if (!baseline) write_text_atomic(out + "/trajectories.jsonl", traj);

    ordered_json man;
    man["format"] = "vsr-predictions-1";
    man["mode"] = baseline ? "baseline" : "model";
    man["fold"] = fold;
    man["inputs"]["dataset_manifest_digest"] = hex64(file_digest(data + "/manifest.json"));
    man["inputs"]["stats_digest"] = hex64(stats.digest());
    if (!baseline) {
        man["inputs"]["source_ae_digest"] = hex64(file_digest(src_ck));
        man["inputs"]["target_ae_digest"] = hex64(file_digest(tgt_ck));
        man["inputs"]["model_digest"] = hex64(file_digest(model_ck));
        man["integrator"]["method"] = cfg.get_str("integrator", "method");
        man["integrator"]["mode"] = cfg.get_str("integrator", "mode");
        man["integrator"]["steps"] = opt.integrator.steps;
        man["clamp_conditioning"] = clamp_conditioning;
    }
    man["tiles"] = std::move(tiles_json);
    write_text_atomic(out + "/manifest.json", man.dump(2) + "\n");
    return 0;
}

// Prediction fields keyed by id from either a predictions dir or a dataset
// dir (self-evaluation against the reference fine tiles).
std::vector<IdField> load_pred_fields(const std::string& pred_root) {
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(pred_root + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("predictions manifest " + pred_root + "/manifest.json: " + e.what());
    }
    std::vector<IdField> out;
    if (j.contains("format") && j.at("format").is_string() &&
        j.at("format").get<std::string>() == "vsr-predictions-1") {
        for (const auto& jt : j.at("tiles")) {
            const uint32_t id = jt.at("id").get<uint32_t>();
            const std::string file = jt.at("file").get<std::string>();
            auto bytes = read_file_bytes(pred_root + "/" + file);
            uint64_t want = 0;
            const std::string ds = jt.at("digest").get<std::string>();
            if (ds.size() != 16) throw DataError(file + ": malformed digest in manifest");
            for (char c : ds) {
                if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')))
                    throw DataError(file + ": malformed digest in manifest");
                want = (want << 4) | uint64_t(c <= '9' ? c - '0' : c - 'a' + 10);
            }
            if (fnv1a64(bytes.data(), bytes.size()) != want)
                throw DataError("prediction tile " + file + ": digest mismatch (corrupt file)");
            out.emplace_back(id, as_2d(decode_tile(bytes, file)));
        }
        return out;
    }
    if (j.contains("format") && j.at("format").is_string())
        throw DataError(pred_root + ": not a predictions or dataset directory (format '" +
                        j.at("format").get<std::string>() + "')");
    // Fall back to a dataset manifest: evaluate the reference against itself.
    DatasetManifest dm = load_manifest(pred_root);
    for (const auto& e : dm.entries) {
        if (e.water) continue;
        out.emplace_back(e.id, as_2d(load_checked(pred_root, e.fine_file, e.fine_digest)));
    }
    return out;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& data, const std::string& pred,
                 const std::string& out, const std::string& fold, size_t render) {
    write_resolved(cfg, out, "evaluate");
    MetricsConfig mc = metrics_from(cfg);

    DatasetManifest m = load_manifest(data);
    std::vector<DatasetManifestEntry> sel = select_entries(m, fold, {});
    if (sel.empty()) throw DataError("evaluate: no reference tiles selected (fold " + fold + ")");

    std::vector<IdField> refs;
    std::vector<uint32_t> wanted;
    for (const auto& e : sel) {
        refs.emplace_back(e.id, as_2d(load_checked(data, e.fine_file, e.fine_digest)));
        wanted.push_back(e.id);
    }
    std::vector<IdField> preds_all = load_pred_fields(pred);
    // Keep only the selected fold's ids; extraneous prediction tiles (e.g.
    // a full-dataset self-evaluation source) are not an error.
    std::vector<IdField> preds;
    for (auto& pf : preds_all)
        if (std::find(wanted.begin(), wanted.end(), pf.first) != wanted.end())
            preds.push_back(std::move(pf));

    EvalReport rep = evaluate_pairs(refs, preds, mc);
    write_text_atomic(out + "/report.csv", eval_report_csv(rep));
    write_text_atomic(out + "/report.json", eval_report_json(rep, mc));

    if (render) {
        fs::create_directories(fs::path(out) / "render");
        for (size_t i = 0; i < std::min(render, refs.size()); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "render/ref_%05u.pgm", refs[i].first);
            const Tensor& rf = refs[i].second;
            write_pgm16(out + "/" + name, rf.data(), rf.dim(0), rf.dim(1), 0.0f, 120.0f);
            std::snprintf(name, sizeof(name), "render/pred_%05u.pgm", preds[i].first);
            const Tensor& pf = preds[i].second;
            write_pgm16(out + "/" + name, pf.data(), pf.dim(0), pf.dim(1), 0.0f, 120.0f);
        }
    }

    ordered_json man;
    man["format"] = "vsr-evaluation-1";
    man["fold"] = fold;
    man["inputs"]["dataset_manifest_digest"] = hex64(file_digest(data + "/manifest.json"));
    man["inputs"]["predictions_manifest_digest"] = hex64(file_digest(pred + "/manifest.json"));
    man["reports"]["csv"] = "report.csv";
    man["reports"]["json"] = "report.json";
    man["tiles"] = rep.rows.size();
    write_text_atomic(out + "/manifest.json", man.dump(2) + "\n");

    const PooledMetrics& p = rep.pooled_native;
    std::printf("evaluate: %zu tiles, pooled MAE %.4f m, ME %+.4f m, EE %.6f, Block-R2 %s\n",
                rep.rows.size(), p.mae, p.me, p.ee,
                p.r2_defined ? csv_num(p.r2).c_str() : "undefined");
    return 0;
}

int cmd_check(const std::string& which, const std::string& out) {
    CheckReport rep = which == "grad" ? grad_check_report() : solver_check_report();
    const std::string text = render_check_report(rep);
    std::fputs(text.c_str(), stdout);
    if (!out.empty()) {
        fs::create_directories(out);
        write_text_atomic(out + "/" + which + "-check.txt", text);
    }
    if (!rep.all_pass()) throw NumericError(which + "-check: verification failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale generative canopy-height super-resolution"};
    app.require_subcommand(1);

    std::string config, data, out, which = "source", fold = "validation";
    std::string src_ck, tgt_ck, model_ck, pred;
    uint32_t cell = 2;
    std::vector<uint32_t> ids;
    bool baseline = false, clamp_cond = false;
    size_t render = 0;

    auto* gen = app.add_subcommand("gen-data", "synthesize a paired dataset");
    gen->add_option("--config", config, "run configuration file");
    gen->add_option("--out", out, "dataset output directory")->required();

    auto* spl = app.add_subcommand("split", "reassign checkerboard folds");
    spl->add_option("--config", config, "run configuration file");
    spl->add_option("--data", data, "dataset directory")->required();
    spl->add_option("--cell", cell, "checkerboard cell size in tiles")->required();

    auto* tae = app.add_subcommand("train-ae", "train one patch autoencoder");
    tae->add_option("--config", config, "run configuration file");
    tae->add_option("--data", data, "dataset directory")->required();
    tae->add_option("--out", out, "artifact output directory")->required();
    tae->add_option("--which", which, "source or target")->required();

    auto* tfl = app.add_subcommand("train-flow", "train the latent velocity model");
    tfl->add_option("--config", config, "run configuration file");
    tfl->add_option("--data", data, "dataset directory")->required();
    tfl->add_option("--source-ae", src_ck, "frozen source autoencoder checkpoint")->required();
    tfl->add_option("--target-ae", tgt_ck, "frozen target autoencoder checkpoint")->required();
    tfl->add_option("--out", out, "artifact output directory")->required();

    auto* inf = app.add_subcommand("infer", "super-resolve tiles");
    inf->add_option("--config", config, "run configuration file");
    inf->add_option("--data", data, "dataset directory")->required();
    inf->add_option("--source-ae", src_ck, "frozen source autoencoder checkpoint");
    inf->add_option("--target-ae", tgt_ck, "frozen target autoencoder checkpoint");
    inf->add_option("--model", model_ck, "velocity model checkpoint");
    inf->add_option("--out", out, "prediction output directory")->required();
    inf->add_option("--fold", fold, "train, validation, or all (default validation)");
    inf->add_option("--ids", ids, "restrict to these tile ids")->delimiter(',');
    inf->add_flag("--baseline", baseline, "nearest-neighbor inverse-band-response baseline");
    inf->add_flag("--clamp-conditioning", clamp_cond, "hold conditioning channels exactly fixed");
    inf->add_option("--render", render, "write 16-bit PGM renders for the first N tiles");

    auto* evl = app.add_subcommand("evaluate", "score predictions against references");
    evl->add_option("--config", config, "run configuration file");
    evl->add_option("--data", data, "dataset directory with reference tiles")->required();
    evl->add_option("--pred", pred, "predictions directory (or a dataset directory)")->required();
    evl->add_option("--out", out, "report output directory")->required();
    evl->add_option("--fold", fold, "train, validation, or all (default validation)");
    evl->add_option("--render", render, "write 16-bit PGM renders for the first N tiles");

    auto* gch = app.add_subcommand("grad-check", "finite-difference gradient verification");
    gch->add_option("--out", out, "optional report directory");

    auto* sch = app.add_subcommand("solver-check", "integrator verification");
    sch->add_option("--out", out, "optional report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        RunConfig cfg = load_config(config);
        if (gen->parsed()) return cmd_gen_data(cfg, out);
        if (spl->parsed()) return cmd_split(cfg, data, cell);
        if (tae->parsed()) return cmd_train_ae(cfg, data, out, which);
        if (tfl->parsed()) return cmd_train_flow(cfg, data, src_ck, tgt_ck, out);
        if (inf->parsed())
            return cmd_infer(cfg, data, src_ck, tgt_ck, model_ck, out, fold, ids, baseline,
                             clamp_cond, render);
        if (evl->parsed()) return cmd_evaluate(cfg, data, pred, out, fold, render);
        if (gch->parsed()) return cmd_check("grad", out);
        if (sch->parsed()) return cmd_check("solver", out);
        return 2;
    } catch (const Error& e) {
        std::cerr << "vsr " << stage << ": error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "vsr " << stage << ": error: " << e.what() << "\n";
        return 2;
    }
}
