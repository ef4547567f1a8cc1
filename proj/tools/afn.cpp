// afn: train / evaluate / inspect volumetric segmentation models.
#include "afn/data_io.hpp"
#include "afn/gradcheck_suite.hpp"
#include "afn/kernels.hpp"
#include "afn/models.hpp"
#include "afn/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>

namespace {

using namespace afn;

// Published totals for the original-scale channel plan; our counts use the
// same structure but the exact channel plan of those totals is not public,
// so the residual is reported, never asserted.
const std::map<std::string, std::size_t> kReferenceTotals = {
    {"basic", 315725}, {"afn1", 349904}, {"afn6", 450209}};

int cmd_params(const std::string& arch_name, const std::string& profile,
               const std::string& mode) {
    ArchSpec arch = ArchSpec::make(arch_name, profile);
    Model m = build(arch, 0);
    CountMode cm = mode == "all" ? CountMode::All : CountMode::KernelsOnly;
    auto counts = param_count(m, cm);
    std::cout << "name,count\n";
    std::size_t total = 0;
    for (const auto& [name, n] : counts) {
        std::cout << name << "," << n << "\n";
        total += n;
    }
    std::cout << "total," << total << "\n";
    std::cerr << arch_name << " (" << profile << ", " << mode << "): " << total
              << " parameters\n";
    auto ref = kReferenceTotals.find(arch_name);
    if (profile == "full" && mode == "kernels" && ref != kReferenceTotals.end()) {
        double residual = (static_cast<double>(total) -
                           static_cast<double>(ref->second)) /
                          static_cast<double>(ref->second);
        std::cerr << "reference total " << ref->second << ", residual "
                  << std::fixed << std::setprecision(2) << 100 * residual
                  << "%\n";
    }
    return 0;
}

int cmd_rf(const std::string& arch_name, const std::string& profile) {
    ArchSpec arch = ArchSpec::make(arch_name, profile);
    std::cout << "layer,phi\n";
    for (const auto& st : receptive_field(arch)) {
        std::cout << st.layer << ",";
        for (size_t i = 0; i < st.phi.size(); ++i)
            std::cout << (i ? " " : "") << st.phi[i];
        std::cout << "\n";
    }
    return 0;
}

int cmd_train(const std::string& config_path) {
    TrainConfig cfg = TrainConfig::from_config(Config::parse_file(config_path));
    TrainResult r = train(cfg);
    std::cerr << "trained " << cfg.arch << " (" << cfg.profile << "): "
              << r.steps << " steps, " << r.epochs_run
              << " epochs, final epoch loss " << r.final_epoch_loss << "\n";
    std::cerr << "checkpoint: " << cfg.out_dir << "/ckpt_final.afnw\n";
    std::cout << "{\"steps\":" << r.steps << ",\"epochs\":" << r.epochs_run
              << ",\"final_epoch_loss\":" << r.final_epoch_loss << "}\n";
    return 0;
}

std::vector<VolumeRecord> load_volumes(const std::string& manifest_path,
                                       bool do_normalize, bool masked) {
    std::vector<VolumeRecord> volumes;
    for (const auto& path : read_manifest(manifest_path)) {
        VolumeRecord v = read_volume(path);
        if (do_normalize)
            normalize(v, masked);
        volumes.push_back(std::move(v));
    }
    if (volumes.empty())
        throw IoError("manifest " + manifest_path + " lists no volumes");
    return volumes;
}

Model load_model(const std::string& weights, const std::string& arch_name,
                 const std::string& profile, int in_channels, int classes) {
    ArchSpec arch = ArchSpec::make(arch_name, profile, in_channels, classes);
    return load_weights(arch, weights);
}

int cmd_eval(const std::string& weights, const std::string& manifest,
             const std::string& arch_name, const std::string& profile,
             int in_channels, int classes, int window, int overlap,
             bool no_normalize, bool masked, bool refresh_bn) {
    auto volumes = load_volumes(manifest, !no_normalize, masked);
    if (in_channels == 0)
        in_channels = volumes[0].image.extent(0);
    if (classes == 0)
        for (const auto& v : volumes)
            classes = std::max(classes, v.labels.num_classes);
    Model m = load_model(weights, arch_name, profile, in_channels, classes);
    if (refresh_bn)
        refresh_batchnorm_stats(m, volumes);
    MetricsReport rep = evaluate(m, volumes, window, overlap);
    std::cout << rep.to_csv();
    std::cerr << "mean dice over " << volumes.size() << " volumes: "
              << rep.mean_dice() << "\n";
    return 0;
}

int cmd_gen_phantoms(const std::string& spec_path, int n,
                     const std::string& out_dir) {
    PhantomSpec spec;
    if (spec_path.empty()) {
        spec = PhantomSpec::default_spec(64, 0);
    } else {
        Config c = Config::parse_file(spec_path);
        spec = PhantomSpec::default_spec(
            static_cast<int>(c.get_int("phantom.grid", 64)),
            static_cast<std::uint64_t>(c.get_int("phantom.seed", 0)));
        spec.background_sigma =
            c.get_double("phantom.background_sigma", spec.background_sigma);
        spec.scale_probe_class = static_cast<int>(
            c.get_int("phantom.scale_probe_class", spec.scale_probe_class));
        int nc = static_cast<int>(c.get_int(
            "phantom.num_classes", static_cast<long>(spec.classes.size())));
        spec.classes.resize(static_cast<size_t>(nc));
        for (int i = 0; i < nc; ++i) {
            std::string p = "class" + std::to_string(i + 1) + ".";
            PhantomClassSpec& cs = spec.classes[static_cast<size_t>(i)];
            cs.radius_min = c.get_double(p + "radius_min", cs.radius_min);
            cs.radius_max = c.get_double(p + "radius_max", cs.radius_max);
            cs.intensity_mean =
                c.get_double(p + "intensity_mean", cs.intensity_mean);
            cs.intensity_sigma =
                c.get_double(p + "intensity_sigma", cs.intensity_sigma);
            cs.texture_freq = c.get_double(p + "texture_freq", cs.texture_freq);
            cs.texture_amp = c.get_double(p + "texture_amp", cs.texture_amp);
            cs.instances =
                static_cast<int>(c.get_int(p + "instances", cs.instances));
        }
    }
    std::filesystem::create_directories(out_dir);
    for (int i = 0; i < n; ++i) {
        PhantomSpec s = spec;
        s.seed = spec.seed + static_cast<std::uint64_t>(i);
        VolumeRecord v = generate_phantom(s);
        char name[32];
        std::snprintf(name, sizeof name, "phantom_%03d.afnv", i);
        std::string path = out_dir + "/" + name;
        write_volume(v, path);
        std::cout << path << "\n";
    }
    std::cerr << "wrote " << n << " phantoms (grid " << spec.grid << ", "
              << spec.num_classes() << " classes) to " << out_dir << "\n";
    return 0;
}

int cmd_export_attention(const std::string& weights, const std::string& volume,
                         int layer, const std::string& out_dir,
                         const std::string& arch_name,
                         const std::string& profile, int classes,
                         bool no_normalize, bool masked) {
    VolumeRecord v = read_volume(volume);
    if (!no_normalize)
        normalize(v, masked);
    if (classes == 0)
        classes = v.labels.num_classes;
    Model m =
        load_model(weights, arch_name, profile, v.image.extent(0), classes);
    for (const auto& path : export_attention(m, v, layer, out_dir))
        std::cout << path << "\n";
    return 0;
}

int cmd_gradcheck(int seeds, double tol) {
    auto results = run_gradcheck_suite(seeds, tol, &std::cout);
    bool ok = true;
    for (const auto& r : results)
        ok = ok && r.pass;
    std::cerr << (ok ? "gradcheck: all cases passed" : "gradcheck: FAILURES")
              << " (tol " << tol << ", " << seeds << " seeds per case)\n";
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric segmentation toolkit (backend: " +
                 std::string(afn::kernels::active().name) + ")"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train_cmd = app.add_subcommand("train", "train a model from a config");
    train_cmd->add_option("-c,--config", config_path, "config file")->required();

    std::string weights, manifest, arch_name = "basic", profile = "full";
    int in_channels = 0, classes = 0, window = 0, overlap = 8;
    bool no_normalize = false, masked = false;
    auto* eval_cmd = app.add_subcommand("eval", "per-class dice over a manifest");
    eval_cmd->add_option("-w,--weights", weights, "weight file")->required();
    eval_cmd->add_option("-m,--manifest", manifest, "volume manifest")->required();
    eval_cmd->add_option("-a,--arch", arch_name, "architecture name");
    eval_cmd->add_option("--profile", profile, "channel profile (full|desk)");
    eval_cmd->add_option("--input-channels", in_channels,
                         "0 = infer from the data");
    eval_cmd->add_option("--classes", classes, "0 = infer from the data");
    eval_cmd->add_option("--window", window, "inference window (0 = from profile)");
    eval_cmd->add_option("--overlap", overlap, "window overlap");
    eval_cmd->add_flag("--no-normalize", no_normalize, "skip normalization");
    eval_cmd->add_flag("--masked", masked, "normalize over nonzero voxels only");
    bool refresh_bn = false;
    eval_cmd->add_flag("--refresh-bn", refresh_bn,
                       "re-estimate batchnorm statistics on the manifest "
                       "volumes before evaluating");

    std::string mode = "kernels";
    auto* params_cmd = app.add_subcommand("params", "parameter counts");
    params_cmd->add_option("-a,--arch", arch_name, "architecture name")->required();
    params_cmd->add_option("--mode", mode, "kernels | all")
        ->check(CLI::IsMember({"kernels", "all"}));
    params_cmd->add_option("--profile", profile, "channel profile");

    auto* rf_cmd = app.add_subcommand("rf", "receptive field per layer");
    rf_cmd->add_option("-a,--arch", arch_name, "architecture name")->required();
    rf_cmd->add_option("--profile", profile, "channel profile");

    std::string spec_path, out_dir = ".";
    int n = 1;
    auto* gen_cmd = app.add_subcommand("gen-phantoms", "synthetic volumes");
    gen_cmd->add_option("-c,--config", spec_path, "phantom spec (optional)");
    gen_cmd->add_option("-n,--count", n, "number of volumes")->required();
    gen_cmd->add_option("-o,--out", out_dir, "output directory")->required();

    std::string volume;
    int layer = 0;
    auto* exp_cmd =
        app.add_subcommand("export-attention", "attention maps as volumes");
    exp_cmd->add_option("-w,--weights", weights, "weight file")->required();
    exp_cmd->add_option("-i,--input", volume, "input volume")->required();
    exp_cmd->add_option("-l,--layer", layer, "hidden layer index (1-based)")
        ->required();
    exp_cmd->add_option("-o,--out", out_dir, "output directory")->required();
    exp_cmd->add_option("-a,--arch", arch_name, "architecture name");
    exp_cmd->add_option("--profile", profile, "channel profile");
    exp_cmd->add_option("--classes", classes, "0 = infer from the volume");
    exp_cmd->add_flag("--no-normalize", no_normalize, "skip normalization");
    exp_cmd->add_flag("--masked", masked, "normalize over nonzero voxels only");

    int seeds = 20;
    double tol = 1e-4;
    auto* gc_cmd =
        app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc_cmd->add_option("--seeds", seeds, "random draws per case");
    gc_cmd->add_option("--tol", tol, "relative-error tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*train_cmd)
            return cmd_train(config_path);
        if (*eval_cmd) {
            if (window == 0)
                window = profile == "desk" ? 32 : 75;
            return cmd_eval(weights, manifest, arch_name, profile, in_channels,
                            classes, window, overlap, no_normalize, masked,
                            refresh_bn);
        }
        if (*params_cmd)
            return cmd_params(arch_name, profile, mode);
        if (*rf_cmd)
            return cmd_rf(arch_name, profile);
        if (*gen_cmd)
            return cmd_gen_phantoms(spec_path, n, out_dir);
        if (*exp_cmd)
            return cmd_export_attention(weights, volume, layer, out_dir,
                                        arch_name, profile, classes,
                                        no_normalize, masked);
        if (*gc_cmd)
            return cmd_gradcheck(seeds, tol);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
