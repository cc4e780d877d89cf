// fairdiff command-line pipeline: toy data generation, mask<->point-cloud
// conversion, per-group diffusion training, controlled synthesis, equal-scale
// combination, segmenter training, equity evaluation, and the end-to-end
// fairness experiment.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "fairdiff/experiment.hpp"

namespace fs = std::filesystem;
using namespace fairdiff;

namespace {

/// Flat key=value configuration file; '#' starts a comment line.
struct Config {
    std::map<std::string, std::string> kv;

    static Config load(const std::string& path) {
        Config cfg;
        if (path.empty()) return cfg;
        std::ifstream is(path);
        if (!is) throw std::invalid_argument("config: cannot open " + path);
        std::string line;
        size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: line " + std::to_string(line_no) + " is not key=value");
            cfg.kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
        return cfg;
    }

    std::string str(const std::string& key, const std::string& dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : it->second;
    }
    double real(const std::string& key, double dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : std::stod(it->second);
    }
    int integer(const std::string& key, int dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : std::stoi(it->second);
    }
    bool boolean(const std::string& key, bool dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        return it->second == "1" || it->second == "true" || it->second == "yes";
    }
};

struct GlobalArgs {
    uint64_t seed = 42;
    std::string config_path;
    std::string out;
    int threads = 0;  // 0 = hardware default

    int effective_threads() const { return threads > 0 ? threads : default_threads(); }
};

CodecConfig codec_from(const Config& cfg) {
    CodecConfig c;
    c.n_points = cfg.integer("codec.points", 512);
    c.z0 = cfg.real("codec.z0", 0.3);
    return c;
}

DiffusionConfig diffusion_from(const Config& cfg, int threads) {
    DiffusionConfig d;
    d.T = cfg.integer("diffusion.T", 100);
    d.beta_start = cfg.real("diffusion.beta_start", 1e-4);
    d.beta_end = cfg.real("diffusion.beta_end", 0.02);
    d.hidden = cfg.integer("diffusion.hidden", 128);
    d.time_dim = cfg.integer("diffusion.time_dim", 32);
    d.latent_dim = cfg.integer("diffusion.latent_dim", 8);
    d.train_steps = cfg.integer("diffusion.steps", 2000);
    d.batch = cfg.integer("diffusion.batch", 4);
    d.lr = cfg.real("diffusion.lr", 1e-3);
    d.use_encoder = cfg.boolean("diffusion.use_encoder", false);
    d.min_group_size = cfg.integer("diffusion.min_group_size", 5);
    d.threads = threads;
    return d;
}

ControlTrainConfig control_from(const Config& cfg, int threads) {
    ControlTrainConfig c;
    c.steps = cfg.integer("control.steps", 600);
    c.batch = cfg.integer("control.batch", 4);
    c.lr = cfg.real("control.lr", 1e-3);
    c.base_channels = cfg.integer("control.base_channels", 8);
    c.base_steps = cfg.integer("control.base_steps", 200);
    c.base_lr = cfg.real("control.base_lr", 2e-3);
    c.threads = threads;
    return c;
}

SegmenterConfig segmenter_from(const Config& cfg, int threads) {
    SegmenterConfig s;
    s.channels = cfg.integer("seg.channels", 12);
    s.epochs = cfg.integer("seg.epochs", 8);
    s.batch = cfg.integer("seg.batch", 8);
    s.lr = cfg.real("seg.lr", 1e-3);
    s.threads = threads;
    return s;
}

ToyDatasetSpec dataset_from(const Config& cfg) {
    ToyDatasetSpec spec = default_experiment_config().dataset;
    spec.width = cfg.integer("dataset.width", spec.width);
    spec.height = cfg.integer("dataset.height", spec.height);
    spec.attribute = cfg.str("dataset.attribute", spec.attribute);
    spec.render.noise_sd = cfg.real("dataset.noise_sd", spec.render.noise_sd);
    // group.<name>.train=<n> etc. replace the default group list when present
    std::map<std::string, ToyGroupSpec> groups;
    for (const auto& [key, value] : cfg.kv) {
        if (key.rfind("group.", 0) != 0) continue;
        const auto rest = key.substr(6);
        const auto dot = rest.find('.');
        if (dot == std::string::npos) throw std::invalid_argument("config: bad group key '" + key + "'");
        const std::string name = rest.substr(0, dot);
        const std::string field = rest.substr(dot + 1);
        auto& g = groups.try_emplace(name, ToyGroupSpec{name, 0, 0, {}}).first->second;
        if (field == "train")
            g.n_train = std::stoi(value);
        else if (field == "test")
            g.n_test = std::stoi(value);
        else if (field == "ratio_mean")
            g.family.ratio_mean = std::stod(value);
        else if (field == "ratio_sd")
            g.family.ratio_sd = std::stod(value);
        else if (field == "disc_r_mean")
            g.family.disc_r_mean = std::stod(value);
        else if (field == "disc_r_sd")
            g.family.disc_r_sd = std::stod(value);
        else
            throw std::invalid_argument("config: unknown group field '" + field + "'");
    }
    if (!groups.empty()) {
        spec.groups.clear();
        for (auto& [name, g] : groups) spec.groups.push_back(std::move(g));
    }
    return spec;
}

void write_loss_csv(const std::string& path, const LossCurve& curve) {
    std::ofstream os(path, std::ios::trunc);
    os << "step,loss\n";
    char buf[64];
    for (const auto& [step, loss] : curve.points) {
        std::snprintf(buf, sizeof buf, "%d,%.9g\n", step, loss);
        os << buf;
    }
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) throw std::invalid_argument("no such directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ext) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

int cmd_make_toy_data(const GlobalArgs& g, const Config& cfg) {
    if (g.out.empty()) throw std::invalid_argument("make-toy-data: --out is required");
    const ToyDatasetSpec spec = dataset_from(cfg);
    const auto rows = make_toy_dataset(spec, g.seed, g.out);
    std::map<std::string, size_t> per_group;
    for (const auto& r : rows) per_group[r.attrs.at(spec.attribute)] += 1;
    std::cout << "wrote " << rows.size() << " samples to " << g.out << "\n";
    for (const auto& [grp, n] : per_group) std::cout << "  " << spec.attribute << "=" << grp << ": " << n << "\n";
    std::cout << "manifest: " << (fs::path(g.out) / "manifests" / "toy.csv").string() << "\n";
    return 0;
}

int cmd_encode(const GlobalArgs& g, const Config& cfg, const std::string& mask_dir) {
    if (g.out.empty()) throw std::invalid_argument("encode: --out is required");
    const CodecConfig codec = codec_from(cfg);
    fs::create_directories(g.out);
    size_t ok = 0;
    std::vector<std::string> failures;
    for (const auto& path : sorted_files(mask_dir, ".png")) {
        try {
            const auto cloud = encode_mask(load_mask_png(path), codec);
            save_fpc((fs::path(g.out) / fs::path(path).filename().replace_extension(".fpc")).string(), cloud);
            ++ok;
        } catch (const std::exception& e) {
            failures.push_back(path + ": " + e.what());
        }
    }
    std::cout << ok << " ok, " << failures.size() << " failed\n";
    for (const auto& f : failures) std::cerr << "  " << f << "\n";
    return failures.empty() ? 0 : 2;
}

int cmd_decode(const GlobalArgs& g, const std::string& cloud_dir, int width, int height) {
    if (g.out.empty()) throw std::invalid_argument("decode: --out is required");
    fs::create_directories(g.out);
    size_t ok = 0;
    std::vector<std::string> failures;
    for (const auto& path : sorted_files(cloud_dir, ".fpc")) {
        try {
            const MaskImage mask = decode_point_cloud(load_fpc(path), width, height);
            save_mask_png((fs::path(g.out) / fs::path(path).filename().replace_extension(".png")).string(), mask);
            ++ok;
        } catch (const std::exception& e) {
            failures.push_back(path + ": " + e.what());
        }
    }
    std::cout << ok << " ok, " << failures.size() << " failed\n";
    for (const auto& f : failures) std::cerr << "  " << f << "\n";
    return failures.empty() ? 0 : 2;
}

int cmd_train_diffusion(const GlobalArgs& g, const Config& cfg, const std::string& manifest,
                        const std::string& attribute) {
    if (g.out.empty()) throw std::invalid_argument("train-diffusion: --out is required");
    const auto rows = filter_rows(load_manifest(manifest), "train");
    std::vector<ManifestRowView> views;
    for (const auto& r : rows) {
        auto it = r.attrs.find(attribute);
        if (it == r.attrs.end())
            throw std::invalid_argument("train-diffusion: attribute '" + attribute + "' missing on row '" + r.id + "'");
        views.push_back({r.mask_abs.string(), it->second});
    }
    std::map<std::string, LossCurve> curves;
    std::vector<std::string> warnings;
    const GroupModelRegistry reg = train_group_models(views, attribute, codec_from(cfg),
                                                      diffusion_from(cfg, g.effective_threads()), g.seed, &curves,
                                                      &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    reg.save(g.out);
    for (const auto& [group, curve] : curves)
        write_loss_csv((fs::path(g.out) / (attribute + "__" + group + "_loss.csv")).string(), curve);
    std::cout << "trained " << reg.models.size() << " group models into " << g.out << "\n";
    return 0;
}

int cmd_sample_masks(const GlobalArgs& g, const Config& cfg, const std::string& model_dir,
                     const std::string& attribute, const std::string& group, int count, int width, int height) {
    if (g.out.empty()) throw std::invalid_argument("sample-masks: --out is required");
    const CodecConfig codec = codec_from(cfg);
    const GroupModelRegistry reg = GroupModelRegistry::load(model_dir, attribute);
    fs::create_directories(fs::path(g.out) / "masks");
    fs::create_directories(fs::path(g.out) / "pointclouds");
    const NormRecord norm{width / 2.0, height / 2.0, cfg.real("synth.scale", 0.29) * std::min(width, height)};
    for (int i = 0; i < count; ++i) {
        Rng rng(splitmix64(g.seed ^ hash_str("sample/" + group + "/" + std::to_string(i))));
        BoundaryPointCloud cloud = reg.sample_for_group(group, rng, codec.n_points, codec.z0);
        cloud.norm = norm;
        const MaskImage mask = decode_point_cloud(cloud, width, height);
        const std::string id = attribute + "_" + group + "_" + std::to_string(i);
        save_mask_png((fs::path(g.out) / "masks" / (id + ".png")).string(), mask);
        save_fpc((fs::path(g.out) / "pointclouds" / (id + ".fpc")).string(), cloud);
    }
    std::cout << "sampled " << count << " masks for " << attribute << "=" << group << " into " << g.out << "\n";
    return 0;
}

int cmd_train_control(const GlobalArgs& g, const Config& cfg, const std::string& manifest) {
    if (g.out.empty()) throw std::invalid_argument("train-control: --out is required (checkpoint path)");
    const auto rows = filter_rows(load_manifest(manifest), "train");
    if (rows.empty()) throw std::invalid_argument("train-control: no train rows");
    std::vector<ToyImage> images;
    std::vector<ControlPair> pairs;
    int width = 0, height = 0;
    for (const auto& r : rows) {
        ControlPair p{load_mask_png(r.mask_abs.string()), load_toy_png(r.image_abs.string())};
        width = p.mask.width;
        height = p.mask.height;
        images.push_back(p.image);
        pairs.push_back(std::move(p));
    }
    const ControlTrainConfig ccfg = control_from(cfg, g.effective_threads());
    Rng rng(splitmix64(g.seed ^ hash_str("control")));
    BaseNet base = train_base_autoencoder(images, ccfg, rng.derive("base"));
    Rng block_rng = rng.derive("block");
    ControlBlock block(base, width, height, block_rng);
    const LossCurve curve = train_control(pairs, block, ccfg, rng.derive("train"));
    fs::create_directories(fs::path(g.out).parent_path().empty() ? "." : fs::path(g.out).parent_path().string());
    save_control_block(g.out, block);
    write_loss_csv(g.out + ".loss.csv", curve);
    std::cout << "control block trained on " << pairs.size() << " pairs -> " << g.out << "\n";
    return 0;
}

int cmd_combine(const GlobalArgs& g, const Config& cfg, const std::string& manifest, const std::string& attribute,
                const std::string& target, const std::string& model_dir, const std::string& control_path) {
    if (g.out.empty()) throw std::invalid_argument("combine: --out is required");
    const auto all_rows = load_manifest(manifest);
    const auto train = filter_rows(all_rows, "train");
    size_t n_target = kAutoTarget;
    if (target != "AUTO") {
        const long v = std::stol(target);
        if (v <= 0) throw std::invalid_argument("combine: --target must be AUTO or a positive integer");
        n_target = size_t(v);
    }
    const CombinePlan plan = plan_equal_scale(train, attribute, n_target, g.seed);
    const GroupModelRegistry reg = GroupModelRegistry::load(model_dir, attribute);
    ControlBlock block = load_control_block(control_path);
    const CodecConfig codec = codec_from(cfg);
    const int width = cfg.integer("dataset.width", block.width);
    const int height = cfg.integer("dataset.height", block.height);
    fs::create_directories(g.out);
    const ExecuteResult result = execute_plan(plan, train, reg, codec, block, g.out, width, height);

    std::cout << "equal-scale combination on '" << attribute << "' (target " << plan.n_target << ")\n";
    std::map<std::string, size_t> after;
    for (const auto& r : result.rows) after[r.attrs.at(attribute)] += 1;
    for (const auto& a : plan.actions) {
        const char* what = a.kind == GroupAction::Kind::KeepAll      ? "keep-all"
                           : a.kind == GroupAction::Kind::Subsample  ? "subsample"
                                                                     : "synthesize";
        std::cout << "  " << a.group << ": " << a.n_real << " -> " << after[a.group] << " (" << what << " " << a.count
                  << ")\n";
    }
    // test rows pass through so downstream evaluation sees the same split
    std::vector<ManifestRow> combined = result.rows;
    for (const auto& r : all_rows)
        if (r.split == "test") combined.push_back(r);
    for (auto& r : combined) {
        r.image = fs::relative(r.image_abs, fs::path(g.out)).string();
        r.mask = fs::relative(r.mask_abs, fs::path(g.out)).string();
    }
    const std::string out_manifest = (fs::path(g.out) / ("combined_" + attribute + ".csv")).string();
    save_manifest(out_manifest, combined);
    std::cout << "combined manifest: " << out_manifest << "\n";
    return 0;
}

int cmd_train_seg(const GlobalArgs& g, const Config& cfg, const std::string& manifest) {
    if (g.out.empty()) throw std::invalid_argument("train-seg: --out is required (checkpoint path)");
    const auto rows = filter_rows(load_manifest(manifest), "train");
    LossCurve curve;
    ToySegmenter seg = train_segmenter(rows, segmenter_from(cfg, g.effective_threads()), g.seed, &curve);
    save_segmenter(g.out, seg);
    write_loss_csv(g.out + ".loss.csv", curve);
    std::cout << "segmenter trained on " << rows.size() << " rows -> " << g.out << "\n";
    return 0;
}

int cmd_evaluate(const GlobalArgs& g, const std::string& manifest, const std::string& seg_path,
                 const std::string& attributes_csv) {
    if (g.out.empty()) throw std::invalid_argument("evaluate: --out is required");
    const auto rows = filter_rows(load_manifest(manifest), "test");
    ToySegmenter seg = load_segmenter(seg_path);
    std::vector<std::string> attributes;
    std::stringstream ss(attributes_csv);
    std::string a;
    while (std::getline(ss, a, ','))
        if (!a.empty()) attributes.push_back(a);
    if (attributes.empty()) throw std::invalid_argument("evaluate: --attributes must name at least one attribute");
    const EvalReport report = evaluate_segmenter(seg, rows, attributes);
    write_eval_outputs(g.out, "eval", report);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& [attr, ar] : report.attributes) {
        std::cout << attr << ": overall dice " << ar.dice_stats.overall << ", ES-dice " << ar.es_dice << ", fairness "
                  << ar.fairness_value << "\n";
        for (const auto& [grp, mean] : ar.dice_stats.group_mean)
            std::cout << "  " << grp << " (n=" << ar.dice_stats.group_n.at(grp) << "): mean dice " << mean << "\n";
    }
    std::cout << "reports written to " << g.out << "\n";
    return 0;
}

int cmd_fairness_experiment(const GlobalArgs& g, const Config& cfg) {
    if (g.out.empty()) throw std::invalid_argument("fairness-experiment: --out is required");
    ExperimentConfig ecfg = default_experiment_config();
    ecfg.seed = g.seed;
    ecfg.threads = g.effective_threads();
    ecfg.n_seeds = cfg.integer("experiment.n_seeds", ecfg.n_seeds);
    ecfg.attribute = cfg.str("dataset.attribute", ecfg.attribute);
    ecfg.dataset = dataset_from(cfg);
    ecfg.codec = codec_from(cfg);
    ecfg.codec.n_points = cfg.integer("codec.points", 256);  // experiment default
    ecfg.diffusion = diffusion_from(cfg, ecfg.threads);
    ecfg.diffusion.train_steps = cfg.integer("diffusion.steps", 1000);
    ecfg.control = control_from(cfg, ecfg.threads);
    ecfg.control.steps = cfg.integer("control.steps", 400);
    ecfg.control.base_steps = cfg.integer("control.base_steps", 150);
    ecfg.segmenter = segmenter_from(cfg, ecfg.threads);
    ecfg.segmenter.epochs = cfg.integer("seg.epochs", 6);
    const std::string target = cfg.str("experiment.n_target", "AUTO");
    ecfg.n_target = target == "AUTO" ? kAutoTarget : size_t(std::stol(target));

    const ExperimentResult result = run_fairness_experiment(ecfg, g.out, &std::cout);
    std::cout << "variance reduced in " << result.variance_reduced << "/" << result.seeds.size() << " seeds\n";
    std::cout << "fairness improved in " << result.fairness_improved << "/" << result.seeds.size() << " seeds\n";
    std::cout << "summary: " << (fs::path(g.out) / "summary.txt").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairdiff: point-cloud diffusion mask synthesis, controlled toy image synthesis, "
                 "equal-scale data combination, and segmentation equity evaluation"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--seed", g.seed, "global random seed")->capture_default_str();
    app.add_option("--config", g.config_path, "flat key=value config file");
    app.add_option("--out", g.out, "output directory or file");
    app.add_option("--threads", g.threads, "worker threads (0 = hardware)")->capture_default_str();

    auto* make_toy = app.add_subcommand("make-toy-data", "generate a toy ellipse-pair dataset");
    auto* encode = app.add_subcommand("encode", "masks -> boundary point clouds");
    std::string mask_dir;
    encode->add_option("--masks", mask_dir, "directory of mask PNGs")->required();
    auto* decode = app.add_subcommand("decode", "point clouds -> masks");
    std::string cloud_dir;
    int dec_w = 64, dec_h = 64;
    decode->add_option("--clouds", cloud_dir, "directory of .fpc files")->required();
    decode->add_option("--width", dec_w, "output mask width")->capture_default_str();
    decode->add_option("--height", dec_h, "output mask height")->capture_default_str();

    auto* train_diff = app.add_subcommand("train-diffusion", "train per-group point diffusion models");
    std::string manifest, attribute = "group";
    train_diff->add_option("--manifest", manifest, "dataset manifest CSV")->required();
    train_diff->add_option("--attribute", attribute, "sensitive attribute")->capture_default_str();

    auto* sample_cmd = app.add_subcommand("sample-masks", "sample masks from a trained group model");
    std::string model_dir, sample_group;
    int sample_count = 10, sample_w = 64, sample_h = 64;
    sample_cmd->add_option("--models", model_dir, "model registry directory")->required();
    sample_cmd->add_option("--attribute", attribute, "sensitive attribute")->capture_default_str();
    sample_cmd->add_option("--group", sample_group, "group to sample")->required();
    sample_cmd->add_option("--count", sample_count, "samples to draw")->capture_default_str();
    sample_cmd->add_option("--width", sample_w, "decoded mask width")->capture_default_str();
    sample_cmd->add_option("--height", sample_h, "decoded mask height")->capture_default_str();

    auto* train_ctrl = app.add_subcommand("train-control", "train the zero-convolution control branch");
    train_ctrl->add_option("--manifest", manifest, "dataset manifest CSV")->required();

    auto* combine = app.add_subcommand("combine", "equal-scale data combination");
    std::string target = "AUTO", control_path;
    combine->add_option("--manifest", manifest, "dataset manifest CSV")->required();
    combine->add_option("--attribute", attribute, "sensitive attribute")->capture_default_str();
    combine->add_option("--target", target, "target group size or AUTO")->capture_default_str();
    combine->add_option("--models", model_dir, "model registry directory")->required();
    combine->add_option("--control", control_path, "control block checkpoint")->required();

    auto* train_seg = app.add_subcommand("train-seg", "train the toy segmenter");
    train_seg->add_option("--manifest", manifest, "dataset manifest CSV")->required();

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a segmenter with equity metrics");
    std::string seg_path, attributes_csv = "group";
    evaluate->add_option("--manifest", manifest, "dataset manifest CSV")->required();
    evaluate->add_option("--seg", seg_path, "segmenter checkpoint")->required();
    evaluate->add_option("--attributes", attributes_csv, "comma-separated attributes")->capture_default_str();

    auto* fairness_cmd = app.add_subcommand("fairness-experiment", "real-only vs equal-scale comparison");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const Config cfg = Config::load(g.config_path);
        if (make_toy->parsed()) return cmd_make_toy_data(g, cfg);
        if (encode->parsed()) return cmd_encode(g, cfg, mask_dir);
        if (decode->parsed()) return cmd_decode(g, cloud_dir, dec_w, dec_h);
        if (train_diff->parsed()) return cmd_train_diffusion(g, cfg, manifest, attribute);
        if (sample_cmd->parsed()) return cmd_sample_masks(g, cfg, model_dir, attribute, sample_group, sample_count, sample_w, sample_h);
        if (train_ctrl->parsed()) return cmd_train_control(g, cfg, manifest);
        if (combine->parsed()) return cmd_combine(g, cfg, manifest, attribute, target, model_dir, control_path);
        if (train_seg->parsed()) return cmd_train_seg(g, cfg, manifest);
        if (evaluate->parsed()) return cmd_evaluate(g, manifest, seg_path, attributes_csv);
        if (fairness_cmd->parsed()) return cmd_fairness_experiment(g, cfg);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
