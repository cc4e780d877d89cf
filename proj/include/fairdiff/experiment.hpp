#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fairdiff/control.hpp"
#include "fairdiff/data.hpp"
#include "fairdiff/diffusion.hpp"
#include "fairdiff/metrics.hpp"
#include "fairdiff/plot.hpp"
#include "fairdiff/segmenter.hpp"

namespace fairdiff {

struct SampleScore {
    std::string id;
    std::map<std::string, std::string> attrs;
    double dice_cup = 0.0, dice_rim = 0.0;
    double iou_cup = 0.0, iou_rim = 0.0;
    double mean_dice = 0.0, mean_iou = 0.0;  // class-mean (cup, rim)
};

/// One attribute's equity report. The equity metric is the class-mean Dice
/// (and IoU) per sample, aggregated per group.
struct AttributeReport {
    std::string attribute;
    GroupStats dice_stats;  // over mean_dice
    GroupStats iou_stats;   // over mean_iou
    std::map<std::string, SampleScore> group_class_means;  // per-group per-class means
    double es_dice = 0.0, es_iou = 0.0;
    double fairness_value = 0.0;  // single-attribute: negated group variance
    size_t excluded = 0;          // rows without a usable group for this attribute
};

struct EvalReport {
    std::vector<SampleScore> samples;
    std::map<std::string, AttributeReport> attributes;
    std::vector<std::string> warnings;
};

inline SampleScore score_sample(const MaskImage& pred, const MaskImage& gt, const std::string& id) {
    SampleScore s;
    s.id = id;
    s.dice_cup = dice(pred, gt, CUP);
    s.dice_rim = dice(pred, gt, DISC);  // rim = disc-region pixels outside the cup
    s.iou_cup = iou(pred, gt, CUP);
    s.iou_rim = iou(pred, gt, DISC);
    s.mean_dice = (s.dice_cup + s.dice_rim) / 2.0;
    s.mean_iou = (s.iou_cup + s.iou_rim) / 2.0;
    return s;
}

/// Score a segmenter over real test rows and aggregate per attribute.
/// Synthetic rows are always excluded from evaluation; per-attribute rows
/// whose group is missing or "synthetic-unspecified" are excluded and
/// itemized in the report.
inline EvalReport evaluate_segmenter(ToySegmenter& seg, const std::vector<ManifestRow>& test_rows,
                                     const std::vector<std::string>& attributes) {
    EvalReport report;
    size_t skipped_synthetic = 0;
    for (const auto& r : test_rows) {
        if (r.provenance != "real") {
            ++skipped_synthetic;
            continue;
        }
        const ToyImage img = load_toy_png(r.image_abs.string());
        const MaskImage gt = load_mask_png(r.mask_abs.string());
        const MaskImage pred = seg.predict(img);
        SampleScore s = score_sample(pred, gt, r.id);
        s.attrs = r.attrs;
        report.samples.push_back(std::move(s));
    }
    if (skipped_synthetic > 0)
        report.warnings.push_back(std::to_string(skipped_synthetic) + " synthetic rows excluded from evaluation");
    if (report.samples.empty()) throw std::runtime_error("evaluate: no real test samples");

    for (const auto& attr : attributes) {
        AttributeReport ar;
        ar.attribute = attr;
        std::vector<std::pair<double, std::string>> dice_scored, iou_scored;
        std::map<std::string, SampleScore> sums;
        std::map<std::string, size_t> counts;
        for (const auto& s : report.samples) {
            auto it = s.attrs.find(attr);
            if (it == s.attrs.end() || it->second == kUnspecifiedGroup) {
                ++ar.excluded;
                continue;
            }
            dice_scored.push_back({s.mean_dice, it->second});
            iou_scored.push_back({s.mean_iou, it->second});
            SampleScore& acc = sums[it->second];
            acc.dice_cup += s.dice_cup;
            acc.dice_rim += s.dice_rim;
            acc.iou_cup += s.iou_cup;
            acc.iou_rim += s.iou_rim;
            counts[it->second] += 1;
        }
        if (dice_scored.empty()) {
            report.warnings.push_back("attribute '" + attr + "': no usable test rows; report skipped");
            continue;
        }
        ar.dice_stats = group_stats(dice_scored);
        ar.iou_stats = group_stats(iou_scored);
        for (auto& [g, acc] : sums) {
            const double n = double(counts[g]);
            acc.dice_cup /= n;
            acc.dice_rim /= n;
            acc.iou_cup /= n;
            acc.iou_rim /= n;
            ar.group_class_means[g] = acc;
        }
        ar.es_dice = essp(ar.dice_stats.overall, ar.dice_stats.stdev);
        ar.es_iou = essp(ar.iou_stats.overall, ar.iou_stats.stdev);
        ar.fairness_value = fairness({ar.dice_stats.variance});
        if (ar.excluded > 0)
            report.warnings.push_back("attribute '" + attr + "': " + std::to_string(ar.excluded) + " rows excluded");
        report.attributes.emplace(attr, std::move(ar));
    }
    return report;
}

inline void write_per_sample_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("evaluate: cannot write " + path);
    std::set<std::string> attr_names;
    for (const auto& s : report.samples)
        for (const auto& [k, v] : s.attrs) attr_names.insert(k);
    os << "id,dice_cup,dice_rim,iou_cup,iou_rim,mean_dice,mean_iou";
    for (const auto& a : attr_names) os << ",attr:" << a;
    os << "\n";
    char buf[256];
    for (const auto& s : report.samples) {
        std::snprintf(buf, sizeof buf, "%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g", s.id.c_str(), s.dice_cup, s.dice_rim,
                      s.iou_cup, s.iou_rim, s.mean_dice, s.mean_iou);
        os << buf;
        for (const auto& a : attr_names) {
            auto it = s.attrs.find(a);
            os << ',' << (it == s.attrs.end() ? "" : it->second);
        }
        os << "\n";
    }
}

/// Table layout: one row per group plus an ALL row carrying the overall
/// means, ES metrics, and the attribute's fairness value. The ESSP bound
/// es <= overall is machine-checked on emission.
inline void write_group_report_csv(const std::string& path, const AttributeReport& ar) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("evaluate: cannot write " + path);
    os << "attribute,group,n,dice_cup,dice_rim,iou_cup,iou_rim,es_dice,es_iou,fairness\n";
    char buf[320];
    for (const auto& [g, m] : ar.group_class_means) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f,%.6f,,,\n", ar.attribute.c_str(), g.c_str(),
                      ar.dice_stats.group_n.at(g), m.dice_cup, m.dice_rim, m.iou_cup, m.iou_rim);
        os << buf;
    }
    if (ar.es_dice > ar.dice_stats.overall + 1e-12 || ar.es_iou > ar.iou_stats.overall + 1e-12)
        throw std::logic_error("group report: ESSP exceeded the overall metric (equity bound violated)");
    double dice_cup_all = 0.0, dice_rim_all = 0.0, iou_cup_all = 0.0, iou_rim_all = 0.0;
    size_t n_all = 0;
    for (const auto& [g, m] : ar.group_class_means) {
        const size_t n = ar.dice_stats.group_n.at(g);
        dice_cup_all += m.dice_cup * double(n);
        dice_rim_all += m.dice_rim * double(n);
        iou_cup_all += m.iou_cup * double(n);
        iou_rim_all += m.iou_rim * double(n);
        n_all += n;
    }
    std::snprintf(buf, sizeof buf, "%s,ALL,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", ar.attribute.c_str(), n_all,
                  dice_cup_all / double(n_all), dice_rim_all / double(n_all), iou_cup_all / double(n_all),
                  iou_rim_all / double(n_all), ar.es_dice, ar.es_iou, ar.fairness_value);
    os << buf;
}

inline void write_eval_outputs(const std::string& out_dir, const std::string& tag, const EvalReport& report) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_per_sample_csv((fs::path(out_dir) / ("per_sample_" + tag + ".csv")).string(), report);
    for (const auto& [attr, ar] : report.attributes) {
        write_group_report_csv((fs::path(out_dir) / ("report_" + tag + "_" + attr + ".csv")).string(), ar);
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& [g, m] : ar.dice_stats.group_mean) bars.push_back({g, m});
        bars.push_back({"ES-DICE", ar.es_dice});
        write_bar_chart((fs::path(out_dir) / ("dice_by_group_" + tag + "_" + attr + ".png")).string(),
                        tag + " " + attr + " MEAN DICE", bars);
    }
    if (!report.warnings.empty()) {
        std::ofstream os((fs::path(out_dir) / ("warnings_" + tag + ".txt")).string(), std::ios::trunc);
        for (const auto& w : report.warnings) os << w << "\n";
    }
}

// ---- the end-to-end fairness experiment ----

struct ExperimentConfig {
    uint64_t seed = 42;
    int n_seeds = 5;
    std::string attribute = "group";
    ToyDatasetSpec dataset;       // filled with the 90/10 default by default_experiment_config()
    CodecConfig codec{256, 0.3};
    DiffusionConfig diffusion;
    ControlTrainConfig control;
    SegmenterConfig segmenter;
    size_t n_target = kAutoTarget;
    int threads = 1;
};

/// The 90/10 imbalanced two-family configuration the artifact demonstrates
/// the fairness effect on.
inline ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    cfg.dataset.width = 64;
    cfg.dataset.height = 64;
    cfg.dataset.attribute = "group";
    ToyGroupSpec a{"A", 90, 40, {}};
    a.family.ratio_mean = 0.3;
    a.family.ratio_sd = 0.05;
    ToyGroupSpec b{"B", 10, 40, {}};
    b.family.ratio_mean = 0.6;
    b.family.ratio_sd = 0.05;
    cfg.dataset.groups = {a, b};
    cfg.diffusion.train_steps = 1000;
    cfg.diffusion.batch = 4;
    cfg.diffusion.min_group_size = 5;
    cfg.control.steps = 400;
    cfg.control.base_steps = 150;
    cfg.segmenter.epochs = 6;
    return cfg;
}

struct SeedOutcome {
    uint64_t seed = 0;
    double var_real = 0.0, var_combined = 0.0;
    double fair_real = 0.0, fair_combined = 0.0;
    double es_dice_real = 0.0, es_dice_combined = 0.0;
    double es_iou_real = 0.0, es_iou_combined = 0.0;
    double overall_dice_real = 0.0, overall_dice_combined = 0.0;
    size_t synthesized = 0;
};

struct ExperimentResult {
    std::vector<SeedOutcome> seeds;
    int variance_reduced = 0;
    int fairness_improved = 0;
};

/// Train the full pipeline twice per seed (real-only and equal-scale
/// combined), evaluate both on the same real-only test split, and compare.
inline ExperimentResult run_fairness_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                                std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    ExperimentResult result;
    for (int k = 0; k < cfg.n_seeds; ++k) {
        const uint64_t seed = cfg.seed + uint64_t(k);
        const fs::path seed_dir = fs::path(out_dir) / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);
        if (log) *log << "[seed " << seed << "] generating toy dataset\n" << std::flush;
        const auto rows = make_toy_dataset(cfg.dataset, seed, (seed_dir / "dataset").string());
        const auto train = filter_rows(rows, "train");
        const auto test = filter_rows(rows, "test");
        for (const auto& r : test)
            if (r.provenance != "real") throw std::logic_error("fairness experiment: synthetic row in test split");

        if (log) *log << "[seed " << seed << "] training per-group diffusion models\n" << std::flush;
        DiffusionConfig dcfg = cfg.diffusion;
        dcfg.threads = cfg.threads;
        std::vector<ManifestRowView> views;
        for (const auto& r : train) views.push_back({r.mask_abs.string(), r.attrs.at(cfg.attribute)});
        GroupModelRegistry registry = train_group_models(views, cfg.attribute, cfg.codec, dcfg, seed);
        registry.save((seed_dir / "models").string());

        if (log) *log << "[seed " << seed << "] training control synthesis\n" << std::flush;
        ControlTrainConfig ccfg = cfg.control;
        ccfg.threads = cfg.threads;
        std::vector<ToyImage> train_images;
        std::vector<ControlPair> pairs;
        for (const auto& r : train) {
            ControlPair p{load_mask_png(r.mask_abs.string()), load_toy_png(r.image_abs.string())};
            train_images.push_back(p.image);
            pairs.push_back(std::move(p));
        }
        Rng control_rng(splitmix64(seed ^ hash_str("control")));
        BaseNet base = train_base_autoencoder(train_images, ccfg, control_rng.derive("base"));
        Rng block_rng = control_rng.derive("block");
        ControlBlock block(base, cfg.dataset.width, cfg.dataset.height, block_rng);
        train_control(pairs, block, ccfg, control_rng.derive("train"));
        save_control_block((seed_dir / "control.fdnn").string(), block);

        SegmenterConfig scfg = cfg.segmenter;
        scfg.threads = cfg.threads;
        if (log) *log << "[seed " << seed << "] real-only segmenter\n" << std::flush;
        ToySegmenter seg_real = train_segmenter(train, scfg, seed);
        EvalReport eval_real = evaluate_segmenter(seg_real, test, {cfg.attribute});
        write_eval_outputs((seed_dir / "reports").string(), "real_only", eval_real);

        if (log) *log << "[seed " << seed << "] equal-scale combination\n" << std::flush;
        const CombinePlan plan = plan_equal_scale(train, cfg.attribute, cfg.n_target, seed);
        ExecuteResult combined = execute_plan(plan, train, registry, cfg.codec, block, seed_dir.string(),
                                              cfg.dataset.width, cfg.dataset.height);
        save_manifest((seed_dir / "combined_manifest.csv").string(), combined.rows);

        if (log) *log << "[seed " << seed << "] combined segmenter\n" << std::flush;
        ToySegmenter seg_combined = train_segmenter(combined.rows, scfg, seed);
        EvalReport eval_combined = evaluate_segmenter(seg_combined, test, {cfg.attribute});
        write_eval_outputs((seed_dir / "reports").string(), "combined", eval_combined);

        const AttributeReport& ar = eval_real.attributes.at(cfg.attribute);
        const AttributeReport& ac = eval_combined.attributes.at(cfg.attribute);
        SeedOutcome o;
        o.seed = seed;
        o.var_real = ar.dice_stats.variance;
        o.var_combined = ac.dice_stats.variance;
        o.fair_real = ar.fairness_value;
        o.fair_combined = ac.fairness_value;
        o.es_dice_real = ar.es_dice;
        o.es_dice_combined = ac.es_dice;
        o.es_iou_real = ar.es_iou;
        o.es_iou_combined = ac.es_iou;
        o.overall_dice_real = ar.dice_stats.overall;
        o.overall_dice_combined = ac.dice_stats.overall;
        for (const auto& [g, n] : combined.synthesized) o.synthesized += n;
        result.seeds.push_back(o);
        if (o.var_combined < o.var_real) ++result.variance_reduced;
        if (o.fair_combined > o.fair_real) ++result.fairness_improved;
        if (log)
            *log << "[seed " << seed << "] variance " << o.var_real << " -> " << o.var_combined << ", fairness "
                 << o.fair_real << " -> " << o.fair_combined << "\n"
                 << std::flush;
    }

    // comparison table + summary plot
    std::ofstream os((fs::path(out_dir) / "comparison.csv").string(), std::ios::trunc);
    os << "seed,var_real,var_combined,fairness_real,fairness_combined,es_dice_real,es_dice_combined,"
          "es_iou_real,es_iou_combined,overall_dice_real,overall_dice_combined,synthesized\n";
    char buf[512];
    for (const auto& o : result.seeds) {
        std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n",
                      (unsigned long long)o.seed, o.var_real, o.var_combined, o.fair_real, o.fair_combined,
                      o.es_dice_real, o.es_dice_combined, o.es_iou_real, o.es_iou_combined, o.overall_dice_real,
                      o.overall_dice_combined, o.synthesized);
        os << buf;
    }
    std::ofstream summary((fs::path(out_dir) / "summary.txt").string(), std::ios::trunc);
    summary << "seeds: " << result.seeds.size() << "\n"
            << "cross-group dice variance reduced: " << result.variance_reduced << "/" << result.seeds.size() << "\n"
            << "fairness improved: " << result.fairness_improved << "/" << result.seeds.size() << "\n";
    double mean_es_real = 0.0, mean_es_comb = 0.0;
    for (const auto& o : result.seeds) {
        mean_es_real += o.es_dice_real / double(result.seeds.size());
        mean_es_comb += o.es_dice_combined / double(result.seeds.size());
    }
    write_bar_chart((fs::path(out_dir) / "es_dice_comparison.png").string(), "MEAN ES-DICE",
                    {{"REAL", mean_es_real}, {"COMBINED", mean_es_comb}});
    return result;
}

}  // namespace fairdiff
