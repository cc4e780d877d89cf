#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fairdiff/experiment.hpp"

using namespace fairdiff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ToyDatasetSpec tiny_spec(int per_group_train, int per_group_test) {
    ToyDatasetSpec spec;
    spec.width = 32;
    spec.height = 32;
    ToyGroupSpec a{"A", per_group_train, per_group_test, {}};
    a.family.ratio_mean = 0.3;
    ToyGroupSpec b{"B", per_group_train, per_group_test, {}};
    b.family.ratio_mean = 0.6;
    spec.groups = {a, b};
    return spec;
}

/// Segmenter stub used for metric plumbing tests: predicts the ground truth.
struct PerfectPredictor {
    std::map<std::string, MaskImage> by_id;
};

}  // namespace

TEST_CASE("segmenter overfits a 5-sample set to high train dice") {
    TempDir dir("fd_seg_overfit");
    ToyDatasetSpec spec = tiny_spec(3, 1);
    spec.groups[1].n_train = 2;
    spec.render.noise_sd = 0.02;
    const auto rows = make_toy_dataset(spec, 11, dir.path.string());
    const auto train = filter_rows(rows, "train");
    REQUIRE(train.size() == 5);

    SegmenterConfig cfg;
    cfg.channels = 10;
    cfg.epochs = 60;
    cfg.batch = 5;
    cfg.lr = 3e-3;
    LossCurve curve;
    ToySegmenter seg = train_segmenter(train, cfg, 123, &curve);

    // loss is strictly positive (cross-entropy bound) and decreasing
    for (const auto& [step, loss] : curve.points) CHECK(loss > 0.0);
    CHECK(curve.points.back().second < 0.5 * curve.points.front().second);

    double min_dice = 1.0;
    for (const auto& r : train) {
        const MaskImage pred = seg.predict(load_toy_png(r.image_abs.string()));
        const MaskImage gt = load_mask_png(r.mask_abs.string());
        min_dice = std::min({min_dice, dice(pred, gt, CUP), dice(pred, gt, DISC)});
    }
    CHECK(min_dice > 0.9);
}

TEST_CASE("segmenter training is seed-deterministic") {
    TempDir dir("fd_seg_det");
    const auto rows = make_toy_dataset(tiny_spec(4, 1), 17, dir.path.string());
    const auto train = filter_rows(rows, "train");
    SegmenterConfig cfg;
    cfg.channels = 6;
    cfg.epochs = 2;
    auto run = [&](int threads) {
        SegmenterConfig c = cfg;
        c.threads = threads;
        ToySegmenter s = train_segmenter(train, c, 77);
        return s.c1.k.value.v;
    };
    const auto a = run(1);
    CHECK(a == run(1));
    CHECK(a == run(2));  // thread count must not change the stream
}

TEST_CASE("segmenter checkpoint round trip") {
    TempDir dir("fd_seg_ckpt");
    const auto rows = make_toy_dataset(tiny_spec(3, 1), 19, dir.path.string());
    SegmenterConfig cfg;
    cfg.channels = 6;
    cfg.epochs = 1;
    ToySegmenter seg = train_segmenter(filter_rows(rows, "train"), cfg, 7);
    const auto path = (dir.path / "seg.fdnn").string();
    save_segmenter(path, seg);
    ToySegmenter loaded = load_segmenter(path);
    const ToyImage img = load_toy_png(rows[0].image_abs.string());
    CHECK(seg.predict(img).labels == loaded.predict(img).labels);
}

TEST_CASE("evaluate: perfect predictions give dice 1, ES-dice 1, fairness 0") {
    // score_sample with pred == gt across two groups
    TempDir dir("fd_eval_perfect");
    const auto rows = make_toy_dataset(tiny_spec(2, 3), 23, dir.path.string());
    const auto test = filter_rows(rows, "test");

    std::vector<std::pair<double, std::string>> dice_scored;
    EvalReport report;
    for (const auto& r : test) {
        const MaskImage gt = load_mask_png(r.mask_abs.string());
        SampleScore s = score_sample(gt, gt, r.id);
        CHECK(s.dice_cup == 1.0);
        CHECK(s.iou_rim == 1.0);
        s.attrs = r.attrs;
        report.samples.push_back(s);
        dice_scored.push_back({s.mean_dice, r.attrs.at("group")});
    }
    const GroupStats gs = group_stats(dice_scored);
    CHECK(gs.overall == 1.0);
    CHECK(gs.stdev == 0.0);
    CHECK(essp(gs.overall, gs.stdev) == 1.0);
    CHECK(fairness({gs.variance}) == 0.0);
}

TEST_CASE("evaluate: a group-biased predictor yields ES-dice below overall dice") {
    std::vector<std::pair<double, std::string>> scored;
    for (int i = 0; i < 10; ++i) scored.push_back({0.9, "A"});
    for (int i = 0; i < 10; ++i) scored.push_back({0.6, "B"});
    const GroupStats gs = group_stats(scored);
    CHECK(essp(gs.overall, gs.stdev) < gs.overall);
}

TEST_CASE("evaluate excludes synthetic rows and itemizes exclusions") {
    TempDir dir("fd_eval_excl");
    const auto rows = make_toy_dataset(tiny_spec(2, 2), 29, dir.path.string());
    auto test = filter_rows(rows, "test");
    // a synthetic row and an unspecified-group row sneak into the test list
    ManifestRow synth = test[0];
    synth.id = "synth_row";
    synth.provenance = "synthetic";
    test.push_back(synth);
    ManifestRow unspecified = test[1];
    unspecified.id = "unspec_row";
    unspecified.attrs["group"] = kUnspecifiedGroup;
    test.push_back(unspecified);

    SegmenterConfig cfg;
    cfg.channels = 6;
    cfg.epochs = 1;
    ToySegmenter seg = train_segmenter(filter_rows(rows, "train"), cfg, 31);
    const EvalReport report = evaluate_segmenter(seg, test, {"group"});
    CHECK(report.samples.size() == 5);  // 4 real + the unspecified one
    const AttributeReport& ar = report.attributes.at("group");
    CHECK(ar.excluded == 1);
    CHECK(ar.dice_stats.group_n.at("A") + ar.dice_stats.group_n.at("B") == 4);
    bool has_synth_warning = false, has_excl_warning = false;
    for (const auto& w : report.warnings) {
        has_synth_warning = has_synth_warning || w.find("synthetic") != std::string::npos;
        has_excl_warning = has_excl_warning || w.find("excluded") != std::string::npos;
    }
    CHECK(has_synth_warning);
    CHECK(has_excl_warning);
    // per-group n totals match the usable rows and exclusions are itemized
    size_t total = 0;
    for (const auto& [g, n] : ar.dice_stats.group_n) total += n;
    CHECK(total + ar.excluded == report.samples.size());
}

TEST_CASE("group report CSV matches an independent recomputation from per-sample scores") {
    TempDir dir("fd_eval_recompute");
    const auto rows = make_toy_dataset(tiny_spec(4, 4), 37, dir.path.string());
    SegmenterConfig cfg;
    cfg.channels = 8;
    cfg.epochs = 3;
    ToySegmenter seg = train_segmenter(filter_rows(rows, "train"), cfg, 41);
    const EvalReport report = evaluate_segmenter(seg, filter_rows(rows, "test"), {"group"});
    write_eval_outputs((dir.path / "reports").string(), "t", report);

    // independent recomputation from the raw per-sample csv
    std::ifstream is((dir.path / "reports" / "per_sample_t.csv").string());
    REQUIRE(is.good());
    std::string line;
    std::getline(is, line);  // header
    std::map<std::string, std::pair<double, size_t>> acc;
    double overall = 0.0;
    size_t n = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        const double mean_dice = std::stod(fields[5]);
        const std::string group = fields.back();
        acc[group].first += mean_dice;
        acc[group].second += 1;
        overall += mean_dice;
        ++n;
    }
    overall /= double(n);
    double mean_of_means = 0.0;
    for (const auto& [g, a] : acc) mean_of_means += a.first / double(a.second) / double(acc.size());
    double var = 0.0;
    for (const auto& [g, a] : acc) {
        const double m = a.first / double(a.second);
        var += (m - mean_of_means) * (m - mean_of_means) / double(acc.size());
    }
    const double es_expected = overall / (1.0 + std::sqrt(var));

    const AttributeReport& ar = report.attributes.at("group");
    CHECK_THAT(ar.dice_stats.overall, Catch::Matchers::WithinAbs(overall, 1e-9));
    CHECK_THAT(ar.dice_stats.variance, Catch::Matchers::WithinAbs(var, 1e-9));
    CHECK_THAT(ar.es_dice, Catch::Matchers::WithinAbs(es_expected, 1e-9));
    CHECK(ar.es_dice <= ar.dice_stats.overall);
}

TEST_CASE("bar chart writer produces a readable png") {
    TempDir dir("fd_plot");
    const auto path = (dir.path / "chart.png").string();
    write_bar_chart(path, "TEST CHART", {{"A", 0.82}, {"B", 0.61}, {"ES", 0.7}});
    const GrayImage8 img = read_gray_png(path);
    CHECK(img.width > 100);
    CHECK(img.height > 100);
    size_t dark = 0;
    for (uint8_t p : img.pixels) dark += p < 200;
    CHECK(dark > 500);  // axes, bars and text are present
}
