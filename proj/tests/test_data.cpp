#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "fairdiff/data.hpp"

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

ToyDatasetSpec small_spec() {
    ToyDatasetSpec spec;
    spec.width = 48;
    spec.height = 48;
    ToyGroupSpec a{"A", 6, 2, {}};
    a.family.ratio_mean = 0.3;
    ToyGroupSpec b{"B", 3, 2, {}};
    b.family.ratio_mean = 0.6;
    spec.groups = {a, b};
    return spec;
}

std::vector<ManifestRow> fake_rows(const std::map<std::string, size_t>& group_sizes) {
    std::vector<ManifestRow> rows;
    for (const auto& [group, n] : group_sizes)
        for (size_t i = 0; i < n; ++i) {
            ManifestRow r;
            r.id = group + "_" + std::to_string(i);
            r.split = "train";
            r.provenance = "real";
            r.attrs["race"] = group;
            rows.push_back(std::move(r));
        }
    return rows;
}

}  // namespace

TEST_CASE("manifest round trip with attribute maps") {
    TempDir dir("fd_manifest_test");
    const auto rows = make_toy_dataset(small_spec(), 7, dir.path.string());
    CHECK(rows.size() == 13);
    const auto loaded = load_manifest((dir.path / "manifests" / "toy.csv").string());
    REQUIRE(loaded.size() == rows.size());
    CHECK(loaded[0].id == rows[0].id);
    CHECK(loaded[0].attrs.at("group") == "A");
    CHECK(fs::exists(loaded[0].mask_abs));
}

TEST_CASE("manifest rejects duplicate ids naming the id") {
    TempDir dir("fd_manifest_dup");
    std::ofstream os((dir.path / "bad.csv").string());
    os << "id,image,mask,split,provenance,attr:g\n";
    os << "x,i.png,m.png,train,real,A\n";
    os << "x,i.png,m.png,train,real,B\n";
    os.close();
    try {
        load_manifest((dir.path / "bad.csv").string());
        FAIL("expected failure");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("duplicate id 'x'") != std::string::npos);
    }
}

TEST_CASE("manifest collects multiple diagnostics and fails atomically") {
    TempDir dir("fd_manifest_diag");
    std::ofstream os((dir.path / "bad.csv").string());
    os << "id,image,mask,split,provenance,attr:race,attr:gender\n";
    os << "a,missing.png,missing2.png,train,real,Asian,Female\n";
    os << "b,missing.png,missing2.png,holdout,real,Black,\n";
    os.close();
    try {
        load_manifest((dir.path / "bad.csv").string());
        FAIL("expected failure");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("unknown split 'holdout'") != std::string::npos);
        CHECK(msg.find("missing image file") != std::string::npos);
    }
}

TEST_CASE("attribute map parses multiple attr columns") {
    TempDir dir("fd_manifest_attrs");
    // reuse generated files so paths resolve
    const auto rows = make_toy_dataset(small_spec(), 8, dir.path.string());
    std::ofstream os((dir.path / "manifests" / "two.csv").string());
    os << "id,image,mask,split,provenance,attr:race,attr:gender\n";
    os << "s1," << rows[0].image << "," << rows[0].mask << ",train,real,Asian,Female\n";
    os.close();
    const auto loaded = load_manifest((dir.path / "manifests" / "two.csv").string());
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].attrs.size() == 2);
    CHECK(loaded[0].attrs.at("race") == "Asian");
    CHECK(loaded[0].attrs.at("gender") == "Female");
}

TEST_CASE("plan_equal_scale AUTO picks the largest group") {
    const auto rows = fake_rows({{"A", 40}, {"B", 10}});
    const CombinePlan plan = plan_equal_scale(rows, "race", kAutoTarget, 1);
    CHECK(plan.n_target == 40);
    REQUIRE(plan.actions.size() == 2);
    CHECK(plan.actions[0].group == "A");
    CHECK(plan.actions[0].kind == GroupAction::Kind::KeepAll);
    CHECK(plan.actions[1].group == "B");
    CHECK(plan.actions[1].kind == GroupAction::Kind::Synthesize);
    CHECK(plan.actions[1].count == 30);
}

TEST_CASE("plan_equal_scale with a fixed target subsamples and synthesizes") {
    const auto rows = fake_rows({{"A", 40}, {"B", 10}});
    const CombinePlan plan = plan_equal_scale(rows, "race", 25, 1);
    CHECK(plan.actions[0].kind == GroupAction::Kind::Subsample);
    CHECK(plan.actions[0].count == 25);
    CHECK(plan.actions[1].kind == GroupAction::Kind::Synthesize);
    CHECK(plan.actions[1].count == 15);

    const auto exact = plan_equal_scale(fake_rows({{"A", 25}, {"B", 25}}), "race", 25, 1);
    for (const auto& a : exact.actions) {
        CHECK(a.kind == GroupAction::Kind::KeepAll);
    }
}

TEST_CASE("plan_equal_scale rejects rows without the attribute") {
    auto rows = fake_rows({{"A", 3}});
    rows.push_back([] {
        ManifestRow r;
        r.id = "noattr";
        r.attrs["gender"] = "F";
        return r;
    }());
    CHECK_THROWS_AS(plan_equal_scale(rows, "race", kAutoTarget, 1), std::invalid_argument);
}

TEST_CASE("subsampling is uniform, without replacement, and seed-reproducible") {
    Rng r1(9), r2(9), r3(10);
    const auto a = subsample_indices(100, 30, r1);
    const auto b = subsample_indices(100, 30, r2);
    const auto c = subsample_indices(100, 30, r3);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.size() == 30);
    std::set<size_t> uniq(a.begin(), a.end());
    CHECK(uniq.size() == 30);
    CHECK(std::is_sorted(a.begin(), a.end()));
}

TEST_CASE("toy dataset: group ratio statistics and byte determinism") {
    TempDir d1("fd_toy_a");
    TempDir d2("fd_toy_b");
    ToyDatasetSpec spec = small_spec();
    spec.groups[0].n_train = 25;
    spec.groups[1].n_train = 25;
    const auto rows1 = make_toy_dataset(spec, 42, d1.path.string());
    const auto rows2 = make_toy_dataset(spec, 42, d2.path.string());

    // byte-identical across runs with the same seed
    for (const auto& r : rows1) {
        const fs::path other = d2.path / fs::relative(r.mask_abs, d1.path);
        std::ifstream f1(r.mask_abs, std::ios::binary), f2(other, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), {});
        std::string s2((std::istreambuf_iterator<char>(f2)), {});
        CHECK(s1 == s2);
    }
    (void)rows2;

    // empirical cup/disc area ratios within 0.05 of the family means
    auto mean_ratio = [&](const std::string& group) {
        double acc = 0.0;
        size_t n = 0;
        for (const auto& r : rows1) {
            if (r.attrs.at("group") != group || r.split != "train") continue;
            const MaskImage m = load_mask_png(r.mask_abs.string());
            const double cup = double(m.count(CUP));
            const double disc = double(m.count(DISC)) + cup;
            acc += cup / disc;
            ++n;
        }
        return acc / double(n);
    };
    CHECK_THAT(mean_ratio("A"), Catch::Matchers::WithinAbs(0.3, 0.05));
    CHECK_THAT(mean_ratio("B"), Catch::Matchers::WithinAbs(0.6, 0.05));
}

TEST_CASE("toy dataset rejects an impossible cup/disc ratio") {
    ToyDatasetSpec spec = small_spec();
    spec.groups[1].family.ratio_mean = 1.3;
    TempDir dir("fd_toy_bad");
    CHECK_THROWS_AS(make_toy_dataset(spec, 1, dir.path.string()), std::invalid_argument);
}

TEST_CASE("execute_plan: synthesis counts, provenance, equal-scale postcondition") {
    TempDir dir("fd_exec_test");
    ToyDatasetSpec spec = small_spec();
    spec.groups[0].n_train = 12;
    spec.groups[1].n_train = 5;
    const auto rows = make_toy_dataset(spec, 77, dir.path.string());
    const auto train = filter_rows(rows, "train");

    // tiny models are enough to exercise the pipeline contracts
    DiffusionConfig dcfg;
    dcfg.T = 10;
    dcfg.hidden = 16;
    dcfg.time_dim = 8;
    dcfg.latent_dim = 4;
    dcfg.train_steps = 15;
    dcfg.batch = 2;
    dcfg.min_group_size = 2;
    const CodecConfig codec{64, 0.3};
    std::vector<ManifestRowView> views;
    for (const auto& r : train) views.push_back({r.mask_abs.string(), r.attrs.at("group")});
    GroupModelRegistry reg = train_group_models(views, "group", codec, dcfg, 31);

    Rng block_rng(5);
    BaseNet base("pre", 4, block_rng);
    ControlBlock block(base, spec.width, spec.height, block_rng);

    const CombinePlan plan = plan_equal_scale(train, "group", kAutoTarget, 99);
    ExecuteResult result =
        execute_plan(plan, train, reg, codec, block, dir.path.string(), spec.width, spec.height);

    CHECK(result.synthesized.at("B") == 7);
    std::map<std::string, size_t> counts;
    size_t synthetic = 0;
    for (const auto& r : result.rows) {
        counts[r.attrs.at("group")] += 1;
        if (r.provenance == "synthetic") {
            ++synthetic;
            CHECK(r.attrs.at("group") == "B");
            CHECK(fs::exists(r.mask_abs));
            CHECK(fs::exists(r.image_abs));
        }
    }
    CHECK(synthetic == 7);
    CHECK(counts.at("A") == 12);
    CHECK(counts.at("B") == 12);

    // real rows pass through untouched
    size_t originals = 0;
    for (const auto& r : result.rows)
        if (r.provenance == "real") {
            bool found = false;
            for (const auto& orig : train) found = found || (orig.id == r.id && orig.mask == r.mask);
            CHECK(found);
            ++originals;
        }
    CHECK(originals == 17);
}

TEST_CASE("execute_plan with zero synthesis returns the input rows") {
    TempDir dir("fd_exec_zero");
    ToyDatasetSpec spec = small_spec();
    spec.groups[0].n_train = 4;
    spec.groups[1].n_train = 4;
    const auto rows = make_toy_dataset(spec, 88, dir.path.string());
    const auto train = filter_rows(rows, "train");
    const CombinePlan plan = plan_equal_scale(train, "group", kAutoTarget, 1);
    GroupModelRegistry empty_reg;
    empty_reg.attribute = "group";
    Rng block_rng(6);
    BaseNet base("pre", 4, block_rng);
    ControlBlock block(base, spec.width, spec.height, block_rng);
    const ExecuteResult result = execute_plan(plan, train, empty_reg, {64, 0.3}, block, dir.path.string(), 48, 48);
    REQUIRE(result.rows.size() == train.size());
    for (size_t i = 0; i < train.size(); ++i) CHECK(result.rows[i].id == train[i].id);
}

TEST_CASE("execute_plan fails before writing when a group model is missing") {
    TempDir dir("fd_exec_missing");
    const auto rows = fake_rows({{"A", 5}, {"B", 2}});
    const CombinePlan plan = plan_equal_scale(rows, "race", kAutoTarget, 1);
    GroupModelRegistry empty_reg;
    empty_reg.attribute = "race";
    Rng block_rng(7);
    BaseNet base("pre", 4, block_rng);
    ControlBlock block(base, 48, 48, block_rng);
    CHECK_THROWS_WITH(execute_plan(plan, rows, empty_reg, {64, 0.3}, block, dir.path.string(), 48, 48),
                      Catch::Matchers::ContainsSubstring("nothing was written"));
    CHECK_FALSE(fs::exists(dir.path / "synthetic_race"));
}
