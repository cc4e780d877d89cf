#include <catch2/catch_amalgamated.hpp>

#include "fairdiff/metrics.hpp"
#include "fairdiff/rng.hpp"

using namespace fairdiff;

namespace {

MaskImage mask_from(std::initializer_list<uint8_t> labels, int w, int h) {
    MaskImage m(w, h);
    m.labels.assign(labels);
    return m;
}

MaskImage random_mask(int w, int h, Rng& rng) {
    MaskImage m(w, h);
    for (auto& l : m.labels) l = uint8_t(rng.below(3));
    return m;
}

std::vector<double> unit2(double angle) { return {std::cos(angle), std::sin(angle)}; }

}  // namespace

TEST_CASE("dice basics") {
    const MaskImage a = mask_from({2, 2, 0, 0, 1, 1, 0, 0}, 4, 2);
    CHECK(dice(a, a, CUP) == 1.0);
    CHECK(dice(a, a, DISC) == 1.0);

    const MaskImage b = mask_from({0, 0, 2, 2, 0, 0, 1, 1}, 4, 2);
    CHECK(dice(a, b, CUP) == 0.0);

    // |A|=|B|=4, overlap 2 -> 0.5
    const MaskImage p = mask_from({2, 2, 2, 2, 0, 0, 0, 0}, 4, 2);
    const MaskImage g = mask_from({0, 0, 2, 2, 2, 2, 0, 0}, 4, 2);
    CHECK(dice(p, g, CUP) == 0.5);

    // both empty -> 1.0
    CHECK(dice(p, g, DISC) == 1.0);

    MaskImage wrong(3, 3);
    CHECK_THROWS_AS(dice(a, wrong, CUP), std::invalid_argument);
}

TEST_CASE("iou basics and Dice-IoU identity") {
    const MaskImage p = mask_from({2, 2, 2, 2, 0, 0, 0, 0}, 4, 2);
    const MaskImage g = mask_from({0, 0, 2, 2, 2, 2, 0, 0}, 4, 2);
    CHECK(iou(p, p, CUP) == 1.0);
    CHECK_THAT(iou(p, g, CUP), Catch::Matchers::WithinAbs(2.0 / 6.0, 1e-15));

    Rng rng(55);
    for (int i = 0; i < 100; ++i) {
        const MaskImage a = random_mask(8, 8, rng);
        const MaskImage b = random_mask(8, 8, rng);
        for (uint8_t cls : {DISC, CUP}) {
            const double d = dice(a, b, cls);
            const double j = iou(a, b, cls);
            CHECK_THAT(d, Catch::Matchers::WithinAbs(2.0 * j / (1.0 + j), 1e-12));
        }
    }
}

TEST_CASE("group stats") {
    const GroupStats s1 = group_stats({{0.8, "a"}, {0.8, "b"}});
    CHECK(s1.stdev == 0.0);
    CHECK(s1.variance == 0.0);

    const GroupStats s2 = group_stats({{0.9, "a"}, {0.7, "b"}});
    CHECK_THAT(s2.stdev, Catch::Matchers::WithinAbs(0.1, 1e-15));
    CHECK_THAT(s2.variance, Catch::Matchers::WithinAbs(0.01, 1e-15));
    CHECK_THAT(s2.overall, Catch::Matchers::WithinAbs(0.8, 1e-15));

    const GroupStats s3 = group_stats({{0.4, "solo"}, {0.6, "solo"}});
    CHECK(s3.stdev == 0.0);  // single group convention

    // group mean is unweighted within the group
    const GroupStats s4 = group_stats({{1.0, "a"}, {0.0, "a"}, {0.5, "b"}});
    CHECK(s4.group_mean.at("a") == 0.5);
    CHECK(s4.stdev == 0.0);
}

TEST_CASE("essp") {
    CHECK(essp(0.8, 0.0) == 0.8);
    CHECK_THAT(essp(0.8, 0.1), Catch::Matchers::WithinAbs(0.8 / 1.1, 1e-15));
    Rng rng(66);
    for (int i = 0; i < 200; ++i) {
        const double L = rng.uniform();
        const double sd = rng.uniform() * 0.5;
        CHECK(essp(L, sd) <= L + 1e-15);
        if (sd == 0.0) CHECK(essp(L, sd) == L);
    }
}

TEST_CASE("fairness") {
    CHECK(fairness({0.0, 0.0}) == 0.0);
    const GroupStats s = group_stats({{0.9, "a"}, {0.7, "b"}});
    CHECK_THAT(fairness({s.variance}), Catch::Matchers::WithinAbs(-0.01, 1e-15));
    CHECK_THAT(fairness({0.01, 0.04}), Catch::Matchers::WithinAbs(-0.05, 1e-15));
}

TEST_CASE("mmd trivial and derived cases") {
    FeatureSet real, gen;
    real.add({1.0, 0.0});
    gen.add({1.0, 0.0});
    CHECK_THAT(mmd(gen, real), Catch::Matchers::WithinAbs(0.0, 1e-15));

    FeatureSet orth;
    orth.add({0.0, 1.0});
    CHECK_THAT(mmd(orth, real), Catch::Matchers::WithinAbs(0.5, 1e-15));

    // two generated vectors at cosine distances 0.1 and 0.3 from the single
    // real vector -> mean 0.2 (cos = 1 - 2d)
    FeatureSet two;
    two.add(unit2(std::acos(0.8)));
    two.add(unit2(std::acos(0.4)));
    CHECK_THAT(mmd(two, real), Catch::Matchers::WithinAbs(0.2, 1e-12));

    FeatureSet zero;
    zero.add({0.0, 0.0});
    CHECK_THROWS_AS(mmd(zero, real), std::invalid_argument);
}

TEST_CASE("cov trivial and derived cases") {
    FeatureSet real;
    for (double a : {0.1, 0.7, 1.4, 2.2}) real.add(unit2(a));

    FeatureSet same = real;
    CHECK(cov(same, real) == 1.0);

    // all generated nearest to one real
    FeatureSet close;
    close.add(unit2(0.11));
    close.add(unit2(0.09));
    close.add(unit2(0.105));
    CHECK_THAT(cov(close, real), Catch::Matchers::WithinAbs(0.25, 1e-15));

    // 3 generated matching 2 distinct of 4 reals -> 0.5; verify against a
    // brute-force argmin enumeration
    FeatureSet three;
    three.add(unit2(0.12));
    three.add(unit2(0.08));
    three.add(unit2(0.69));
    std::set<size_t> oracle;
    for (const auto& g : three.rows) {
        size_t arg = 0;
        double best = 1e9;
        for (size_t i = 0; i < real.rows.size(); ++i) {
            const double d = cosine_distance(g, real.rows[i]);
            if (d < best) {
                best = d;
                arg = i;
            }
        }
        oracle.insert(arg);
    }
    CHECK(oracle.size() == 2);
    CHECK_THAT(cov(three, real), Catch::Matchers::WithinAbs(0.5, 1e-15));
}

TEST_CASE("mmd(S,S)=0 and cov(S,S)=1 on random distinct sets") {
    Rng rng(77);
    FeatureSet s;
    for (int i = 0; i < 32; ++i) {
        std::vector<double> v(6);
        for (double& x : v) x = rng.normal();
        s.add(v);
    }
    CHECK_THAT(mmd(s, s), Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK(cov(s, s) == 1.0);
}

TEST_CASE("symmetric eigendecomposition on known matrices") {
    // diag(3,1) rotated by 45 degrees: A = R diag(3,1) R^T = [[2,1],[1,2]]
    std::vector<double> ev, V;
    symmetric_eigen({2, 1, 1, 2}, 2, ev, V);
    CHECK_THAT(ev[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(ev[1], Catch::Matchers::WithinAbs(3.0, 1e-12));

    // reconstruction check on a random symmetric 5x5
    Rng rng(88);
    std::vector<double> a(25);
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = i; j < 5; ++j) a[i * 5 + j] = a[j * 5 + i] = rng.normal();
    symmetric_eigen(a, 5, ev, V);
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = 0; j < 5; ++j) {
            double rec = 0.0;
            for (size_t k = 0; k < 5; ++k) rec += ev[k] * V[i * 5 + k] * V[j * 5 + k];
            CHECK_THAT(rec, Catch::Matchers::WithinAbs(a[i * 5 + j], 1e-10));
        }
}

TEST_CASE("fid: identical sets give zero") {
    Rng rng(99);
    FeatureSet s;
    s.provenance = "real";
    for (int i = 0; i < 64; ++i) {
        std::vector<double> v(8);
        for (double& x : v) x = rng.normal();
        s.add(v);
    }
    CHECK(fid(s, s) <= 1e-6);
}

TEST_CASE("fid: 1-D closed form equals 2") {
    // population stats: {-1, 1} has mean 0 var 1; {-1, 3} has mean 1 var 4
    // closed form: (0-1)^2 + (1 + 4 - 2*sqrt(1*4)) = 2
    FeatureSet a, b;
    a.add({-1.0});
    a.add({1.0});
    b.add({-1.0});
    b.add({3.0});
    CHECK_THAT(fid(a, b), Catch::Matchers::WithinAbs(2.0, 1e-9));
}

TEST_CASE("fid translation property: equal covariances shifted by v give ||v||^2") {
    Rng rng(111);
    FeatureSet a, b;
    std::vector<double> shift = {0.7, -0.4, 1.1};
    for (int i = 0; i < 200; ++i) {
        std::vector<double> v(3);
        for (double& x : v) x = rng.normal();
        a.add(v);
        for (size_t j = 0; j < 3; ++j) v[j] += shift[j];
        b.add(v);
    }
    const double expect = 0.7 * 0.7 + 0.4 * 0.4 + 1.1 * 1.1;
    CHECK_THAT(fid(a, b), Catch::Matchers::WithinAbs(expect, 1e-9));
}

TEST_CASE("fid symmetry and non-negativity") {
    Rng rng(222);
    FeatureSet a, b;
    for (int i = 0; i < 50; ++i) {
        std::vector<double> v(4), w(4);
        for (double& x : v) x = rng.normal();
        for (double& x : w) x = 0.5 + 1.5 * rng.normal();
        a.add(v);
        b.add(w);
    }
    const double ab = fid(a, b);
    const double ba = fid(b, a);
    CHECK(ab >= 0.0);
    CHECK_THAT(ab, Catch::Matchers::WithinAbs(ba, 1e-8));
}

TEST_CASE("fid regularizes a singular covariance and warns") {
    FeatureSet a, b;
    // constant feature -> zero variance -> singular covariance
    for (int i = 0; i < 10; ++i) {
        a.add({1.0, double(i)});
        b.add({1.0, double(i) * 0.5});
    }
    bool warned = false;
    const double v = fid(a, b, &warned);
    CHECK(warned);
    CHECK(std::isfinite(v));
}

TEST_CASE("metrics are invariant under sample reordering") {
    Rng rng(333);
    FeatureSet a, b;
    for (int i = 0; i < 20; ++i) {
        std::vector<double> v(5), w(5);
        for (double& x : v) x = rng.normal();
        for (double& x : w) x = rng.normal() + 0.3;
        a.add(v);
        b.add(w);
    }
    FeatureSet a_shuf = a, b_shuf = b;
    Rng shuffle_rng(42);
    shuffle_rng.shuffle(a_shuf.rows);
    shuffle_rng.shuffle(b_shuf.rows);
    CHECK_THAT(mmd(a, b), Catch::Matchers::WithinAbs(mmd(a_shuf, b_shuf), 1e-12));
    CHECK_THAT(cov(a, b), Catch::Matchers::WithinAbs(cov(a_shuf, b_shuf), 1e-12));
    CHECK_THAT(fid(a, b), Catch::Matchers::WithinAbs(fid(a_shuf, b_shuf), 1e-9));
}

TEST_CASE("projected extractor is deterministic and finite") {
    ToyImage img(32, 32);
    Rng rng(444);
    for (double& p : img.pixels) p = rng.uniform();
    const auto ex = projected_extractor(16);
    const auto f1 = ex(img);
    const auto f2 = ex(img);
    CHECK(f1 == f2);
    CHECK(f1.size() == 16);
}
