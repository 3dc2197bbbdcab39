#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "jacmatch/bound.hpp"

using namespace jm;
using namespace jm::ad;
using namespace jm::nn;
using namespace jm::bound;

namespace {

std::vector<Tensor> points_1d(const std::vector<double>& xs) {
    std::vector<Tensor> out;
    for (double x : xs) out.push_back(Tensor::from({1}, {x}));
    return out;
}

std::vector<Tensor> gaussian_cloud(Rng& rng, int n, int dim, double spread = 1.0) {
    std::vector<Tensor> out;
    for (int i = 0; i < n; ++i) {
        Tensor t = Tensor::zeros({dim});
        for (double& v : t.mutable_data()) v = spread * rng.normal();
        out.push_back(t);
    }
    return out;
}

std::vector<std::vector<double>> embed(const std::vector<Tensor>& pts, const MetricSpace& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : pts) out.push_back(m.embed(p));
    return out;
}

}  // namespace

TEST_CASE("hausdorff: identical sets give 0") {
    auto m = MetricSpace::identity();
    auto a = embed(points_1d({0.0, 1.0, 2.5}), m);
    CHECK(asymmetric_hausdorff(a, a).value == 0.0);
}

TEST_CASE("hausdorff: A={0,5}, B={1} gives 4 with witness a=5, and reversed gives 1") {
    auto m = MetricSpace::identity();
    auto a = embed(points_1d({0.0, 5.0}), m);
    auto b = embed(points_1d({1.0}), m);
    auto fwd = asymmetric_hausdorff(a, b);
    CHECK(fwd.value == doctest::Approx(4.0));
    CHECK(fwd.witness_a == 1);
    CHECK(fwd.witness_b == 0);
    auto rev = asymmetric_hausdorff(b, a);
    CHECK(rev.value == doctest::Approx(1.0));
}

TEST_CASE("hausdorff: empty set is rejected") {
    auto m = MetricSpace::identity();
    auto a = embed(points_1d({0.0}), m);
    CHECK_THROWS_WITH_AS(asymmetric_hausdorff(a, {}), doctest::Contains("nonempty"),
                         std::runtime_error);
}

TEST_CASE("hausdorff is zero iff every A point is within 1e-12 of some B point") {
    Rng rng(1);
    auto m = MetricSpace::identity();
    auto base = gaussian_cloud(rng, 20, 3);
    auto a = embed(base, m);
    auto b = a;
    b.push_back(m.embed(Tensor::from({3}, {9.0, 9.0, 9.0})));  // extra B points are fine
    CHECK(asymmetric_hausdorff(a, b).value <= 1e-12);
    // move one A point off the set
    a[0][0] += 0.5;
    CHECK(asymmetric_hausdorff(a, b).value > 1e-12);
}

TEST_CASE("hausdorff witness reproduces the reported value exactly") {
    Rng rng(2);
    auto m = MetricSpace::identity();
    for (int trial = 0; trial < 20; ++trial) {
        auto a = embed(gaussian_cloud(rng, 15, 2), m);
        auto b = embed(gaussian_cloud(rng, 7, 2), m);
        auto res = asymmetric_hausdorff(a, b);
        CHECK(euclidean(a[static_cast<std::size_t>(res.witness_a)],
                        b[static_cast<std::size_t>(res.witness_b)]) == res.value);
    }
}

TEST_CASE("monotonicity: adding any point to B never increases H_a (property)") {
    Rng rng(3);
    auto m = MetricSpace::identity();
    for (int trial = 0; trial < 50; ++trial) {
        auto a = embed(gaussian_cloud(rng, 12, 2), m);
        auto b = embed(gaussian_cloud(rng, 5, 2), m);
        const double before = asymmetric_hausdorff(a, b).value;
        b.push_back(m.embed(gaussian_cloud(rng, 1, 2)[0]));
        const double after = asymmetric_hausdorff(a, b).value;
        CHECK(after <= before + 1e-15);
    }
}

TEST_CASE("empirical lipschitz: constant rho gives K=0; linear rho(x)=3x gives K=3") {
    std::vector<double> psi = {1.0, 2.0, 0.5};
    CHECK(empirical_lipschitz({4.0, 4.0, 4.0}, {4.0, 4.0, 4.0}, psi) == 0.0);
    // rho(x)=3x on pairs (x1, x2): |rho1-rho2| = 3 psi
    std::vector<double> r1 = {3.0 * 1.0, 3.0 * 5.0, 3.0 * 2.0};
    std::vector<double> r2 = {3.0 * 2.0, 3.0 * 3.0, 3.0 * 2.5};
    CHECK(empirical_lipschitz(r1, r2, psi) == doctest::Approx(3.0));
}

TEST_CASE("empirical lipschitz: identical pairs are skipped; all-identical rejected") {
    int skipped = 0;
    const double k = empirical_lipschitz({1.0, 2.0}, {1.5, 2.0}, {1.0, 0.0}, &skipped);
    CHECK(k == doctest::Approx(0.5));
    CHECK(skipped == 1);
    CHECK_THROWS_WITH_AS(empirical_lipschitz({1.0}, {1.0}, {0.0}), doctest::Contains("undefined"),
                         std::runtime_error);
}

TEST_CASE("K over matched pairs <= K over all pairs (subset max)") {
    Rng rng(4);
    // brute-force oracle over all pairs vs the matched-pairs K from check_prop3
    Network t = make_mlp(2, {4}, 2, LayerKind::sigmoid, rng);
    Network s = make_mlp(2, {3}, 2, LayerKind::sigmoid, rng);
    auto rho = distillation_rho(t, s);
    auto metric = MetricSpace::identity();
    auto src = gaussian_cloud(rng, 25, 2);
    auto tgt = gaussian_cloud(rng, 8, 2);
    auto report = check_prop3(src, tgt, rho, metric);

    double k_all = 0.0;
    for (const auto& a : src) {
        for (const auto& b : tgt) {
            const double psi = euclidean(metric.embed(a), metric.embed(b));
            if (psi > 0) k_all = std::max(k_all, std::fabs(rho(a) - rho(b)) / psi);
        }
    }
    CHECK(report.lipschitz <= k_all + 1e-12);
}

TEST_CASE("check_prop3: source == target reduces to mean <= max") {
    Rng rng(5);
    Network t = make_mlp(2, {3}, 2, LayerKind::sigmoid, rng);
    Network s = make_mlp(2, {2}, 2, LayerKind::sigmoid, rng);
    auto pts = gaussian_cloud(rng, 10, 2);
    auto report = check_prop3(pts, pts, distillation_rho(t, s), MetricSpace::identity());
    CHECK(report.hausdorff == doctest::Approx(0.0));
    CHECK(report.lhs <= report.max_term + 1e-12);
    CHECK(report.holds);
}

TEST_CASE("check_prop3: teacher == student makes every quantity zero") {
    Rng rng(6);
    Network t = make_mlp(2, {3}, 2, LayerKind::sigmoid, rng);
    auto src = gaussian_cloud(rng, 8, 2);
    auto tgt = gaussian_cloud(rng, 4, 2);
    auto report = check_prop3(src, tgt, distillation_rho(t, t), MetricSpace::identity());
    CHECK(report.lhs == doctest::Approx(0.0));
    CHECK(report.max_term == doctest::Approx(0.0));
    CHECK(report.lipschitz == doctest::Approx(0.0));
    CHECK(report.holds);
}

TEST_CASE("check_prop3 holds on 200 seeded random instances (unit-scale slice of the 1000)") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed * 7 + 1);
        Network t = make_mlp(2, {4}, 3, LayerKind::sigmoid, rng);
        Network s = make_mlp(2, {3}, 3, LayerKind::sigmoid, rng);
        auto src = gaussian_cloud(rng, 50, 2);
        auto tgt = gaussian_cloud(rng, 10, 2);
        auto report = check_prop3(src, tgt, distillation_rho(t, s), MetricSpace::identity());
        CHECK(report.holds);
    }
}

TEST_CASE("check_prop3 works in a network feature space") {
    Rng rng(77);
    Network t = make_mlp(2, {4}, 3, LayerKind::sigmoid, rng);
    Network s = make_mlp(2, {3}, 3, LayerKind::sigmoid, rng);
    auto src = gaussian_cloud(rng, 20, 2);
    auto tgt = gaussian_cloud(rng, 6, 2);
    auto report = check_prop3(src, tgt, distillation_rho(t, s), MetricSpace::net_features(t));
    CHECK(report.holds);
    CHECK(report.hausdorff > 0.0);
}

TEST_CASE("superset monotonicity: empty extra gives equal values") {
    Rng rng(8);
    auto m = MetricSpace::identity();
    auto src = gaussian_cloud(rng, 10, 2);
    auto tgt = gaussian_cloud(rng, 4, 2);
    auto [before, after] = superset_monotonicity(src, tgt, {}, m);
    CHECK(before == after);
}

TEST_CASE("superset monotonicity: A={0,5}, B={1}, extra={4} gives 4 then 1") {
    auto m = MetricSpace::identity();
    auto [before, after] =
        superset_monotonicity(points_1d({0.0, 5.0}), points_1d({1.0}), points_1d({4.0}), m);
    CHECK(before == doctest::Approx(4.0));
    CHECK(after == doctest::Approx(1.0));
}

TEST_CASE("superset monotonicity: noisy copies of the target never increase H_a (100 seeds)") {
    auto m = MetricSpace::identity();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 31);
        auto src = gaussian_cloud(rng, 15, 2);
        auto tgt = gaussian_cloud(rng, 5, 2);
        std::vector<Tensor> extra;
        for (const auto& p : tgt) {
            Tensor q = p.clone();
            for (double& v : q.mutable_data()) v += 0.1 * rng.normal();
            extra.push_back(q);
        }
        auto [before, after] = superset_monotonicity(src, tgt, extra, m);
        CHECK(after <= before + 1e-15);
    }
}

TEST_CASE("bound report serializes the witness indices") {
    Rng rng(9);
    Network t = make_mlp(2, {3}, 2, LayerKind::sigmoid, rng);
    Network s = make_mlp(2, {2}, 2, LayerKind::sigmoid, rng);
    auto report = check_prop3(gaussian_cloud(rng, 6, 2), gaussian_cloud(rng, 3, 2),
                              distillation_rho(t, s), MetricSpace::identity());
    auto j = to_json(report);
    CHECK(j.contains("hausdorff_witness"));
    CHECK(j["holds"] == true);
    CHECK(j["slack"].get<double>() >= 0.0);
}
