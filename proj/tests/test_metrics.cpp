#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "trackpool/metrics.hpp"
#include "trackpool/rng.hpp"

using namespace trackpool;

namespace {

// Independent AUC oracle: tie-corrected Mann-Whitney pair counting.
double mann_whitney_auc(const std::vector<ScoredPair>& pairs) {
    double wins = 0.0;
    std::size_t count = 0;
    for (const auto& m : pairs) {
        if (!m.is_match) continue;
        for (const auto& n : pairs) {
            if (n.is_match) continue;
            if (m.similarity > n.similarity)
                wins += 1.0;
            else if (m.similarity == n.similarity)
                wins += 0.5;
            ++count;
        }
    }
    return wins / static_cast<double>(count);
}

std::vector<ScoredPair> random_pairs(Rng& rng, bool with_ties) {
    const std::size_t n = 8 + rng.uniform_index(40);
    std::vector<ScoredPair> pairs;
    bool has_match = false, has_non = false;
    for (std::size_t i = 0; i < n; ++i) {
        double score = rng.normal();
        if (with_ties) score = std::round(score * 4.0) / 4.0;
        const bool match = rng.uniform() < 0.4;
        has_match |= match;
        has_non |= !match;
        pairs.push_back({score, match});
    }
    if (!has_match) pairs.push_back({rng.normal(), true});
    if (!has_non) pairs.push_back({rng.normal(), false});
    return pairs;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("perfect separation gives AUC 1 and full TAR") {
    std::vector<ScoredPair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back({0.9 + 0.001 * i, true});
    for (int i = 0; i < 10; ++i) pairs.push_back({0.1 + 0.001 * i, false});
    const RocCurve curve = roc(pairs);
    CHECK(curve.auc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(curve.tar_at_far(1e-6) == doctest::Approx(1.0));
    CHECK(curve.tar_at_far(1e-1) == doctest::Approx(1.0));
}

TEST_CASE("indistinguishable scores give AUC one half") {
    std::vector<ScoredPair> pairs;
    for (int i = 0; i < 20; ++i) pairs.push_back({0.5, i % 2 == 0});
    const RocCurve curve = roc(pairs);
    CHECK(curve.auc == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("hand-enumerated four-pair sweep") {
    const std::vector<ScoredPair> pairs = {
        {0.9, true}, {0.8, false}, {0.7, true}, {0.1, false}};
    const RocCurve curve = roc(pairs);
    CHECK(curve.auc == doctest::Approx(0.75).epsilon(1e-12));

    REQUIRE(curve.points.size() == 5);
    CHECK(curve.points[0].far == 0.0);
    CHECK(curve.points[0].tar == 0.0);
    CHECK(curve.points[1].tar == doctest::Approx(0.5));
    CHECK(curve.points[1].far == 0.0);
    CHECK(curve.points.back().far == 1.0);
    CHECK(curve.points.back().tar == 1.0);

    CHECK(curve.tar_at_far(0.0) == doctest::Approx(0.5));
    CHECK(curve.tar_at_far(0.5) == doctest::Approx(1.0));
}

TEST_CASE("degenerate pair sets are rejected") {
    CHECK_THROWS_AS(roc({{0.5, true}}), std::invalid_argument);
    CHECK_THROWS_AS(roc({{0.5, false}, {0.2, false}}), std::invalid_argument);
    CHECK_THROWS_AS(roc({}), std::invalid_argument);
}

TEST_CASE("sweep AUC equals the Mann-Whitney statistic") {
    Rng rng(111);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pairs = random_pairs(rng, trial % 2 == 0);
        const RocCurve curve = roc(pairs);
        CHECK(std::abs(curve.auc - mann_whitney_auc(pairs)) <= 1e-9);
    }
}

TEST_CASE("roc is invariant under strictly monotone score transforms") {
    Rng rng(112);
    const auto pairs = random_pairs(rng, false);
    const RocCurve base = roc(pairs);

    auto transformed = pairs;
    for (auto& p : transformed) p.similarity = std::atan(3.0 * p.similarity) + 7.0;
    const RocCurve mapped = roc(transformed);

    REQUIRE(base.points.size() == mapped.points.size());
    for (std::size_t i = 0; i < base.points.size(); ++i) {
        CHECK(base.points[i].far == mapped.points[i].far);
        CHECK(base.points[i].tar == mapped.points[i].tar);
    }
    CHECK(base.auc == doctest::Approx(mapped.auc).epsilon(1e-12));
}

TEST_CASE("tar_at_far is nondecreasing in the FAR level") {
    Rng rng(113);
    const RocCurve curve = roc(random_pairs(rng, false));
    double prev = -1.0;
    for (const double level : {0.0, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0}) {
        const double tar = curve.tar_at_far(level);
        CHECK(tar >= prev);
        prev = tar;
    }
}

TEST_CASE("rank1 trivial cases") {
    std::vector<LabeledTemplate> gallery = {
        {"a", {1.0, 0.0, 0.0}}, {"b", {0.0, 1.0, 0.0}}, {"c", {0.0, 0.0, 1.0}}};
    CHECK(rank1(gallery, gallery) == doctest::Approx(1.0));

    std::vector<LabeledTemplate> probe = {{"b", {0.05, 0.99, 0.0}}};
    CHECK(rank1(probe, gallery) == doctest::Approx(1.0));
}

TEST_CASE("rank1 counts one deliberate mismatch out of three") {
    const std::vector<LabeledTemplate> gallery = {
        {"a", {1.0, 0.0}}, {"b", {0.0, 1.0}}};
    const std::vector<LabeledTemplate> probes = {
        {"a", {0.9, 0.1}},
        {"b", {0.2, 0.8}},
        {"a", {0.1, 0.9}},  // lands on b
    };
    CHECK(rank1(probes, gallery) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("rank1 rejects duplicate gallery labels and empty sets") {
    const std::vector<LabeledTemplate> gallery = {
        {"a", {1.0, 0.0}}, {"a", {0.0, 1.0}}};
    const std::vector<LabeledTemplate> probes = {{"a", {1.0, 0.0}}};
    CHECK_THROWS_AS(rank1(probes, gallery), std::invalid_argument);
    CHECK_THROWS_AS(rank1({}, gallery), std::invalid_argument);
}

TEST_CASE("identity count MPE arithmetic") {
    CHECK(identity_count_mpe({3, 7, 2}, {3, 7, 2}) == 0.0);
    CHECK(identity_count_mpe({21}, {20}) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(identity_count_mpe({10, 19}, {10, 20}) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK_THROWS_AS(identity_count_mpe({1, 2}, {1}), std::invalid_argument);
    CHECK_THROWS_AS(identity_count_mpe({1}, {0}), std::invalid_argument);
    CHECK_THROWS_AS(identity_count_mpe({}, {}), std::invalid_argument);
}

TEST_CASE("report renders key=value lines") {
    EvalReport report;
    report.tar_at_far[1e-6] = 0.875;
    report.auc = 0.991;
    report.rank1 = 0.75;
    const std::string text = report.to_text();
    CHECK(text.find("tar_at_far@1e-06=0.875\n") != std::string::npos);
    CHECK(text.find("auc=0.991\n") != std::string::npos);
    CHECK(text.find("rank1=0.75\n") != std::string::npos);
    CHECK(text.find("icpg") == std::string::npos);
}

TEST_CASE("roc csv starts with a header") {
    const RocCurve curve = roc({{0.9, true}, {0.1, false}});
    const std::string csv = roc_to_csv(curve);
    CHECK(csv.rfind("far,tar\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') ==
          static_cast<long>(curve.points.size()) + 1);
}

}  // TEST_SUITE
