#include "trackpool/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace trackpool {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

double RocCurve::tar_at_far(double level) const {
    double best = 0.0;
    for (const auto& p : points)
        if (p.far <= level) best = std::max(best, p.tar);
    return best;
}

RocCurve roc(const std::vector<ScoredPair>& pairs) {
    std::size_t n_match = 0, n_non = 0;
    for (const auto& p : pairs) (p.is_match ? n_match : n_non)++;
    if (n_match == 0 || n_non == 0)
        throw std::invalid_argument("roc: need at least one match and one non-match (" +
                                    std::to_string(n_match) + " matches, " +
                                    std::to_string(n_non) + " non-matches)");

    std::vector<ScoredPair> sorted = pairs;
    std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) {
        return a.similarity > b.similarity;
    });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0});  // threshold above every score
    std::size_t acc_match = 0, acc_non = 0;
    std::size_t i = 0;
    // One operating point per distinct score; equal scores are accepted
    // together, which makes the trapezoid equal to the tie-corrected
    // Mann-Whitney statistic.
    while (i < sorted.size()) {
        const double score = sorted[i].similarity;
        while (i < sorted.size() && sorted[i].similarity == score) {
            (sorted[i].is_match ? acc_match : acc_non)++;
            ++i;
        }
        curve.points.push_back({static_cast<double>(acc_non) / n_non,
                                static_cast<double>(acc_match) / n_match});
    }

    for (std::size_t p = 1; p < curve.points.size(); ++p) {
        const auto& a = curve.points[p - 1];
        const auto& b = curve.points[p];
        curve.auc += (b.far - a.far) * (a.tar + b.tar) * 0.5;
    }
    return curve;
}

double rank1(const std::vector<LabeledTemplate>& probes,
             const std::vector<LabeledTemplate>& gallery) {
    if (probes.empty() || gallery.empty())
        throw std::invalid_argument("rank1: empty probe or gallery set");
    std::set<std::string> labels;
    for (const auto& g : gallery)
        if (!labels.insert(g.label).second)
            throw std::invalid_argument("rank1: duplicate gallery label '" + g.label + "'");

    std::size_t correct = 0;
    for (const auto& probe : probes) {
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            const double sim = cosine_similarity(probe.embedding, gallery[g].embedding);
            if (sim > best_sim) {
                best_sim = sim;
                best = g;
            }
        }
        if (gallery[best].label == probe.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probes.size());
}

double identity_count_mpe(const std::vector<std::size_t>& predicted,
                          const std::vector<std::size_t>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("identity_count_mpe: length mismatch (" +
                                    std::to_string(predicted.size()) + " vs " +
                                    std::to_string(truth.size()) + ")");
    if (predicted.empty())
        throw std::invalid_argument("identity_count_mpe: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (truth[i] == 0)
            throw std::invalid_argument("identity_count_mpe: true count is zero at " +
                                        std::to_string(i));
        const double diff = static_cast<double>(predicted[i]) > truth[i]
                                ? static_cast<double>(predicted[i] - truth[i])
                                : static_cast<double>(truth[i] - predicted[i]);
        sum += diff / static_cast<double>(truth[i]);
    }
    return 100.0 * sum / static_cast<double>(predicted.size());
}

std::string EvalReport::to_text() const {
    std::string out;
    for (const auto& [far, tar] : tar_at_far)
        out += "tar_at_far@" + fmt_double(far) + "=" + fmt_double(tar) + "\n";
    out += "auc=" + fmt_double(auc) + "\n";
    if (rank1) out += "rank1=" + fmt_double(*rank1) + "\n";
    if (icpg) out += "icpg=" + fmt_double(*icpg) + "\n";
    if (mpe) out += "mpe=" + fmt_double(*mpe) + "\n";
    return out;
}

std::string roc_to_csv(const RocCurve& curve) {
    std::string out = "far,tar\n";
    for (const auto& p : curve.points)
        out += fmt_double(p.far) + "," + fmt_double(p.tar) + "\n";
    return out;
}

}  // namespace trackpool
