#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trackpool/linalg.hpp"

namespace trackpool {

struct ScoredPair {
    double similarity;
    bool is_match;
};

struct RocPoint {
    double far;
    double tar;
};

struct RocCurve {
    std::vector<RocPoint> points;  // FAR ascending, from (0,0) to (1,1)
    double auc = 0.0;

    // Step interpolation: max TAR over operating points with FAR <= level.
    double tar_at_far(double level) const;
};

// Threshold sweep over all distinct scores (accept when similarity >=
// threshold). AUC by trapezoidal integration. Needs at least one match and
// one non-match.
RocCurve roc(const std::vector<ScoredPair>& pairs);

struct LabeledTemplate {
    std::string label;
    Vector embedding;
};

// Fraction of probes whose cosine-nearest gallery template shares the probe
// label. Gallery labels must be unique; similarity ties go to the lower
// gallery index.
double rank1(const std::vector<LabeledTemplate>& probes,
             const std::vector<LabeledTemplate>& gallery);

// Mean over videos of |predicted - true| / true * 100.
double identity_count_mpe(const std::vector<std::size_t>& predicted,
                          const std::vector<std::size_t>& truth);

struct EvalReport {
    std::map<double, double> tar_at_far;
    double auc = 0.0;
    std::optional<double> rank1;
    std::optional<double> icpg;
    std::optional<double> mpe;

    // key=value lines, one metric per line.
    std::string to_text() const;
};

std::string roc_to_csv(const RocCurve& curve);

}  // namespace trackpool
