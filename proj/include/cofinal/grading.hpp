#pragma once

#include <cstddef>
#include <vector>

namespace cofinal {

// Score-space arithmetic: a score in [0, S] decomposes into a coarse grade
// (span S_C points) and a sub-grade within the grade (span S_F points).
struct GradingScheme {
    double range = 100.0;     // S
    double grade_span = 10.0; // S_C
    double sub_span = 1.0;    // S_F
    std::size_t grades = 10;      // G  = ceil(S / S_C)
    std::size_t sub_grades = 10;  // G' = ceil(S_C / S_F)

    // Build from the three spans; grade counts are derived.
    static GradingScheme from_spans(double range, double grade_span,
                                    double sub_span);
    // Build from counts; spans are range/G and range/(G*G').
    static GradingScheme uniform(double range, std::size_t grades,
                                 std::size_t sub_grades);
};

struct GradePair {
    std::size_t grade = 0;
    std::size_t sub_grade = 0;
};

// grade = min(floor(s / S_C), G-1),
// sub   = min(floor((s - grade * S_C) / S_F), G'-1).
// The boundary s == S clamps into the top cell.
GradePair decompose(double score, const GradingScheme& scheme);

// grade_value * S_C + sub_grade_value * S_F, clamped to [0, S].
// Accepts fractional (soft) grade values.
double couple(double grade_value, double sub_grade_value,
              const GradingScheme& scheme);

// Linear rescaling between a dataset's native score range and the scheme's
// [0, S]; forward() also clamps into [0, S].
struct ScoreNormalizer {
    double observed_max = 1.0;
    double target_range = 1.0;  // S

    double forward(double raw) const;
    double inverse(double normalized) const;
};

ScoreNormalizer make_normalizer(const std::vector<double>& raw_scores,
                                double target_range);
ScoreNormalizer make_normalizer(double observed_max, double target_range);

}  // namespace cofinal
