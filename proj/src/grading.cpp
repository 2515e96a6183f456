#include "cofinal/grading.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cofinal/errors.hpp"

namespace cofinal {

namespace {

void validate(const GradingScheme& s) {
    if (!(s.sub_span > 0.0 && s.sub_span <= s.grade_span && s.grade_span <= s.range)) {
        throw ConfigError("GradingScheme: need 0 < S_F <= S_C <= S");
    }
    if (s.grades < 2 || s.sub_grades < 2) {
        throw ConfigError("GradingScheme: need G >= 2 and G' >= 2");
    }
    if (static_cast<double>(s.grades) * s.grade_span < s.range - 1e-9) {
        throw ConfigError("GradingScheme: G * S_C must cover the score range");
    }
}

// ceil with a guard against 10.000000000000002-style artifacts.
std::size_t safe_ceil(double x) {
    return static_cast<std::size_t>(std::ceil(x - 1e-9));
}

}  // namespace

GradingScheme GradingScheme::from_spans(double range, double grade_span,
                                        double sub_span) {
    GradingScheme s;
    s.range = range;
    s.grade_span = grade_span;
    s.sub_span = sub_span;
    s.grades = safe_ceil(range / grade_span);
    s.sub_grades = safe_ceil(grade_span / sub_span);
    validate(s);
    return s;
}

GradingScheme GradingScheme::uniform(double range, std::size_t grades,
                                     std::size_t sub_grades) {
    GradingScheme s;
    s.range = range;
    s.grades = grades;
    s.sub_grades = sub_grades;
    s.grade_span = range / static_cast<double>(grades);
    s.sub_span = s.grade_span / static_cast<double>(sub_grades);
    validate(s);
    return s;
}

GradePair decompose(double score, const GradingScheme& scheme) {
    if (!(score >= 0.0 && score <= scheme.range)) {
        throw RangeError("decompose: score " + std::to_string(score) +
                         " outside [0, " + std::to_string(scheme.range) + "]");
    }
    GradePair out;
    out.grade = std::min<std::size_t>(
        static_cast<std::size_t>(std::floor(score / scheme.grade_span)),
        scheme.grades - 1);
    const double residual = score - static_cast<double>(out.grade) * scheme.grade_span;
    out.sub_grade = std::min<std::size_t>(
        static_cast<std::size_t>(std::floor(std::max(residual, 0.0) / scheme.sub_span)),
        scheme.sub_grades - 1);
    return out;
}

double couple(double grade_value, double sub_grade_value,
              const GradingScheme& scheme) {
    const double s = grade_value * scheme.grade_span + sub_grade_value * scheme.sub_span;
    return std::clamp(s, 0.0, scheme.range);
}

double ScoreNormalizer::forward(double raw) const {
    return std::clamp(raw * target_range / observed_max, 0.0, target_range);
}

double ScoreNormalizer::inverse(double normalized) const {
    return normalized * observed_max / target_range;
}

ScoreNormalizer make_normalizer(double observed_max, double target_range) {
    if (!(observed_max > 0.0)) {
        throw ConfigError("make_normalizer: observed_max must be positive");
    }
    return ScoreNormalizer{observed_max, target_range};
}

ScoreNormalizer make_normalizer(const std::vector<double>& raw_scores,
                                double target_range) {
    double mx = 0.0;
    for (double s : raw_scores) mx = std::max(mx, s);
    return make_normalizer(mx, target_range);
}

}  // namespace cofinal
