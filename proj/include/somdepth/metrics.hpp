#pragma once

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "somdepth/losses.hpp"
#include "somdepth/tensor.hpp"

namespace somdepth {

// The six evaluation statistics (threshold accuracies share one field each).
struct MetricsReport {
    double abs_rel = 0.0;
    double sq_rel = 0.0;
    double rmse = 0.0;
    double rmse_log = 0.0;
    double avg_log10 = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
};

// Statistics over all pixels. Follows the printed formulas, including the
// division by the *predicted* depth in abs_rel / sq_rel; comparisons against
// numbers computed with the ground-truth-denominator convention need care.
inline MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt) {
    detail::check_same_shape("compute_metrics", pred, gt);
    const auto& p = pred.values();
    const auto& g = gt.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] > 0.0) || !(g[i] > 0.0)) {
            throw std::invalid_argument("compute_metrics: non-positive depth at flat index " +
                                        std::to_string(i));
        }
    }
    const double n = static_cast<double>(p.size());
    MetricsReport r;
    double sq_acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double diff = g[i] - p[i];
        r.abs_rel += std::fabs(diff) / p[i];
        r.sq_rel += diff * diff / p[i];
        sq_acc += diff * diff;
        r.avg_log10 += std::fabs(std::log10(g[i]) - std::log10(p[i]));
        const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
        if (ratio < 1.25) r.delta1 += 1.0;
        if (ratio < 1.25 * 1.25) r.delta2 += 1.0;
        if (ratio < 1.25 * 1.25 * 1.25) r.delta3 += 1.0;
    }
    r.abs_rel /= n;
    r.sq_rel /= n;
    r.rmse = std::sqrt(sq_acc / n);
    r.avg_log10 /= n;
    r.delta1 /= n;
    r.delta2 /= n;
    r.delta3 /= n;
    // shared formula with the training objective, bitwise
    r.rmse_log = l_depth(pred, gt).value();
    return r;
}

// Nearest-neighbor enlargement to the ground-truth resolution.
inline Tensor upsample_prediction(const Tensor& lowres, int H, int W) {
    const Shape& s = lowres.shape();
    if (H < s.height() || W < s.width() || H % s.height() != 0 || W % s.width() != 0) {
        throw std::invalid_argument("upsample_prediction: target " + std::to_string(H) + "x" +
                                    std::to_string(W) + " is not an integer multiple of " +
                                    s.str());
    }
    const int fh = H / s.height(), fw = W / s.width();
    Tensor out = Tensor::zeros(Shape(s.batch(), s.channels(), H, W));
    for (int b = 0; b < s.batch(); ++b) {
        for (int c = 0; c < s.channels(); ++c) {
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    out.at(b, c, h, w) = lowres.at(b, c, h / fh, w / fw);
                }
            }
        }
    }
    return out;
}

// Aggregation rule across samples: plain mean of each statistic.
inline MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("average_reports: no reports");
    MetricsReport m;
    for (const MetricsReport& r : reports) {
        m.abs_rel += r.abs_rel;
        m.sq_rel += r.sq_rel;
        m.rmse += r.rmse;
        m.rmse_log += r.rmse_log;
        m.avg_log10 += r.avg_log10;
        m.delta1 += r.delta1;
        m.delta2 += r.delta2;
        m.delta3 += r.delta3;
    }
    const double n = static_cast<double>(reports.size());
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse /= n;
    m.rmse_log /= n;
    m.avg_log10 /= n;
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    return m;
}

inline std::string format_report(const std::vector<MetricsReport>& reports,
                                 const std::vector<std::string>& labels) {
    if (reports.size() != labels.size()) {
        throw std::invalid_argument("format_report: " + std::to_string(reports.size()) +
                                    " reports vs " + std::to_string(labels.size()) + " labels");
    }
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-16s%9s%9s%9s%10s%9s%9s%9s%9s", "", "Rel", "Sq Rel", "RMSE",
                  "RMSE_log", "log10", "d1", "d2", "d3");
    os << buf << "\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const MetricsReport& r = reports[i];
        std::snprintf(buf, sizeof(buf), "%-16s%9.4f%9.4f%9.4f%10.4f%9.4f%9.4f%9.4f%9.4f",
                      labels[i].c_str(), r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.avg_log10,
                      r.delta1, r.delta2, r.delta3);
        os << buf << "\n";
    }
    return os.str();
}

inline std::string report_csv(const std::vector<MetricsReport>& reports,
                              const std::vector<std::string>& labels) {
    if (reports.size() != labels.size()) {
        throw std::invalid_argument("report_csv: size mismatch");
    }
    std::ostringstream os;
    os << "label,abs_rel,sq_rel,rmse,rmse_log,avg_log10,delta1,delta2,delta3\n";
    os.precision(17);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const MetricsReport& r = reports[i];
        os << labels[i] << "," << r.abs_rel << "," << r.sq_rel << "," << r.rmse << ","
           << r.rmse_log << "," << r.avg_log10 << "," << r.delta1 << "," << r.delta2 << ","
           << r.delta3 << "\n";
    }
    return os.str();
}

}  // namespace somdepth
