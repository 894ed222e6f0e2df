#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace rre {

struct LatencyRow {
    std::size_t k = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double ratio_vs_baseline = 0.0;  // 0 when no baseline requested
};

struct LatencyReport {
    std::vector<LatencyRow> rows;
    std::size_t batch_size = 0;
    std::size_t repetitions = 0;
    std::optional<std::size_t> baseline_k;
};

namespace detail {

inline double percentile(std::vector<double> sorted_samples, double q) {
    // Nearest-rank on the sorted samples.
    const std::size_t n = sorted_samples.size();
    const std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    return sorted_samples[std::min(n - 1, rank == 0 ? 0 : rank - 1)];
}

}  // namespace detail

/// Wall-clock per-example latency of `workload(k)` (one call = one batch of
/// batch_size examples). One warm-up call per k is excluded. When a baseline
/// k is given, each row reports its mean relative to the baseline mean.
inline LatencyReport bench_latency(const std::function<void(std::size_t)>& workload,
                                   const std::vector<std::size_t>& k_values,
                                   std::size_t batch_size, std::size_t repetitions,
                                   std::optional<std::size_t> baseline_k = 50) {
    if (!workload) throw std::invalid_argument("bench_latency: empty workload");
    if (k_values.empty()) throw std::invalid_argument("bench_latency: empty k list");
    if (batch_size == 0 || repetitions == 0)
        throw std::invalid_argument("bench_latency: batch_size and repetitions must be >= 1");
    if (baseline_k &&
        std::find(k_values.begin(), k_values.end(), *baseline_k) == k_values.end())
        throw std::invalid_argument("bench_latency: relative reporting needs k=" +
                                    std::to_string(*baseline_k) + " in the k list");

    LatencyReport report;
    report.batch_size = batch_size;
    report.repetitions = repetitions;
    report.baseline_k = baseline_k;

    using clock = std::chrono::steady_clock;
    for (std::size_t k : k_values) {
        workload(k);  // warm-up, untimed
        std::vector<double> per_example_ms;
        per_example_ms.reserve(repetitions);
        for (std::size_t r = 0; r < repetitions; ++r) {
            const auto t0 = clock::now();
            workload(k);
            const auto t1 = clock::now();
            const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            per_example_ms.push_back(ms / static_cast<double>(batch_size));
        }
        double sum = 0.0;
        for (double v : per_example_ms) sum += v;
        std::sort(per_example_ms.begin(), per_example_ms.end());
        LatencyRow row;
        row.k = k;
        row.mean_ms = sum / static_cast<double>(per_example_ms.size());
        row.p50_ms = detail::percentile(per_example_ms, 0.50);
        row.p95_ms = detail::percentile(per_example_ms, 0.95);
        report.rows.push_back(row);
    }

    if (baseline_k) {
        double base_mean = 0.0;
        for (const auto& row : report.rows)
            if (row.k == *baseline_k) base_mean = row.mean_ms;
        for (auto& row : report.rows)
            row.ratio_vs_baseline = base_mean > 0.0 ? row.mean_ms / base_mean : 0.0;
    }
    return report;
}

inline nlohmann::json latency_report_json(const LatencyReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        nlohmann::json row{{"k", r.k},
                           {"mean_ms", r.mean_ms},
                           {"p50_ms", r.p50_ms},
                           {"p95_ms", r.p95_ms}};
        if (report.baseline_k) row["ratio_vs_" + std::to_string(*report.baseline_k)] = r.ratio_vs_baseline;
        rows.push_back(row);
    }
    return nlohmann::json{{"batch_size", report.batch_size},
                          {"repetitions", report.repetitions},
                          {"rows", rows}};
}

}  // namespace rre
