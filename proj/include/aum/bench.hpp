#pragma once

#include <map>
#include <string>
#include <vector>

#include "aum/array.hpp"

namespace aum {

struct BenchRow {
    std::string model;
    std::size_t tokens = 0;
    double fwd_ms = 0.0;
    double fwdbwd_ms = 0.0;
    std::size_t peak_bytes = 0;
    std::string status = "ok";  // ok | dnf
    bool ok() const { return status == "ok"; }
};

struct ScalingReport {
    std::vector<BenchRow> rows;
    std::map<std::string, double> slopes;  // log-log slope of fwd time vs tokens
    std::string environment;
};

struct BenchConfig {
    std::vector<std::string> models;       // aum-s, aum-b, attn-s, attn-b
    std::vector<std::size_t> token_counts; // strictly increasing
    std::size_t reps = 3;                  // timed repetitions (median reported)
    std::size_t warmup = 2;
    std::size_t mem_limit_bytes = 2ull << 30;  // 0 = unlimited
    std::uint64_t seed = 0;
};

// Times one block per model label over the token sweep, single-threaded.
// Out-of-memory (allocation limit) becomes a DNF row; once a model DNFs it
// stays DNF for all larger token counts.
ScalingReport measure(const BenchConfig& cfg);

// Least-squares slope of log(fwd time) vs log(tokens) over non-DNF rows.
double fit_exponent(const ScalingReport& report, const std::string& model);

void write_scaling_csv(const ScalingReport& report, const std::string& path);
void write_gnuplot_data(const ScalingReport& report, const std::string& path);

}  // namespace aum
