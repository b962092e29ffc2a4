#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffedit/config.hpp"
#include "diffedit/data.hpp"
#include "diffedit/guidance.hpp"

namespace diffedit {

struct Check {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    std::string relation;  // how value compares to threshold when passing: "<", "<=", ">=", "=="
    bool pass = false;
};

struct SuiteReport {
    std::string suite;
    std::vector<Check> checks;
    double seconds = 0.0;

    bool pass() const;
    Json to_json() const;
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    int denoiser_steps = 20000;
    int prompt_steps = 6000;
    std::size_t blob_runs = 20;
    std::function<void(const std::string&)> log;
};

const std::vector<std::string>& suite_names();
/// Throws ConfigError for an unknown suite.
SuiteReport run_suite(const std::string& name, const VerifyOptions& opts = {});

/// One randomized blob-move instance on a square grid.
struct BlobMoveCase {
    Tensor source;
    int src_row = 0;
    int src_col = 0;
    int dst_row = 0;
    int dst_col = 0;
    EditSpec spec;
};

/// Source blob in the central band, target 6 to 10 pixels away, mask radius 6.
BlobMoveCase make_blob_move_case(std::uint64_t seed, std::size_t size = 32);
/// Prior of the analytic denoiser used for blob moves.
GmmPrior blob_move_prior(std::size_t size = 32);

struct MoveMetrics {
    double centroid_error = 0.0;
    double in_mask_mse = 0.0;   // vs. the source
    double out_mask_mse = 0.0;  // vs. the source
    bool pass() const { return centroid_error < 1.5 && out_mask_mse < 0.1 * in_mask_mse; }
};

MoveMetrics move_metrics(const Tensor& edited, const BlobMoveCase& c);

} // namespace diffedit
