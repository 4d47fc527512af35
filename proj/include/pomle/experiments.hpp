#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pomle/model.hpp"
#include "pomle/numerics.hpp"

namespace pomle {

// Initial-law choice for signal or filter, parsed from a config value:
// "uniform", "stationary", or an array of q coordinates (point mass).
struct NuChoice {
    enum Kind { Uniform, Stationary, Point } kind = Uniform;
    Vec point;

    bool operator==(const NuChoice& o) const {
        return kind == o.kind && point == o.point;
    }
};

struct ExperimentConfig {
    std::string kind;  // one of the recognized experiment kinds
    std::string family = "gradient-sine";
    ParameterSpace space;
    Vec theta_true;
    NuChoice nu;
    int grid_n = 128;
    double dt = 1e-3;
    std::vector<double> horizons;
    int replicas = 100;
    std::uint64_t seed = 0;
    std::string out = ".";

    bool operator==(const ExperimentConfig& o) const;
};

// Parses the JSON config; exact key set kind, family, space.points,
// space.metric, theta_true, nu, grid.n, dt, horizons, replicas, seed, out.
// Unknown keys are an error.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);

// Canonical JSON form; load(emit(cfg)) == cfg.
std::string emit_config(const ExperimentConfig& cfg);

// FNV-1a hash of the canonical form.
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct Verdict {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string table;   // which emitted table backs this verdict
    std::string detail;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<std::pair<std::string, std::string>> tables;  // name, path
    std::vector<Verdict> verdicts;
    std::string version;

    bool all_passed() const;
};

// Dispatches to the driver for cfg.kind. Writes CSV tables into cfg.out.
ExperimentReport run_experiment(const ExperimentConfig& cfg, int n_threads = 0);

// Writes <dir>/manifest.json (config, hash, seed, verdicts, table paths) and
// returns its path.
std::string write_report(const ExperimentReport& report, const std::string& dir);

// Realizes a NuChoice as a grid density (Stationary solves for the invariant
// law of the model built from theta).
GridDensity realize_nu(const NuChoice& nu, const ModelFamily& family,
                       const Vec& theta, const TorusGrid& grid);

extern const char* const kVersion;

}  // namespace pomle
