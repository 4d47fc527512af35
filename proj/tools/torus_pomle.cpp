#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pomle/experiments.hpp"
#include "pomle/filter.hpp"
#include "pomle/metrics.hpp"
#include "pomle/mle.hpp"
#include "pomle/model.hpp"
#include "pomle/sde.hpp"

namespace {

using pomle::ExperimentConfig;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    int threads = 0;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
    auto* c = cmd->add_option("--config", opts.config_path, "Config file (JSON)");
    if (config_required) c->required();
    cmd->add_option("--override", opts.overrides,
                    "Override a config key, dotted path K=V (repeatable)");
    cmd->add_option("--threads", opts.threads,
                    "Worker threads (default: logical cores)");
    cmd->add_option("--out", opts.out, "Output directory (overrides config)");
}

// Loads the config file, applies the seed env var and then the --override
// flags, and reparses. Precedence: --override > TORUS_POMLE_SEED > file.
ExperimentConfig resolve_config(const CommonOpts& opts) {
    std::ifstream in(opts.config_path);
    if (!in)
        throw std::runtime_error("config file not found: " + opts.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("config parse error: ") + e.what());
    }

    if (const char* env = std::getenv("TORUS_POMLE_SEED"))
        j["seed"] = static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));

    for (const std::string& kv : opts.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::runtime_error("bad --override, expected K=V: " + kv);
        std::string key = kv.substr(0, eq);
        std::string val = kv.substr(eq + 1);
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(val);
        } catch (const nlohmann::json::parse_error&) {
            parsed = val;  // plain string value
        }
        nlohmann::json* node = &j;
        std::size_t pos = 0;
        while (true) {
            auto dot = key.find('.', pos);
            std::string part = key.substr(pos, dot - pos);
            if (dot == std::string::npos) {
                (*node)[part] = parsed;
                break;
            }
            node = &(*node)[part];
            pos = dot + 1;
        }
    }

    ExperimentConfig cfg = pomle::parse_config(j.dump());
    if (!opts.out.empty()) cfg.out = opts.out;
    return cfg;
}

pomle::ObservationRecord make_record(const ExperimentConfig& cfg,
                                     const std::string& record_path,
                                     const pomle::DiffusionModel& model,
                                     const pomle::TorusGrid& grid,
                                     bool keep_hidden) {
    if (!record_path.empty())
        return pomle::ObservationRecord::load_binary(record_path);
    pomle::SimulationConfig sc;
    sc.dt_sim = cfg.dt;
    sc.T = cfg.horizons.empty() ? 10.0 : cfg.horizons.back();
    sc.seed = cfg.seed;
    sc.initial_density = pomle::stationary_density(model, grid, 1e-10);
    return pomle::simulate_signal_observation(model, sc, keep_hidden);
}

int cmd_simulate(const CommonOpts& opts) {
    ExperimentConfig cfg = resolve_config(opts);
    pomle::ModelFamily fam = pomle::get_family(cfg.family);
    pomle::DiffusionModel model =
        pomle::make_model(fam, pomle::ParameterPoint{cfg.theta_true});
    pomle::TorusGrid grid(model.q, cfg.grid_n);
    pomle::ObservationRecord obs = make_record(cfg, "", model, grid, true);
    std::filesystem::create_directories(cfg.out);
    auto dir = std::filesystem::path(cfg.out);
    obs.save_csv((dir / "record.csv").string());
    obs.save_binary((dir / "record.bin").string(), model.q, model.m);
    std::printf("wrote %s (%zu steps, dt=%g)\n",
                (dir / "record.csv").string().c_str(), obs.steps(), obs.dt());
    return 0;
}

int cmd_filter(const CommonOpts& opts, const std::string& record_path) {
    ExperimentConfig cfg = resolve_config(opts);
    pomle::ModelFamily fam = pomle::get_family(cfg.family);
    pomle::DiffusionModel model =
        pomle::make_model(fam, pomle::ParameterPoint{cfg.theta_true});
    pomle::TorusGrid grid(model.q, cfg.grid_n);
    pomle::ObservationRecord obs =
        make_record(cfg, record_path, model, grid, false);
    pomle::GridDensity nu =
        pomle::realize_nu(cfg.nu, fam, cfg.theta_true, grid);
    pomle::FilterTrajectory traj = pomle::run_filter(model, nu, obs, 10);

    std::filesystem::create_directories(cfg.out);
    std::string path =
        (std::filesystem::path(cfg.out) / "filter_means.csv").string();
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot write " + path);
    std::fprintf(fp, "t");
    for (int jm = 0; jm < model.m; ++jm) std::fprintf(fp, ",mean_%d", jm);
    std::fprintf(fp, ",logL\n");
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        std::fprintf(fp, "%.10g", traj.times[k]);
        for (double mv : traj.means[k]) std::fprintf(fp, ",%.17g", mv);
        std::fprintf(fp, ",%.17g\n", traj.log_likelihood[k]);
    }
    std::fclose(fp);
    std::printf("wrote %s (final logL %.6f)\n", path.c_str(),
                traj.log_likelihood.back());
    return 0;
}

pomle::LikelihoodSurface surface_for(const ExperimentConfig& cfg,
                                     const std::string& record_path,
                                     int threads) {
    if (cfg.space.points.empty())
        throw std::runtime_error("config needs a non-empty space.points");
    pomle::ModelFamily fam = pomle::get_family(cfg.family);
    pomle::DiffusionModel model =
        pomle::make_model(fam, pomle::ParameterPoint{cfg.theta_true});
    pomle::TorusGrid grid(model.q, cfg.grid_n);
    pomle::ObservationRecord obs =
        make_record(cfg, record_path, model, grid, false);
    pomle::GridDensity nu =
        pomle::realize_nu(cfg.nu, fam, cfg.theta_true, grid);
    std::vector<double> checkpoints = cfg.horizons;
    if (checkpoints.empty()) checkpoints = {obs.horizon()};
    return pomle::likelihood_surface(fam, cfg.space, nu, obs, checkpoints,
                                     threads);
}

int cmd_likelihood(const CommonOpts& opts, const std::string& record_path) {
    ExperimentConfig cfg = resolve_config(opts);
    pomle::LikelihoodSurface surf =
        surface_for(cfg, record_path, opts.threads);
    std::filesystem::create_directories(cfg.out);
    std::string path =
        (std::filesystem::path(cfg.out) / "likelihood_surface.csv").string();
    surf.save_csv(path);
    std::printf("wrote %s (%zu checkpoints x %zu hypotheses)\n", path.c_str(),
                surf.times.size(), surf.space.size());
    return 0;
}

int cmd_mle(const CommonOpts& opts, const std::string& record_path) {
    ExperimentConfig cfg = resolve_config(opts);
    pomle::LikelihoodSurface surf =
        surface_for(cfg, record_path, opts.threads);
    std::filesystem::create_directories(cfg.out);
    std::string spath =
        (std::filesystem::path(cfg.out) / "likelihood_surface.csv").string();
    surf.save_csv(spath);
    pomle::MleResult res = pomle::mle_estimate(surf, surf.times.back());
    std::string path = (std::filesystem::path(cfg.out) / "mle.csv").string();
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot write " + path);
    std::fprintf(fp, "t,index,ties,theta_hat\n%.10g,%zu,%zu,\"", surf.times.back(),
                 res.index, res.ties.size());
    for (std::size_t i = 0; i < res.point.coords.size(); ++i)
        std::fprintf(fp, "%s%.17g", i ? " " : "", res.point.coords[i]);
    std::fprintf(fp, "\"\n");
    std::fclose(fp);
    std::printf("theta_hat (index %zu%s):", res.index,
                res.ties.size() > 1 ? ", tied" : "");
    for (double c : res.point.coords) std::printf(" %g", c);
    std::printf("\n");
    return 0;
}

int cmd_experiment(const CommonOpts& opts) {
    ExperimentConfig cfg = resolve_config(opts);
    pomle::ExperimentReport rep = pomle::run_experiment(cfg, opts.threads);
    std::string manifest = pomle::write_report(rep, cfg.out);
    for (const auto& v : rep.verdicts)
        std::printf("%-40s %s  (value %.6g, threshold %.6g)\n", v.name.c_str(),
                    v.passed ? "PASS" : "FAIL", v.value, v.threshold);
    std::printf("manifest: %s\n", manifest.c_str());
    return rep.all_passed() ? 0 : 1;
}

int cmd_verify_model(const CommonOpts& opts, const std::string& family_name,
                     const std::string& theta_csv) {
    std::string family = family_name;
    pomle::Vec theta;
    if (!opts.config_path.empty()) {
        ExperimentConfig cfg = resolve_config(opts);
        family = cfg.family;
        theta = cfg.theta_true;
    }
    if (!theta_csv.empty()) {
        theta.clear();
        std::stringstream ss(theta_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) theta.push_back(std::stod(tok));
    }
    pomle::ModelFamily fam = pomle::get_family(family);
    if (theta.empty())
        throw std::runtime_error("verify-model needs --theta or --config");
    pomle::DiffusionModel model =
        pomle::make_model(fam, pomle::ParameterPoint{theta});
    pomle::AssumptionReport rep = pomle::verify_assumptions(model, 4096);
    for (const auto& c : rep.checks)
        std::printf("%-28s %s  (worst violation %.3g)\n", c.name.c_str(),
                    c.passed ? "PASS" : "FAIL", c.worst_violation);
    return rep.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Filtering and maximum-likelihood estimation for partially "
                 "observed torus diffusions"};
    app.require_subcommand(1);

    CommonOpts o_sim, o_flt, o_lik, o_mle, o_exp, o_ver;
    std::string rec_flt, rec_lik, rec_mle;
    std::string ver_family = "gradient-sine", ver_theta;

    auto* sim = app.add_subcommand("simulate", "Simulate a signal/observation record");
    add_common(sim, o_sim, true);
    auto* flt = app.add_subcommand("filter", "Run the splitting filter");
    add_common(flt, o_flt, true);
    flt->add_option("--record", rec_flt, "Observation record (binary)");
    auto* lik = app.add_subcommand("likelihood", "Likelihood surface over the space");
    add_common(lik, o_lik, true);
    lik->add_option("--record", rec_lik, "Observation record (binary)");
    auto* mle = app.add_subcommand("mle", "Maximum likelihood estimate");
    add_common(mle, o_mle, true);
    mle->add_option("--record", rec_mle, "Observation record (binary)");
    auto* exp = app.add_subcommand("experiment", "Run a named experiment");
    add_common(exp, o_exp, true);
    auto* ver = app.add_subcommand("verify-model", "Check model assumptions");
    add_common(ver, o_ver, false);
    ver->add_option("--family", ver_family, "Model family name");
    ver->add_option("--theta", ver_theta, "Comma-separated parameter coordinates");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(o_sim);
        if (flt->parsed()) return cmd_filter(o_flt, rec_flt);
        if (lik->parsed()) return cmd_likelihood(o_lik, rec_lik);
        if (mle->parsed()) return cmd_mle(o_mle, rec_mle);
        if (exp->parsed()) return cmd_experiment(o_exp);
        if (ver->parsed()) return cmd_verify_model(o_ver, ver_family, ver_theta);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
