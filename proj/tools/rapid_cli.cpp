#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rapid/analysis.hpp"
#include "rapid/simnet.hpp"
#include "rapid/topology.hpp"

namespace fs = std::filesystem;
using namespace rapid;

namespace {

struct CommonFlags {
    int n = 100;
    int k = 10;
    int h = 9;
    int l = 3;
    uint64_t seed = 1;
    Tick duration = 200;
    std::string mode = "decentralized";
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_scenario_flags = true) {
    cmd->set_help_flag("--help", "print this help message");  // frees -h/--h
    cmd->add_option("--n", f.n, "cluster size");
    cmd->add_option("--k", f.k, "rings / observers per subject");
    cmd->add_option("--seed", f.seed, "RNG seed (RAPID_SEED overrides)");
    cmd->add_option("--out", f.out, "output directory for artifacts");
    if (with_scenario_flags) {
        cmd->add_option("--h", f.h, "high watermark");
        cmd->add_option("--l", f.l, "low watermark");
        cmd->add_option("--duration", f.duration, "run length in ticks");
        cmd->add_option("--mode", f.mode, "decentralized | centralized")
            ->check(CLI::IsMember({"decentralized", "centralized"}));
    }
}

void apply_env_seed(CommonFlags& f) {
    if (const char* env = std::getenv("RAPID_SEED")) {
        try {
            f.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw CLI::ValidationError("RAPID_SEED", "must be an unsigned integer");
        }
    }
}

ProtocolParams params_of(const CommonFlags& f) {
    ProtocolParams p;
    p.k = f.k;
    p.h = f.h;
    p.l = f.l;
    p.validate();
    return p;
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ProtocolError("cannot open " + path.string() + " for writing");
    out << bytes;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ProtocolError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int run_scenario_cmd(Scenario sc, const CommonFlags& f, const char* name) {
    sc.mode = f.mode == "centralized" ? RunMode::kCentralized : RunMode::kDecentralized;
    RunReport report = run(sc);
    std::cout << name << ": unique_sizes=" << report.unique_sizes.size()
              << ", agreement=" << (report.agreement_ok ? "OK" : "VIOLATED")
              << ", conflicts=" << report.conflicts
              << ", classic_rounds=" << report.classic_rounds << "\n";
    if (!f.out.empty()) {
        fs::create_directories(f.out);
        write_file(fs::path(f.out) / "scenario.json", canonical_bytes(Json(sc)) + "\n");
        write_file(fs::path(f.out) / "timeseries.csv", report.timeseries_csv);
        write_file(fs::path(f.out) / "summary.json", report.summary_text() + "\n");
        std::cout << "artifacts written to " << f.out << "\n";
    }
    return report.agreement_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rapid: expander-monitored membership runner"};
    app.require_subcommand(1);

    CommonFlags f;

    // bootstrap
    auto* boot = app.add_subcommand("bootstrap", "single seed absorbs n-1 joiners");
    add_common(boot, f);

    // crash
    int fail_count = 10;
    auto* crash = app.add_subcommand("crash", "simultaneous crash of --fail nodes");
    add_common(crash, f);
    crash->add_option("--fail", fail_count, "number of nodes crashed at tick 50");

    // partition
    int minority = 25;
    Tick heal_at = 150;
    auto* part = app.add_subcommand("partition", "two-sided partition, healed at --heal-at");
    add_common(part, f);
    part->add_option("--minority", minority, "minority side size");
    part->add_option("--heal-at", heal_at, "tick at which the partition heals");

    // loss
    int victims = 1;
    double drop = 0.8;
    auto* loss = app.add_subcommand("loss", "asymmetric egress loss on --victims nodes");
    add_common(loss, f);
    loss->add_option("--victims", victims, "number of lossy nodes");
    loss->add_option("--drop", drop, "egress drop probability")->check(CLI::Range(0.0, 1.0));

    // sensitivity
    int reps = 20;
    bool serial = false;
    auto* sens = app.add_subcommand("sensitivity", "watermark conflict-rate sweep");
    add_common(sens, f, false);
    sens->add_option("--reps", reps, "repetitions per (H,L,F) cell");
    sens->add_flag("--serial", serial, "disable the parallel fan-out");

    // spectral
    int seeds = 20;
    double tol = 1e-9;
    auto* spec = app.add_subcommand("spectral", "expansion check over seeded topologies");
    add_common(spec, f, false);
    spec->add_option("--seeds", seeds, "number of seeded topologies");
    spec->add_option("--tol", tol, "power-iteration tolerance");

    // bound
    double delta = 0.3;
    int t_subjects = 2;
    uint64_t samples = 200000;
    auto* bnd = app.add_subcommand("bound", "analytic conflict bound and Monte Carlo check");
    add_common(bnd, f, false);
    bnd->add_option("--delta", delta, "watermark fraction: L=deltaK, H=(1-delta)K");
    bnd->add_option("--t", t_subjects, "number of failed subjects");
    bnd->add_option("--samples", samples, "Monte Carlo sample count (0 = bound only)");

    // replay
    std::string in_dir;
    auto* rep = app.add_subcommand("replay", "re-run a saved scenario and byte-compare");
    rep->add_option("--in", in_dir, "directory holding scenario.json + prior outputs")
        ->required();
    rep->add_option("--out", f.out, "optional directory for the replayed artifacts");

    CLI11_PARSE(app, argc, argv);

    try {
        apply_env_seed(f);

        if (boot->parsed()) {
            return run_scenario_cmd(bootstrap_scenario(f.n, params_of(f), f.seed, f.duration), f,
                                    "bootstrap");
        }
        if (crash->parsed()) {
            return run_scenario_cmd(crash_scenario(f.n, params_of(f), fail_count, f.seed,
                                                   f.duration),
                                    f, "crash");
        }
        if (part->parsed()) {
            return run_scenario_cmd(partition_scenario(f.n, params_of(f), minority, heal_at,
                                                       f.seed, f.duration),
                                    f, "partition");
        }
        if (loss->parsed()) {
            return run_scenario_cmd(egress_loss_scenario(f.n, params_of(f), victims, drop,
                                                         f.seed, f.duration),
                                    f, "loss");
        }

        if (sens->parsed()) {
            SweepResult result = sensitivity_sweep(f.n, f.k, {6, 7, 8, 9}, {1, 2, 3, 4},
                                                   {2, 4, 8, 16}, reps, f.seed, !serial);
            std::cout << result.csv();
            if (!f.out.empty()) {
                fs::create_directories(f.out);
                write_file(fs::path(f.out) / "sensitivity.csv", result.csv());
            }
            return 0;
        }

        if (spec->parsed()) {
            std::ostringstream csv;
            csv << "n,d,lambda2,ratio,iterations,residual\n";
            int below = 0;
            for (int s = 0; s < seeds; ++s) {
                SplitMix64 rng(mix64(f.seed, 0x53504543ull, static_cast<uint64_t>(s)));
                std::vector<NodeId> ids(static_cast<size_t>(f.n));
                for (auto& id : ids) id = NodeId::from_rng(rng);
                std::sort(ids.begin(), ids.end());
                KRingTopology topo(ConfigurationId{mix64(f.seed, static_cast<uint64_t>(s))}, ids,
                                   f.k);
                SpectralReport r = spectral_gap(topo, tol, 20000);
                if (r.ratio < 0.45) ++below;
                csv << r.n << ',' << r.d << ',' << r.lambda2 << ',' << r.ratio << ','
                    << r.iterations << ',' << r.residual << '\n';
            }
            std::cout << csv.str();
            std::cout << "below_0.45: " << below << "/" << seeds << "\n";
            if (!f.out.empty()) {
                fs::create_directories(f.out);
                write_file(fs::path(f.out) / "spectral.csv", csv.str());
            }
            return below * 10 >= seeds * 9 ? 0 : 1;
        }

        if (bnd->parsed()) {
            double b = conflict_bound(f.k, delta, t_subjects);
            std::cout << "bound(k=" << f.k << ", delta=" << delta << ", t=" << t_subjects
                      << ") = " << b << "\n";
            if (samples > 0) {
                McEstimate mc = mc_conflict_rate_for_delta(f.k, delta, t_subjects, samples,
                                                           f.seed);
                std::cout << "monte_carlo = " << mc.rate() << " (sigma = " << mc.sigma()
                          << ", samples = " << samples << ")\n";
                if (mc.rate() > b + 3.0 * mc.sigma()) {
                    std::cout << "bound exceeded\n";
                    return 1;
                }
            }
            return 0;
        }

        if (rep->parsed()) {
            Scenario sc = Json::parse(read_file(fs::path(in_dir) / "scenario.json"))
                              .get<Scenario>();
            RunReport report = run(sc);
            std::string summary = report.summary_text() + "\n";
            bool ok = true;
            fs::path prior_summary = fs::path(in_dir) / "summary.json";
            fs::path prior_csv = fs::path(in_dir) / "timeseries.csv";
            if (fs::exists(prior_summary) && read_file(prior_summary) != summary) {
                std::cout << "summary.json differs from the stored run\n";
                ok = false;
            }
            if (fs::exists(prior_csv) && read_file(prior_csv) != report.timeseries_csv) {
                std::cout << "timeseries.csv differs from the stored run\n";
                ok = false;
            }
            if (!f.out.empty()) {
                fs::create_directories(f.out);
                write_file(fs::path(f.out) / "scenario.json", canonical_bytes(Json(sc)) + "\n");
                write_file(fs::path(f.out) / "timeseries.csv", report.timeseries_csv);
                write_file(fs::path(f.out) / "summary.json", summary);
            }
            std::cout << (ok ? "replay: byte-identical\n" : "replay: MISMATCH\n");
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
