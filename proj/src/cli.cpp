#include "standgp/cli.hpp"

#include "standgp/assess.hpp"
#include "standgp/error.hpp"
#include "standgp/io.hpp"
#include "standgp/predict.hpp"
#include "standgp/sampler.hpp"
#include "standgp/sim.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace standgp {

namespace fs = std::filesystem;

namespace {

constexpr int kReportedBatches = 20;

std::string samples_file(int chain) { return "samples_chain" + std::to_string(chain) + ".csv"; }

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw ConfigError("cannot create output directory '" + dir.string() + "'");
    }
}

template <class Writer>
void write_atomically(const fs::path& path, Writer&& writer) {
    std::ostringstream ss;
    writer(ss);
    atomic_write(path, ss.str());
}

Dataset load_training(const RunConfig& rc) {
    if (!rc.data.path) {
        throw ConfigError("data.path is required");
    }
    return read_dataset_csv(*rc.data.path, rc.data.area_factor);
}

/// Fitted-model manifest: everything predict and assess need to rebuild the
/// model and check that they are given the same data.
struct Manifest {
    ModelSpec spec;
    Dims dims;
    int chains = 0;
    Schedule schedule;
    std::uint64_t seed = 0;
    std::string fingerprint;

    [[nodiscard]] std::string serialize(const SamplerOptions& sampler) const {
        KeyValues kv;
        write_model_spec(kv, spec);
        kv.set("chains.count", std::to_string(chains));
        kv.set("chains.iters", std::to_string(schedule.iters));
        kv.set("chains.burnin", std::to_string(schedule.burnin));
        kv.set("chains.thin", std::to_string(schedule.thin));
        kv.set("chains.seed", std::to_string(seed));
        kv.set("sampler.batch_size", std::to_string(sampler.batch_size));
        kv.set("sampler.adapt", sampler.adapt ? "true" : "false");
        if (sampler.initial_step) kv.set("sampler.initial_step", format_double(*sampler.initial_step));
        kv.set("sampler.interweave", sampler.interweave ? "true" : "false");
        if (sampler.initial_w_step) kv.set("sampler.initial_w_step", format_double(*sampler.initial_w_step));
        kv.set("sampler.w_proposal", sampler.w_proposal == WProposal::Isotropic     ? "isotropic"
                                     : sampler.w_proposal == WProposal::PriorScaled ? "prior_scaled"
                                     : sampler.w_proposal == WProposal::Curvature   ? "curvature"
                                                                                    : "langevin");
        kv.set("fit.q", std::to_string(dims.q));
        kv.set("fit.m", std::to_string(dims.m));
        kv.set("fit.n", std::to_string(dims.n));
        kv.set("fit.p", std::to_string(dims.p));
        kv.set("data.fingerprint", fingerprint);
        return "# standgp fitted-model manifest\n" + kv.serialize();
    }

    static Manifest load(const fs::path& fit_dir) {
        const fs::path path = fit_dir / "manifest.txt";
        if (!fs::exists(path)) {
            throw ConfigError("no fitted manifest at '" + path.string() + "'");
        }
        const KeyValues kv = KeyValues::load(path);
        Manifest m;
        m.spec = parse_model_spec(kv);
        m.chains = static_cast<int>(kv.integer("chains.count").value_or(0));
        m.schedule.iters = kv.integer("chains.iters").value_or(0);
        m.schedule.burnin = kv.integer("chains.burnin").value_or(0);
        m.schedule.thin = kv.integer("chains.thin").value_or(1);
        m.seed = kv.unsigned64("chains.seed").value_or(0);
        for (const std::string key : {"sampler.batch_size", "sampler.adapt", "sampler.initial_step", "sampler.interweave",
                                      "sampler.initial_w_step", "sampler.w_proposal"}) {
            (void)kv.text(key);
        }
        m.dims.q = static_cast<int>(kv.integer("fit.q").value_or(0));
        m.dims.m = static_cast<int>(kv.integer("fit.m").value_or(0));
        m.dims.n = static_cast<int>(kv.integer("fit.n").value_or(0));
        m.dims.p = static_cast<int>(kv.integer("fit.p").value_or(0));
        m.fingerprint = kv.text("data.fingerprint").value_or("");
        kv.reject_unknown();
        if (m.chains < 1 || m.fingerprint.empty()) {
            throw ConfigError("manifest '" + path.string() + "' is incomplete");
        }
        return m;
    }

    void check_data(const Dataset& data) const {
        if (fingerprint != standgp::fingerprint(data)) {
            throw DataError("data fingerprint " + standgp::fingerprint(data) +
                            " does not match the fitted manifest (" + fingerprint + ")");
        }
    }

    [[nodiscard]] std::vector<ChainStore> load_chains(const fs::path& fit_dir) const {
        std::vector<ChainStore> out;
        for (int c = 1; c <= chains; ++c) {
            const fs::path path = fit_dir / samples_file(c);
            std::ifstream in(path);
            if (!in) {
                throw DataError("missing posterior samples '" + path.string() + "'");
            }
            out.push_back(read_samples_csv(in, dims, spec));
        }
        return out;
    }
};

std::vector<ParamState> pooled_subsample(const std::vector<ChainStore>& chains, std::optional<long> limit) {
    const auto pool = pool_draws(chains);
    if (pool.empty()) {
        throw DataError("fit has no retained draws");
    }
    std::vector<ParamState> out;
    for (std::size_t k : subsample_indices(pool.size(), limit)) out.push_back(pool[k]);
    return out;
}

PredictionRequest request_from(const Dataset& sites) {
    PredictionRequest r;
    r.new_sites = sites.sites;
    r.design = sites.design;
    return r;
}

void check_layout(int q, int m, int p, const Dataset& data, const std::string& what) {
    if (q != data.q || m != data.m || p != data.p) {
        throw DataError(what + " has q=" + std::to_string(q) + ", m=" + std::to_string(m) + ", p=" + std::to_string(p) +
                        " but the training data has q=" + std::to_string(data.q) + ", m=" + std::to_string(data.m) +
                        ", p=" + std::to_string(data.p));
    }
}

}  // namespace

Command parse_command(const std::string& name) {
    if (name == "simulate") return Command::Simulate;
    if (name == "fit") return Command::Fit;
    if (name == "predict") return Command::Predict;
    if (name == "assess") return Command::Assess;
    throw ConfigError("unknown subcommand '" + name + "'");
}

std::string describe(const Dataset& data) {
    std::ostringstream ss;
    ss << "n=" << data.n() << " q=" << data.q << " m=" << data.m << " p=" << data.p << " totals=";
    for (int i = 0; i < data.q; ++i) ss << (i ? "," : "") << data.total_count(i);
    return ss.str();
}

void simulate_command(const RunConfig& rc, const fs::path& out, std::ostream& log) {
    ensure_dir(out);
    const SimResult sim = simulate(rc.sim);
    write_atomically(out / "train.csv", [&](std::ostream& o) { write_dataset_csv(o, sim.train); });
    if (sim.holdout.n() > 0) {
        write_atomically(out / "holdout.csv", [&](std::ostream& o) { write_dataset_csv(o, sim.holdout); });
    }
    ModelSpec truth_spec;
    truth_spec.variant = rc.sim.spatial ? Variant::SpatialCovariates : Variant::NonspatialCovariates;
    const Dims dims{sim.train.q, sim.train.m, sim.train.n(), sim.train.p};
    write_atomically(out / "truth.csv", [&](std::ostream& o) { write_truth_csv(o, sim.truth, dims, truth_spec); });
    log << "simulated training data: " << describe(sim.train) << '\n';
    if (sim.holdout.n() > 0) log << "simulated holdout data: " << describe(sim.holdout) << '\n';
}

void fit_command(const RunConfig& rc, const fs::path& out, std::ostream& log) {
    rc.chains.schedule.validate();
    const Dataset data = load_training(rc);
    log << "ingested " << describe(data) << '\n';
    rc.model.validate(model_dims(data, rc.model).p, data.q);
    ensure_dir(out);
    const auto chains =
        run_chains(data, rc.model, rc.chains.count, rc.chains.schedule, rc.chains.seed, rc.sampler, rc.chains.threads);
    for (const auto& c : chains) {
        for (double lj : c.log_joint_trace) {
            if (!std::isfinite(lj)) {
                throw NumericError("chain " + std::to_string(c.chain_id) + ": non-finite posterior density");
            }
        }
    }
    const Dims dims = model_dims(data, rc.model);
    for (const auto& c : chains) {
        write_atomically(out / samples_file(c.chain_id),
                         [&](std::ostream& o) { write_samples_csv(o, c, dims, rc.model); });
    }

    write_atomically(out / "convergence.txt", [&](std::ostream& o) {
        o << "# Gelman-Rubin potential scale reduction over " << chains.size() << " chains, "
          << chains.front().draws.size() << " retained draws each\n";
        if (chains.size() < 2 || chains.front().draws.size() < 2) {
            o << "# needs at least two chains with two retained draws\n";
            return;
        }
        o << "parameter,rhat\n";
        double worst = 0.0;
        for (const auto& e : convergence_report(chains, dims, rc.model)) {
            o << e.name << ',' << format_double(e.rhat) << '\n';
            worst = std::max(worst, e.rhat);
        }
        o << "# max_rhat = " << format_double(worst) << '\n';
    });

    write_atomically(out / "adaptation.txt", [&](std::ostream& o) {
        o << "# acceptance rate over the final " << kReportedBatches << " batches and final proposal scale\n";
        o << "chain,block,acceptance,step\n";
        for (const auto& c : chains) {
            for (std::size_t b = 0; b < c.block_ids.size(); ++b) {
                const auto& acc = c.batch_accepts[b];
                const std::size_t from = acc.size() > kReportedBatches ? acc.size() - kReportedBatches : 0;
                long total = 0;
                for (std::size_t k = from; k < acc.size(); ++k) total += acc[k];
                const double batches = static_cast<double>(acc.size() - from);
                const double rate = batches > 0 ? static_cast<double>(total) / (batches * c.batch_size) : 0.0;
                o << c.chain_id << ',' << c.block_ids[b] << ',' << format_double(rate) << ','
                  << format_double(std::exp(c.final_log_steps[b])) << '\n';
            }
        }
    });

    Manifest manifest;
    manifest.spec = rc.model;
    manifest.dims = dims;
    manifest.chains = rc.chains.count;
    manifest.schedule = rc.chains.schedule;
    manifest.seed = rc.chains.seed;
    manifest.fingerprint = fingerprint(data);
    atomic_write(out / "manifest.txt", manifest.serialize(rc.sampler));
    log << "fit " << chains.size() << " chains of " << rc.chains.schedule.iters << " iterations into " << out.string()
        << '\n';
}

void predict_command(const RunConfig& rc, const fs::path& out, std::ostream& log) {
    const fs::path fit_dir = rc.predict.fit.value_or(out);
    const Manifest manifest = Manifest::load(fit_dir);
    const Dataset data = load_training(rc);
    manifest.check_data(data);
    if (!rc.data.new_sites) {
        throw ConfigError("data.new_sites is required for predict");
    }
    SiteTable sites = read_sites_csv(*rc.data.new_sites);
    check_layout(sites.q, sites.m, sites.p, data, "new-site table");
    const auto chains = manifest.load_chains(fit_dir);
    sites.request.draw_subsample = rc.predict.draws;
    Rng rng(derive_seed(rc.chains.seed, kPredictStream));
    const auto draws = predictive_counts(sites.request, pool_draws(chains), data, manifest.spec, rng);
    ensure_dir(out);
    write_atomically(out / "predictions.csv",
                     [&](std::ostream& o) { write_predictions_csv(o, sites.request.new_sites, draws, rc.predict.scale); });
    log << "predicted " << draws.n0 << " sites into " << (out / "predictions.csv").string() << '\n';
}

void assess_command(const RunConfig& rc, const fs::path& out, std::ostream& log) {
    if (rc.assess.fits.empty()) {
        throw ConfigError("assess.fits must list at least one fitted-model directory");
    }
    if (!rc.data.holdout) {
        throw ConfigError("data.holdout is required for assess");
    }
    const Dataset data = load_training(rc);
    const Dataset holdout = read_dataset_csv(*rc.data.holdout, rc.data.area_factor, true);
    if (holdout.n() == 0) {
        throw DataError("assessment: holdout set has no rows");
    }
    check_layout(holdout.q, holdout.m, holdout.p, data, "holdout set");

    std::ostringstream dic_rows;
    std::ostringstream score_rows;
    std::ostringstream mean_rows;
    std::ostringstream range_rows;
    for (std::size_t f = 0; f < rc.assess.fits.size(); ++f) {
        const Manifest manifest = Manifest::load(rc.assess.fits[f]);
        manifest.check_data(data);
        const auto chains = manifest.load_chains(rc.assess.fits[f]);
        const auto draws = pooled_subsample(chains, rc.assess.draws);
        const std::string label = std::to_string(f + 1) + ',' + to_string(manifest.spec.variant);

        const DicResult d = dic(deviance_trace(data, manifest.spec, draws));
        dic_rows << label << ',' << format_double(d.mean_deviance) << ',' << format_double(d.p_d) << ','
                 << format_double(d.dic) << '\n';

        Rng rng(derive_seed(rc.chains.seed, kAssessStream + f));
        const auto predictive = predictive_counts(request_from(holdout), draws, data, manifest.spec, rng);
        const ScoreReport s = score_holdout(holdout, predictive);
        for (int i = 0; i < s.q; ++i) {
            for (int j = 0; j < s.m; ++j) {
                const auto c = static_cast<std::size_t>(i * s.m + j);
                score_rows << label << ',' << i + 1 << ',' << j + 1 << ',' << format_double(s.logs[c]) << ','
                           << format_double(s.ses[c]) << ',' << format_double(s.dss[c]) << '\n';
            }
        }
        mean_rows << label << ',' << format_double(s.mean_logs()) << ',' << format_double(s.mean_ses()) << ','
                  << format_double(s.mean_dss()) << '\n';

        if (manifest.spec.spatial()) {
            const auto ranges = effective_range_summary(draws, manifest.spec, manifest.dims.q, manifest.dims.m);
            for (int i = 0; i < manifest.dims.q; ++i) {
                for (int j = 0; j < manifest.dims.m; ++j) {
                    const Interval& iv = ranges[static_cast<std::size_t>(i * manifest.dims.m + j)];
                    range_rows << label << ',' << i + 1 << ',' << j + 1 << ',' << format_double(iv.median) << ','
                               << format_double(iv.lower) << ',' << format_double(iv.upper) << '\n';
                }
            }
        }
        log << "assessed fit " << f + 1 << " (" << to_string(manifest.spec.variant) << "): DIC "
            << format_double(d.dic) << '\n';
    }

    ensure_dir(out);
    std::ostringstream report;
    report << "[dic]\nfit,variant,mean_deviance,p_d,dic\n" << dic_rows.str();
    report << "\n[holdout_scores]\nfit,variant,species,class,logs,ses,dss\n" << score_rows.str();
    report << "\n[holdout_score_means]\nfit,variant,logs,ses,dss\n" << mean_rows.str();
    report << "\n[effective_range]\nfit,variant,species,class,median,lower95,upper95\n" << range_rows.str();
    atomic_write(out / "assessment.txt", report.str());
}

void run(const Invocation& inv, std::ostream& log) {
    RunConfig rc = load_run_config(inv.config);
    if (inv.seed) {
        if (inv.command == Command::Simulate) {
            // sim.seed feeds the generating parameters too, so rebuild them.
            KeyValues kv = KeyValues::load(inv.config);
            kv.set("sim.seed", std::to_string(*inv.seed));
            rc = parse_run_config(kv, inv.config.parent_path());
        } else {
            rc.chains.seed = *inv.seed;
        }
    }
    const fs::path out = inv.out.value_or(fs::current_path());
    switch (inv.command) {
        case Command::Simulate:
            simulate_command(rc, out, log);
            break;
        case Command::Fit:
            fit_command(rc, out, log);
            break;
        case Command::Predict:
            predict_command(rc, out, log);
            break;
        case Command::Assess:
            assess_command(rc, out, log);
            break;
    }
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
        dynamic_cast<const fs::filesystem_error*>(&e)) {
        return 2;
    }
    if (dynamic_cast<const DataError*>(&e)) return 3;
    return 4;
}

int main_entry(int argc, char** argv) {
    CLI::App app{"Dynamic multivariate Poisson spatial regression for stand tables"};
    app.require_subcommand(1, 1);
    Invocation inv;
    std::string out;
    std::uint64_t seed = 0;
    for (const char* name : {"simulate", "fit", "predict", "assess"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", inv.config, "key = value configuration file")->required();
        sub->add_option("--out", out, "output directory");
        sub->add_option("--seed", seed, "root seed");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        const CLI::App* sub = app.get_subcommands().front();
        inv.command = parse_command(sub->get_name());
        if (!out.empty()) inv.out = out;
        if (sub->count("--seed") > 0) inv.seed = seed;
        run(inv, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "standgp: " << e.what() << '\n';
        return exit_code(e);
    }
    return 0;
}

}  // namespace standgp
