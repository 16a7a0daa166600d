#pragma once

#include "standgp/config.hpp"
#include "standgp/model.hpp"

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace standgp {

enum class Command { Simulate, Fit, Predict, Assess };

[[nodiscard]] Command parse_command(const std::string& name);

struct Invocation {
    Command command = Command::Fit;
    std::filesystem::path config;
    /// Defaults to the current directory.
    std::optional<std::filesystem::path> out;
    /// Overrides sim.seed for simulate and chains.seed otherwise.
    std::optional<std::uint64_t> seed;
};

/// Sub-seed streams derived from chains.seed for the non-chain tasks.
inline constexpr std::uint64_t kPredictStream = 1001;
inline constexpr std::uint64_t kAssessStream = 2001;  // plus the 0-based fit index

/// Runs one subcommand. Progress goes to `log`. Throws library errors.
void run(const Invocation& inv, std::ostream& log);

/// The individual subcommands on an already parsed configuration.
/// simulate: train.csv, truth.csv and (with holdout sites) holdout.csv.
void simulate_command(const RunConfig& rc, const std::filesystem::path& out, std::ostream& log);
/// fit: samples_chain<c>.csv, convergence.txt, adaptation.txt, manifest.txt.
void fit_command(const RunConfig& rc, const std::filesystem::path& out, std::ostream& log);
/// predict: predictions.csv.
void predict_command(const RunConfig& rc, const std::filesystem::path& out, std::ostream& log);
/// assess: assessment.txt (DIC table, holdout scores, effective ranges).
void assess_command(const RunConfig& rc, const std::filesystem::path& out, std::ostream& log);

/// One-line description of an ingested dataset: n, q, m, p and per-species totals.
[[nodiscard]] std::string describe(const Dataset& data);

/// Maps an exception onto the process exit code: 2 config, 3 data, 4 numeric.
[[nodiscard]] int exit_code(const std::exception& e);

/// Full command-line entry point; returns the exit code.
int main_entry(int argc, char** argv);

}  // namespace standgp
