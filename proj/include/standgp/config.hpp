#pragma once

#include "standgp/model.hpp"
#include "standgp/sampler.hpp"
#include "standgp/sim.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace standgp {

/// Flat `key = value` text. Blank lines and lines starting with '#' are
/// skipped. Every key read through a getter is marked as consumed so that
/// leftovers can be reported as unknown.
class KeyValues {
public:
    [[nodiscard]] static KeyValues parse(std::istream& in, const std::string& source = "config");
    [[nodiscard]] static KeyValues load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key); }
    /// Keys with the given prefix, in lexicographic order.
    [[nodiscard]] std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

    [[nodiscard]] std::optional<std::string> text(const std::string& key) const;
    [[nodiscard]] std::optional<double> real(const std::string& key) const;
    [[nodiscard]] std::optional<long> integer(const std::string& key) const;
    [[nodiscard]] std::optional<std::uint64_t> unsigned64(const std::string& key) const;
    [[nodiscard]] std::optional<bool> boolean(const std::string& key) const;
    /// Whitespace- or comma-separated reals.
    [[nodiscard]] std::optional<std::vector<double>> reals(const std::string& key) const;

    /// Throws ConfigError naming every key that no getter has read.
    void reject_unknown() const;
    /// `key = value` lines in key order.
    [[nodiscard]] std::string serialize() const;

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
    std::string source_;
    mutable std::set<std::string> consumed_;

    [[nodiscard]] std::string where(const std::string& key) const;
};

struct DataOptions {
    std::optional<std::filesystem::path> path;
    std::optional<std::filesystem::path> holdout;
    std::optional<std::filesystem::path> new_sites;
    double area_factor = 1.0;
    /// Recorded only; the phi bounds are read in this unit.
    std::string distance_unit = "km";
};

struct ChainOptions {
    int count = 3;
    Schedule schedule{75000, 15000, 1};
    std::uint64_t seed = 1;
    /// 0 runs one thread per chain, capped by the hardware.
    unsigned threads = 0;
};

struct PredictOptions {
    /// Directory holding the fitted manifest and samples.
    std::optional<std::filesystem::path> fit;
    std::optional<long> draws;
    double scale = 1.0;
};

struct AssessOptions {
    std::vector<std::filesystem::path> fits;
    std::optional<long> draws;
};

/// Everything the four subcommands read. One file may carry all sections.
struct RunConfig {
    DataOptions data;
    ModelSpec model;
    ChainOptions chains;
    SamplerOptions sampler;
    PredictOptions predict;
    AssessOptions assess;
    SimConfig sim;
};

/// Builds a RunConfig. Relative paths resolve against `base_dir`.
/// Throws ConfigError for malformed values and unknown keys.
[[nodiscard]] RunConfig parse_run_config(const KeyValues& kv, const std::filesystem::path& base_dir = {});
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);

/// model.* keys only; used for both run configs and fitted manifests.
[[nodiscard]] ModelSpec parse_model_spec(const KeyValues& kv);
/// Writes the model.* keys that reproduce `spec` under parse_model_spec.
void write_model_spec(KeyValues& kv, const ModelSpec& spec);

}  // namespace standgp
