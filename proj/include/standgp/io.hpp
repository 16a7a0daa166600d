#pragma once

#include "standgp/model.hpp"
#include "standgp/predict.hpp"
#include "standgp/sampler.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace standgp {

/// Shortest text that parses back to the same double (%.17g).
[[nodiscard]] std::string format_double(double v);

/// Reads the stand-table CSV:
///   site_id,x,y,species,class,count,x1,...,xP
/// one row per (site, species, class), 1-based species and class, implicit
/// intercept. Sites keep their order of first appearance. Throws DataError
/// (with the line number) for missing columns, non-integer counts, duplicate
/// or missing (site, species, class) rows and inconsistent field counts.
/// A header-only file is an error unless `allow_empty`, which yields n = 0.
[[nodiscard]] Dataset read_dataset_csv(std::istream& in, double area_factor = 1.0, bool allow_empty = false);
[[nodiscard]] Dataset read_dataset_csv(const std::filesystem::path& path, double area_factor = 1.0,
                                       bool allow_empty = false);
void write_dataset_csv(std::ostream& out, const Dataset& data);

/// Reads new-site covariates (same schema; a `count` column is optional and
/// ignored) into a prediction request with one design per (species, class).
struct SiteTable {
    PredictionRequest request;
    int q = 0;
    int m = 0;
    int p = 1;
};
[[nodiscard]] SiteTable read_sites_csv(std::istream& in);
[[nodiscard]] SiteTable read_sites_csv(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical CSV serialization, as 16 hex digits.
[[nodiscard]] std::string fingerprint(const Dataset& data);

/// Columnar posterior samples: iteration,chain,<parameter names>,log_joint.
void write_samples_csv(std::ostream& out, const ChainStore& chain, const Dims& dims, const ModelSpec& spec);
/// Reads draws back; throws DataError when the header does not match the model.
[[nodiscard]] ChainStore read_samples_csv(std::istream& in, const Dims& dims, const ModelSpec& spec);

/// Generating parameters as name,value rows (same naming as the samples file).
void write_truth_csv(std::ostream& out, const ParamState& truth, const Dims& dims, const ModelSpec& spec);

/// Prediction grid: site_id,x,y,species,class,median,lower95,upper95,range.
void write_predictions_csv(std::ostream& out, const SiteSet& sites, const PredictiveDraws& draws, double scale);

/// Writes `content` to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& content);
[[nodiscard]] std::string read_file(const std::filesystem::path& path);

}  // namespace standgp
