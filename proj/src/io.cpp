#include "standgp/io.hpp"

#include "standgp/error.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace standgp {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string at_line(long line) { return " (line " + std::to_string(line) + ")"; }

double parse_real(const std::string& s, const std::string& what, long line) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
        throw DataError("invalid " + what + " '" + s + "'" + at_line(line));
    }
    return v;
}

long parse_integer(const std::string& s, const std::string& what, long line, long min_value) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw DataError(what + " must be a non-negative integer, got '" + s + "'" + at_line(line));
    }
    errno = 0;
    const long v = std::strtol(s.c_str(), nullptr, 10);
    if (errno == ERANGE || v < min_value) {
        throw DataError(what + " out of range: '" + s + "'" + at_line(line));
    }
    return v;
}

struct ParsedRow {
    long count = 0;
    std::vector<double> covariates;
};

struct ParsedTable {
    SiteSet sites;
    int q = 0;
    int m = 0;
    int covariates = 0;
    std::map<std::tuple<int, int, int>, ParsedRow> rows;  // (site, species, class), 0-based
};

ParsedTable parse_table(std::istream& in, bool require_count, bool allow_empty = false) {
    std::string line;
    long line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split(line);
            break;
        }
    }
    if (header.empty()) {
        throw DataError("empty dataset: no header");
    }
    const std::vector<std::string> fixed = {"site_id", "x", "y", "species", "class"};
    for (std::size_t c = 0; c < fixed.size(); ++c) {
        if (c >= header.size() || header[c] != fixed[c]) {
            throw DataError("missing column '" + fixed[c] + "' at position " + std::to_string(c + 1) + at_line(line_no));
        }
    }
    std::size_t pos = fixed.size();
    const bool has_count = header.size() > pos && header[pos] == "count";
    if (require_count && !has_count) {
        throw DataError("missing column 'count' at position 6" + at_line(line_no));
    }
    if (has_count) ++pos;
    const std::size_t first_cov = pos;
    for (std::size_t c = first_cov; c < header.size(); ++c) {
        const std::string expect = "x" + std::to_string(c - first_cov + 1);
        if (header[c] != expect) {
            throw DataError("expected covariate column '" + expect + "', got '" + header[c] + "'" + at_line(line_no));
        }
    }

    ParsedTable t;
    t.covariates = static_cast<int>(header.size() - first_cov);
    std::map<std::string, int> site_index;
    std::vector<Eigen::Vector2d> coords;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split(line);
        if (f.size() != header.size()) {
            throw DataError("row has " + std::to_string(f.size()) + " fields but header has " +
                            std::to_string(header.size()) + " (inconsistent covariate arity)" + at_line(line_no));
        }
        if (f[0].empty()) {
            throw DataError("empty site_id" + at_line(line_no));
        }
        const Eigen::Vector2d xy(parse_real(f[1], "x coordinate", line_no), parse_real(f[2], "y coordinate", line_no));
        const int species = static_cast<int>(parse_integer(f[3], "species", line_no, 1));
        const int cls = static_cast<int>(parse_integer(f[4], "class", line_no, 1));
        ParsedRow row;
        if (has_count) row.count = parse_integer(f[5], "count", line_no, 0);
        for (std::size_t c = first_cov; c < f.size(); ++c) {
            row.covariates.push_back(parse_real(f[c], header[c], line_no));
        }
        auto [it, inserted] = site_index.try_emplace(f[0], static_cast<int>(coords.size()));
        if (inserted) {
            coords.push_back(xy);
            t.sites.ids.push_back(f[0]);
        } else if (coords[static_cast<std::size_t>(it->second)] != xy) {
            throw DataError("site '" + f[0] + "' listed with different coordinates" + at_line(line_no));
        }
        const auto key = std::make_tuple(it->second, species - 1, cls - 1);
        if (!t.rows.emplace(key, std::move(row)).second) {
            throw DataError("duplicate row for site '" + f[0] + "', species " + std::to_string(species) + ", class " +
                            std::to_string(cls) + at_line(line_no));
        }
        t.q = std::max(t.q, species);
        t.m = std::max(t.m, cls);
    }
    if (t.rows.empty() && !allow_empty) {
        throw DataError("empty dataset: header only");
    }
    t.sites.coords.resize(static_cast<Eigen::Index>(coords.size()), 2);
    for (std::size_t k = 0; k < coords.size(); ++k) t.sites.coords.row(static_cast<Eigen::Index>(k)) = coords[k];
    const int n = static_cast<int>(coords.size());
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < t.q; ++i) {
            for (int j = 0; j < t.m; ++j) {
                if (!t.rows.contains({k, i, j})) {
                    throw DataError("missing row for site '" + t.sites.ids[static_cast<std::size_t>(k)] +
                                    "', species " + std::to_string(i + 1) + ", class " + std::to_string(j + 1));
                }
            }
        }
    }
    return t;
}

std::vector<Eigen::MatrixXd> designs(const ParsedTable& t) {
    const int n = static_cast<int>(t.sites.size());
    std::vector<Eigen::MatrixXd> out;
    for (int i = 0; i < t.q; ++i) {
        for (int j = 0; j < t.m; ++j) {
            Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, t.covariates + 1);
            for (int k = 0; k < n; ++k) {
                const auto& row = t.rows.at({k, i, j});
                for (int c = 0; c < t.covariates; ++c) X(k, c + 1) = row.covariates[static_cast<std::size_t>(c)];
            }
            out.push_back(std::move(X));
        }
    }
    return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    return in;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Dataset read_dataset_csv(std::istream& in, double area_factor, bool allow_empty) {
    const ParsedTable t = parse_table(in, true, allow_empty);
    Dataset d;
    d.sites = t.sites;
    d.q = t.q;
    d.m = t.m;
    d.p = t.covariates + 1;
    d.area_factor = area_factor;
    d.design = designs(t);
    const int n = d.n();
    d.counts.resize(static_cast<std::size_t>(d.q * d.m * n));
    for (int i = 0; i < d.q; ++i) {
        for (int j = 0; j < d.m; ++j) {
            for (int k = 0; k < n; ++k) d.count(i, j, k) = t.rows.at({k, i, j}).count;
        }
    }
    if (n > 0) d.validate();
    return d;
}

Dataset read_dataset_csv(const std::filesystem::path& path, double area_factor, bool allow_empty) {
    auto in = open_input(path);
    return read_dataset_csv(in, area_factor, allow_empty);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
    out << "site_id,x,y,species,class,count";
    for (int c = 1; c < data.p; ++c) out << ",x" << c;
    out << '\n';
    for (int k = 0; k < data.n(); ++k) {
        for (int i = 0; i < data.q; ++i) {
            for (int j = 0; j < data.m; ++j) {
                out << data.sites.ids[static_cast<std::size_t>(k)] << ',' << format_double(data.sites.coords(k, 0)) << ','
                    << format_double(data.sites.coords(k, 1)) << ',' << i + 1 << ',' << j + 1 << ','
                    << data.count(i, j, k);
                for (int c = 1; c < data.p; ++c) out << ',' << format_double(data.x(i, j)(k, c));
                out << '\n';
            }
        }
    }
}

SiteTable read_sites_csv(std::istream& in) {
    const ParsedTable t = parse_table(in, false);
    SiteTable s;
    s.q = t.q;
    s.m = t.m;
    s.p = t.covariates + 1;
    s.request.new_sites = t.sites;
    s.request.design = designs(t);
    return s;
}

SiteTable read_sites_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_sites_csv(in);
}

std::string fingerprint(const Dataset& data) {
    std::ostringstream canon;
    write_dataset_csv(canon, data);
    canon << "area_factor=" << format_double(data.area_factor) << '\n';
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canon.str()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_samples_csv(std::ostream& out, const ChainStore& chain, const Dims& dims, const ModelSpec& spec) {
    out << "iteration,chain";
    for (const auto& name : parameter_names(dims, spec)) out << ',' << name;
    out << ",log_joint\n";
    for (std::size_t d = 0; d < chain.draws.size(); ++d) {
        out << chain.draw_iterations[d] << ',' << chain.chain_id;
        for (double v : flatten(chain.draws[d], dims, spec)) out << ',' << format_double(v);
        out << ',' << format_double(chain.log_joint_trace[d]) << '\n';
    }
}

ChainStore read_samples_csv(std::istream& in, const Dims& dims, const ModelSpec& spec) {
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("posterior samples: empty file");
    }
    const auto header = split(line);
    const auto names = parameter_names(dims, spec);
    if (header.size() != names.size() + 3 || header[0] != "iteration" || header[1] != "chain" ||
        header.back() != "log_joint" || !std::equal(names.begin(), names.end(), header.begin() + 2)) {
        throw DataError("posterior samples: columns do not match the fitted model");
    }
    ChainStore store;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split(line);
        if (f.size() != header.size()) {
            throw DataError("posterior samples: wrong field count" + at_line(line_no));
        }
        store.draw_iterations.push_back(parse_integer(f[0], "iteration", line_no, 0));
        store.chain_id = static_cast<int>(parse_integer(f[1], "chain", line_no, 0));
        std::vector<double> values;
        values.reserve(names.size());
        for (std::size_t c = 2; c + 1 < f.size(); ++c) values.push_back(parse_real(f[c], header[c], line_no));
        store.draws.push_back(unflatten(values, dims, spec));
        store.log_joint_trace.push_back(parse_real(f.back(), "log_joint", line_no));
    }
    return store;
}

void write_truth_csv(std::ostream& out, const ParamState& truth, const Dims& dims, const ModelSpec& spec) {
    const auto names = parameter_names(dims, spec);
    const auto values = flatten(truth, dims, spec);
    out << "name,value\n";
    for (std::size_t k = 0; k < names.size(); ++k) out << names[k] << ',' << format_double(values[k]) << '\n';
}

void write_predictions_csv(std::ostream& out, const SiteSet& sites, const PredictiveDraws& draws, double scale) {
    out << "site_id,x,y,species,class,median,lower95,upper95,range\n";
    for (int s = 0; s < draws.n0; ++s) {
        for (int i = 0; i < draws.q; ++i) {
            for (int j = 0; j < draws.m; ++j) {
                const auto sum = summarize_predictive(draws.counts[draws.cell(s, i, j)], scale);
                out << sites.ids[static_cast<std::size_t>(s)] << ',' << format_double(sites.coords(s, 0)) << ','
                    << format_double(sites.coords(s, 1)) << ',' << i + 1 << ',' << j + 1 << ','
                    << format_double(sum.median) << ',' << format_double(sum.lower95) << ','
                    << format_double(sum.upper95) << ',' << format_double(sum.range) << '\n';
            }
        }
    }
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw ConfigError("cannot write '" + tmp.string() + "'");
        }
        out << content;
        if (!out.flush()) {
            throw ConfigError("write failed for '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace standgp
