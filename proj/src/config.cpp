#include "standgp/config.hpp"

#include "standgp/error.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace standgp {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
    KeyValues kv;
    kv.source_ = source;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
        }
        if (kv.values_.contains(key)) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        kv.values_[key] = value;
        kv.lines_[key] = line_no;
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config '" + path.string() + "'");
    }
    return parse(in, path.string());
}

void KeyValues::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::vector<std::string> KeyValues::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
        if (k.starts_with(prefix)) out.push_back(k);
    }
    return out;
}

std::string KeyValues::where(const std::string& key) const {
    const auto it = lines_.find(key);
    return it == lines_.end() ? source_ : source_ + ":" + std::to_string(it->second);
}

std::optional<std::string> KeyValues::text(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    consumed_.insert(key);
    return it->second;
}

std::optional<double> KeyValues::real(const std::string& key) const {
    const auto s = text(key);
    if (!s) return std::nullopt;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s->c_str(), &end);
    if (s->empty() || end != s->c_str() + s->size() || errno == ERANGE || !std::isfinite(v)) {
        throw ConfigError(where(key) + ": '" + key + "' expects a finite number, got '" + *s + "'");
    }
    return v;
}

std::optional<long> KeyValues::integer(const std::string& key) const {
    const auto s = text(key);
    if (!s) return std::nullopt;
    errno = 0;
    char* end = nullptr;
    const long v = std::strtol(s->c_str(), &end, 10);
    if (s->empty() || end != s->c_str() + s->size() || errno == ERANGE) {
        throw ConfigError(where(key) + ": '" + key + "' expects an integer, got '" + *s + "'");
    }
    return v;
}

std::optional<std::uint64_t> KeyValues::unsigned64(const std::string& key) const {
    const auto s = text(key);
    if (!s) return std::nullopt;
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s->c_str(), &end, 10);
    if (s->empty() || s->front() == '-' || end != s->c_str() + s->size() || errno == ERANGE) {
        throw ConfigError(where(key) + ": '" + key + "' expects an unsigned integer, got '" + *s + "'");
    }
    return static_cast<std::uint64_t>(v);
}

std::optional<bool> KeyValues::boolean(const std::string& key) const {
    const auto s = text(key);
    if (!s) return std::nullopt;
    if (*s == "true" || *s == "1" || *s == "yes") return true;
    if (*s == "false" || *s == "0" || *s == "no") return false;
    throw ConfigError(where(key) + ": '" + key + "' expects true or false, got '" + *s + "'");
}

std::optional<std::vector<double>> KeyValues::reals(const std::string& key) const {
    auto s = text(key);
    if (!s) return std::nullopt;
    for (char& ch : *s) {
        if (ch == ',') ch = ' ';
    }
    std::istringstream ss(*s);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size() || !std::isfinite(v)) {
            throw ConfigError(where(key) + ": '" + key + "' expects a list of numbers, got '" + tok + "'");
        }
        out.push_back(v);
    }
    return out;
}

void KeyValues::reject_unknown() const {
    std::string unknown;
    for (const auto& [k, v] : values_) {
        if (!consumed_.contains(k)) unknown += (unknown.empty() ? "" : ", ") + where(k) + " '" + k + "'";
    }
    if (!unknown.empty()) {
        throw ConfigError("unknown config keys: " + unknown);
    }
}

std::string KeyValues::serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

ModelSpec parse_model_spec(const KeyValues& kv) {
    ModelSpec s;
    try {
        if (auto v = kv.text("model.variant")) s.variant = parse_variant(*v);
        if (auto v = kv.text("model.beta_dynamics")) s.beta_dynamics = parse_dynamics(*v);
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    if (auto v = kv.boolean("model.shared_sigma_eta")) s.shared_sigma_eta = *v;
    if (auto v = kv.real("model.m0")) s.m0 = *v;
    if (auto v = kv.real("model.sigma0")) s.sigma0 = *v;
    if (auto v = kv.real("model.r_eta")) s.r_eta = *v;
    if (auto v = kv.real("model.upsilon_eta")) s.upsilon_eta = *v;
    if (auto v = kv.real("model.r_gamma")) s.r_gamma = *v;
    if (auto v = kv.real("model.upsilon_gamma")) s.upsilon_gamma = *v;
    if (auto v = kv.real("model.phi_lo")) s.phi_default.lo = *v;
    if (auto v = kv.real("model.phi_hi")) s.phi_default.hi = *v;
    // model.phi_bounds.<species>.<class> = lo hi (1-based indices)
    const std::string prefix = "model.phi_bounds.";
    for (const auto& key : kv.keys_with_prefix(prefix)) {
        const std::string rest = key.substr(prefix.size());
        int i = 0;
        int j = 0;
        char dot = 0;
        std::istringstream ss(rest);
        if (!(ss >> i >> dot >> j) || dot != '.' || !ss.eof() || i < 1 || j < 1) {
            throw ConfigError("'" + key + "': expected model.phi_bounds.<species>.<class>");
        }
        const auto b = *kv.reals(key);
        if (b.size() != 2) {
            throw ConfigError("'" + key + "' expects two numbers: lo hi");
        }
        s.phi_overrides[{i - 1, j - 1}] = {b[0], b[1]};
    }
    return s;
}

void write_model_spec(KeyValues& kv, const ModelSpec& spec) {
    kv.set("model.variant", to_string(spec.variant));
    kv.set("model.beta_dynamics", to_string(spec.beta_dynamics));
    kv.set("model.shared_sigma_eta", spec.shared_sigma_eta ? "true" : "false");
    kv.set("model.m0", format_real(spec.m0));
    kv.set("model.sigma0", format_real(spec.sigma0));
    if (spec.r_eta) kv.set("model.r_eta", format_real(*spec.r_eta));
    kv.set("model.upsilon_eta", format_real(spec.upsilon_eta));
    if (spec.r_gamma) kv.set("model.r_gamma", format_real(*spec.r_gamma));
    kv.set("model.upsilon_gamma", format_real(spec.upsilon_gamma));
    kv.set("model.phi_lo", format_real(spec.phi_default.lo));
    kv.set("model.phi_hi", format_real(spec.phi_default.hi));
    for (const auto& [ij, b] : spec.phi_overrides) {
        kv.set("model.phi_bounds." + std::to_string(ij.first + 1) + "." + std::to_string(ij.second + 1),
               format_real(b.lo) + " " + format_real(b.hi));
    }
}

namespace {

void parse_sim(const KeyValues& kv, SimConfig& sim) {
    if (auto v = kv.unsigned64("sim.seed")) sim.seed = *v;
    sim = desk_scale_config(sim.seed);
    if (auto v = kv.integer("sim.n")) sim.n = static_cast<int>(*v);
    if (auto v = kv.integer("sim.n_holdout")) sim.n_holdout = static_cast<int>(*v);
    if (auto v = kv.integer("sim.q")) sim.q = static_cast<int>(*v);
    if (auto v = kv.integer("sim.m")) sim.m = static_cast<int>(*v);
    if (auto v = kv.integer("sim.p")) sim.p = static_cast<int>(*v);
    if (auto v = kv.real("sim.side")) sim.side = *v;
    if (auto v = kv.boolean("sim.spatial")) sim.spatial = *v;
    if (auto v = kv.boolean("sim.site_covariates")) sim.site_covariates = *v;
    if (auto v = kv.real("sim.area_factor")) sim.area_factor = *v;
    if (auto v = kv.real("sim.beta0_sd")) sim.beta0_sd = *v;
    if (auto v = kv.reals("sim.beta0_mean")) sim.beta0_mean = Eigen::Map<const Eigen::VectorXd>(v->data(), static_cast<Eigen::Index>(v->size()));
    if (auto v = kv.reals("sim.sigma_eta_diag")) {
        sim.sigma_eta = Eigen::Map<const Eigen::VectorXd>(v->data(), static_cast<Eigen::Index>(v->size())).asDiagonal();
    }
    // sim.A.<class> = lower triangle, row-major; sim.phi.<class> = one decay per species.
    for (const std::string part : {"A", "phi"}) {
        const std::string prefix = "sim." + part + ".";
        for (const auto& key : kv.keys_with_prefix(prefix)) {
            char* end = nullptr;
            const std::string idx = key.substr(prefix.size());
            const long j = std::strtol(idx.c_str(), &end, 10);
            if (idx.empty() || *end != '\0' || j < 1 || j > sim.m) {
                throw ConfigError("'" + key + "': class index must be in 1.." + std::to_string(sim.m));
            }
            const auto vals = *kv.reals(key);
            if (sim.theta.size() != static_cast<std::size_t>(sim.m)) {
                sim.theta.resize(static_cast<std::size_t>(sim.m));
            }
            auto& t = sim.theta[static_cast<std::size_t>(j - 1)];
            if (part == "A") {
                if (vals.size() != static_cast<std::size_t>(sim.q * (sim.q + 1) / 2)) {
                    throw ConfigError("'" + key + "' expects q(q+1)/2 lower-triangle entries");
                }
                t.A = Eigen::MatrixXd::Zero(sim.q, sim.q);
                std::size_t k = 0;
                for (int r = 0; r < sim.q; ++r) {
                    for (int c = 0; c <= r; ++c) t.A(r, c) = vals[k++];
                }
            } else {
                if (vals.size() != static_cast<std::size_t>(sim.q)) {
                    throw ConfigError("'" + key + "' expects q decay values");
                }
                t.phi = Eigen::Map<const Eigen::VectorXd>(vals.data(), sim.q);
            }
        }
    }
}

}  // namespace

RunConfig parse_run_config(const KeyValues& kv, const std::filesystem::path& base_dir) {
    RunConfig rc;
    if (auto v = kv.text("data.path")) rc.data.path = resolve(base_dir, *v);
    if (auto v = kv.text("data.holdout")) rc.data.holdout = resolve(base_dir, *v);
    if (auto v = kv.text("data.new_sites")) rc.data.new_sites = resolve(base_dir, *v);
    if (auto v = kv.real("data.area_factor")) rc.data.area_factor = *v;
    if (auto v = kv.text("data.distance_unit")) rc.data.distance_unit = *v;
    if (!(rc.data.area_factor > 0.0)) {
        throw ConfigError("data.area_factor must be positive");
    }

    rc.model = parse_model_spec(kv);

    if (auto v = kv.integer("chains.count")) {
        if (*v < 1) throw ConfigError("chains.count must be at least 1");
        rc.chains.count = static_cast<int>(*v);
    }
    const auto iters = kv.integer("chains.iters");
    const auto burnin = kv.integer("chains.burnin");
    if (iters) {
        rc.chains.schedule.iters = *iters;
        // Burn-in defaults to 20% of the iterations.
        rc.chains.schedule.burnin = *iters / 5;
    }
    if (burnin) rc.chains.schedule.burnin = *burnin;
    if (auto v = kv.integer("chains.thin")) rc.chains.schedule.thin = *v;
    rc.chains.schedule.validate();
    if (auto v = kv.unsigned64("chains.seed")) rc.chains.seed = *v;
    if (auto v = kv.integer("chains.threads")) {
        if (*v < 0) throw ConfigError("chains.threads must be non-negative");
        rc.chains.threads = static_cast<unsigned>(*v);
    }

    if (auto v = kv.integer("sampler.batch_size")) {
        if (*v < 1) throw ConfigError("sampler.batch_size must be positive");
        rc.sampler.batch_size = static_cast<int>(*v);
    }
    if (auto v = kv.boolean("sampler.adapt")) rc.sampler.adapt = *v;
    if (auto v = kv.real("sampler.initial_step")) rc.sampler.initial_step = *v;
    if (auto v = kv.real("sampler.initial_w_step")) rc.sampler.initial_w_step = *v;
    if (auto v = kv.boolean("sampler.interweave")) rc.sampler.interweave = *v;
    if ((rc.sampler.initial_step && !(*rc.sampler.initial_step > 0.0)) ||
        (rc.sampler.initial_w_step && !(*rc.sampler.initial_w_step > 0.0))) {
        throw ConfigError("sampler step sizes must be positive");
    }
    if (auto v = kv.text("sampler.w_proposal")) {
        if (*v == "isotropic") {
            rc.sampler.w_proposal = WProposal::Isotropic;
        } else if (*v == "prior_scaled") {
            rc.sampler.w_proposal = WProposal::PriorScaled;
        } else if (*v == "curvature") {
            rc.sampler.w_proposal = WProposal::Curvature;
        } else if (*v == "langevin") {
            rc.sampler.w_proposal = WProposal::Langevin;
        } else {
            throw ConfigError("sampler.w_proposal must be isotropic, prior_scaled, curvature or langevin, got '" + *v +
                              "'");
        }
    }

    if (auto v = kv.text("predict.fit")) rc.predict.fit = resolve(base_dir, *v);
    if (auto v = kv.integer("predict.draws")) {
        if (*v < 1) throw ConfigError("predict.draws must be positive");
        rc.predict.draws = *v;
    }
    if (auto v = kv.real("predict.scale")) rc.predict.scale = *v;

    if (auto v = kv.text("assess.fits")) {
        std::string list = *v;
        for (char& ch : list) {
            if (ch == ',') ch = ' ';
        }
        std::istringstream ss(list);
        std::string item;
        while (ss >> item) rc.assess.fits.push_back(resolve(base_dir, item));
    }
    if (auto v = kv.integer("assess.draws")) {
        if (*v < 1) throw ConfigError("assess.draws must be positive");
        rc.assess.draws = *v;
    }

    parse_sim(kv, rc.sim);
    kv.reject_unknown();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const KeyValues kv = KeyValues::load(path);
    return parse_run_config(kv, path.parent_path());
}

}  // namespace standgp
