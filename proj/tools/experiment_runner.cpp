#include "experiment_runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "stablemv/stablemv.hpp"

namespace stablemv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<ExperimentInfo>& experiments() {
    static const std::vector<ExperimentInfo> list{
        {"simulate", "solve the McKean-Vlasov equation by nested Picard iteration; transforms of the driving noise"},
        {"counterexample", "two solutions Z and 2Z of the total-variation counterexample; tail ratio"},
        {"limits", "damped subordinator functionals over a delta ladder against their proof envelopes"},
        {"kernel-check", "heat-kernel gradient scaling, perturbation bound, Duhamel residual"},
        {"metrics-selftest", "transport solver and distance estimators on random instances"},
        {"contraction", "contraction factor of the outer map across damping values"},
    };
    return list;
}

namespace {

// Reads keys of one config object, echoes them into `effective`, and reports
// whatever was not read as an unknown key.
class Section {
public:
    Section(const json* src, json* eff, std::string path, std::vector<std::string>* errors)
        : src_(src), eff_(eff), path_(std::move(path)), errors_(errors) {
        if (src_ && !src_->is_object()) {
            errors_->push_back("'" + name() + "' must be an object");
            src_ = nullptr;
        }
    }

    template <typename T>
    T get(const std::string& key, T def) {
        used_.insert(key);
        T v = def;
        if (src_ && src_->contains(key) && !(*src_)[key].is_null()) {
            try {
                v = (*src_)[key].template get<T>();
            } catch (const json::exception&) {
                errors_->push_back("'" + path_ + key + "' has the wrong type (got " + (*src_)[key].dump() + ")");
            }
        }
        (*eff_)[key] = v;
        return v;
    }

    template <typename T>
    std::optional<T> maybe(const std::string& key) {
        used_.insert(key);
        if (!src_ || !src_->contains(key) || (*src_)[key].is_null()) return std::nullopt;
        try {
            T v = (*src_)[key].template get<T>();
            (*eff_)[key] = v;
            return v;
        } catch (const json::exception&) {
            errors_->push_back("'" + path_ + key + "' has the wrong type (got " + (*src_)[key].dump() + ")");
            return std::nullopt;
        }
    }

    Section sub(const std::string& key) {
        used_.insert(key);
        (*eff_)[key] = json::object();
        const json* child = (src_ && src_->contains(key)) ? &(*src_)[key] : nullptr;
        return Section(child, &(*eff_)[key], path_ + key + ".", errors_);
    }

    void error(const std::string& msg) { errors_->push_back(msg); }

    void finish() {
        if (!src_) return;
        for (const auto& item : src_->items())
            if (!used_.count(item.key())) errors_->push_back("unknown key '" + path_ + item.key() + "'");
    }

private:
    std::string name() const { return path_.empty() ? "config" : path_.substr(0, path_.size() - 1); }

    const json* src_;
    json* eff_;
    std::string path_;
    std::vector<std::string>* errors_;
    std::set<std::string> used_;
};

struct InitialSpec {
    std::string kind = "dirac";
    std::vector<double> point;
    double sd = 1.0;
    std::size_t atoms = 1000;
    std::string file;
};

struct SimulateSpec {
    bool write_ensemble = false;
    std::size_t paths = 8;
    double moment_k = 1.2;
    std::size_t laplace_samples = 100000;
    std::vector<double> alphas, times{0.5, 1.0}, rs{0.5, 1.0, 2.0}, xis{0.5, 1.0, 2.0};
};

struct CounterexampleSpec {
    std::size_t calibration_samples = 1000000;
    std::size_t samples = 1000000;
    std::size_t grid_points = 10;
    double T = 1.0;
    std::vector<double> tail_x{10.0, 30.0, 50.0, 100.0};
    std::size_t tail_samples = 10000000;
};

struct KernelSpec {
    std::string check = "scaling";
    std::vector<double> scaling_eps{0.0, 1.0};
    std::size_t scaling_paths = 20000, scaling_steps = 256;
    std::vector<double> lambdas{1.0, 0.5, 0.25, 0.1, 0.01};
    double base_weight = 0.42, pert_eps = 0.5;
    std::size_t pert_paths = 20000, pert_steps = 200;
    std::string function = "tanh";
    std::vector<double> times{0.5};
    std::size_t duhamel_particles = 100000;
    std::vector<double> start;
    int gh_nodes = 24;
};

struct ContractionSpec {
    std::vector<double> deltas{5.0, 20.0, 80.0};
    double shift = 0.5;
};

struct SelftestSpec {
    std::size_t instances = 200;
    std::size_t test_functions = 1000;
    std::vector<double> kappas{0.5, 1.0, 1.5};
};

struct Parsed {
    std::string experiment;
    std::uint64_t seed = 1;
    std::optional<std::string> output;
    DeclaredConstants constants;
    int dim = 1;
    std::string coefficients = "builtin";
    BuiltinParams builtin;
    double constant_drift = 1.0;
    double T = 1.0;
    std::size_t steps = 200;
    SolverConfig solver;
    InitialSpec initial;
    SimulateSpec simulate;
    CounterexampleSpec counterexample;
    LimitPart part = LimitPart::I;
    LimitExperiment limits;
    KernelSpec kernel;
    ContractionSpec contraction;
    SelftestSpec selftest;
};

bool known_experiment(const std::string& name) {
    for (const auto& e : experiments())
        if (e.name == name) return true;
    return false;
}

Parsed parse(const json& raw, const Overrides& ov, json& eff, std::vector<std::string>& errors) {
    Parsed p;
    eff = json::object();
    Section top(&raw, &eff, "", &errors);
    p.experiment = top.get<std::string>("experiment", "");
    if (ov.experiment) p.experiment = *ov.experiment;
    eff["experiment"] = p.experiment;
    if (p.experiment.empty())
        errors.push_back("no experiment named (set 'experiment' or pass one on the command line)");
    else if (!known_experiment(p.experiment))
        errors.push_back("unknown experiment '" + p.experiment + "'");
    p.seed = top.get<std::uint64_t>("seed", 1);
    if (ov.seed) p.seed = *ov.seed;
    eff["seed"] = p.seed;
    p.output = top.maybe<std::string>("output");

    {
        auto m = top.sub("model");
        auto& c = p.constants;
        c.alpha = m.get("alpha", c.alpha);
        c.beta = m.get("beta", c.beta);
        c.k = m.get("k", c.k);
        c.eta = m.get("eta", c.eta);
        c.K1 = m.get("K1", c.K1);
        c.K2 = m.get("K2", c.K2);
        p.dim = m.get("dim", 1);
        p.coefficients = m.get<std::string>("coefficients", "builtin");
        p.builtin.c1 = m.get("c1", p.builtin.c1);
        p.builtin.c2 = m.get("c2", p.builtin.c2);
        p.builtin.c3 = m.get("c3", p.builtin.c3);
        p.constant_drift = m.get("constant_drift", p.constant_drift);
        m.finish();
        for (const auto& v : c.violations()) errors.push_back(v);
        if (p.dim < 1) errors.push_back("model.dim must be >= 1");
        const auto names = coefficient_names();
        if (std::find(names.begin(), names.end(), p.coefficients) == names.end())
            errors.push_back("unknown coefficient set '" + p.coefficients + "'");
    }
    {
        auto g = top.sub("grid");
        p.T = g.get("T", 1.0);
        p.steps = g.get<std::size_t>("steps", 200);
        g.finish();
        if (!(p.T > 0.0) || p.steps == 0) errors.push_back("grid needs T > 0 and steps >= 1");
    }
    {
        auto s = top.sub("solver");
        auto& sc = p.solver;
        sc.n_particles = s.get("particles", sc.n_particles);
        sc.delta = s.get("delta", sc.delta);
        sc.tol_inner = s.get("tol_inner", sc.tol_inner);
        sc.tol_outer = s.get("tol_outer", sc.tol_outer);
        sc.max_inner = s.get("max_inner", sc.max_inner);
        sc.max_outer = s.get("max_outer", sc.max_outer);
        sc.bins = s.get("bins", sc.bins);
        sc.ot_subsample = s.get("ot_subsample", sc.ot_subsample);
        sc.warm_start = s.get("warm_start", sc.warm_start);
        s.finish();
        sc.seed = p.seed;
        if (p.T > 0.0 && p.steps > 0) sc.grid = TimeGrid::uniform(p.T, p.steps);
        try {
            sc.validate();
        } catch (const Error& e) {
            errors.push_back(std::string("solver: ") + e.what());
        }
    }
    {
        auto s = top.sub("initial");
        auto& in = p.initial;
        in.kind = s.get<std::string>("kind", "dirac");
        in.point = s.get("point", std::vector<double>(static_cast<std::size_t>(std::max(p.dim, 1)), 0.0));
        in.sd = s.get("sd", 1.0);
        in.atoms = s.get<std::size_t>("atoms", 1000);
        in.file = s.get<std::string>("file", "");
        s.finish();
        if (in.kind != "dirac" && in.kind != "normal" && in.kind != "csv")
            errors.push_back("initial.kind must be dirac, normal or csv");
        if (in.point.size() != static_cast<std::size_t>(p.dim)) errors.push_back("initial.point must have model.dim entries");
        if (in.kind == "normal" && (!(in.sd > 0.0) || in.atoms < 1)) errors.push_back("initial: normal law needs sd > 0 and atoms >= 1");
        if (in.kind == "csv" && in.file.empty()) errors.push_back("initial: csv law needs 'file'");
    }
    {
        auto s = top.sub("simulate");
        auto& sm = p.simulate;
        sm.write_ensemble = s.get("write_ensemble", sm.write_ensemble);
        sm.paths = s.get("paths", sm.paths);
        sm.moment_k = s.get("moment_k", p.constants.k);
        sm.laplace_samples = s.get("transform_samples", sm.laplace_samples);
        sm.alphas = s.get("transform_alphas", std::vector<double>{p.constants.alpha});
        sm.times = s.get("transform_times", sm.times);
        sm.rs = s.get("laplace_r", sm.rs);
        sm.xis = s.get("charfn_xi", sm.xis);
        s.finish();
        for (double a : sm.alphas)
            if (!(a > 1.0 && a < 2.0)) errors.push_back("(A1) requires alpha in (1,2), got simulate.transform_alphas entry " + csv::format(a));
        for (double t : sm.times)
            if (!(t > 0.0)) errors.push_back("simulate.transform_times must be > 0");
        for (double r : sm.rs)
            if (!(r > 0.0)) errors.push_back("simulate.laplace_r must be > 0");
        if (sm.laplace_samples < 1) errors.push_back("simulate.transform_samples must be >= 1");
        if (!(sm.moment_k > 0.0)) errors.push_back("simulate.moment_k must be > 0");
    }
    {
        auto s = top.sub("counterexample");
        auto& ce = p.counterexample;
        ce.calibration_samples = s.get("calibration_samples", ce.calibration_samples);
        ce.samples = s.get("samples", ce.samples);
        ce.grid_points = s.get("grid_points", ce.grid_points);
        ce.T = s.get("T", ce.T);
        ce.tail_x = s.get("tail_x", ce.tail_x);
        ce.tail_samples = s.get("tail_samples", ce.tail_samples);
        s.finish();
        if (ce.grid_points < 1 || !(ce.T > 0.0)) errors.push_back("counterexample needs grid_points >= 1 and T > 0");
        if (ce.tail_samples < 100000) errors.push_back("counterexample.tail_samples must be >= 1e5");
        for (double x : ce.tail_x)
            if (!(x > 0.0)) errors.push_back("counterexample.tail_x entries must be > 0");
    }
    {
        auto s = top.sub("limits");
        const auto part = s.get<std::string>("part", "i");
        if (part != "i" && part != "ii") errors.push_back("limits.part must be 'i' or 'ii'");
        p.part = part == "ii" ? LimitPart::II : LimitPart::I;
        auto& le = p.limits;
        le.alpha = p.constants.alpha;
        le.kappa = s.get("kappa", p.part == LimitPart::I ? 0.3 : 0.9);
        le.T = s.get("T", 1.0);
        le.deltas = s.get("deltas", le.deltas);
        le.epsilon = s.get("epsilon", le.epsilon);
        le.n_paths = s.get("paths", le.n_paths);
        le.steps = s.get("steps", le.steps);
        le.theta = s.maybe<double>("theta");
        le.seed = p.seed;
        s.finish();
        if (p.experiment == "limits") {
            try {
                le.validate(p.part);
            } catch (const Error& e) {
                errors.push_back(std::string("limits: ") + e.what());
            }
        }
    }
    {
        auto s = top.sub("kernel");
        auto& k = p.kernel;
        k.check = s.get<std::string>("check", k.check);
        if (k.check != "scaling" && k.check != "perturbation" && k.check != "duhamel")
            errors.push_back("kernel.check must be scaling, perturbation or duhamel");
        auto sc = s.sub("scaling");
        k.scaling_eps = sc.get("epsilons", k.scaling_eps);
        k.scaling_paths = sc.get("paths", k.scaling_paths);
        k.scaling_steps = sc.get("steps", k.scaling_steps);
        sc.finish();
        auto pe = s.sub("perturbation");
        k.lambdas = pe.get("lambdas", k.lambdas);
        k.base_weight = pe.get("base_weight", k.base_weight);
        k.pert_eps = pe.get("epsilon", k.pert_eps);
        k.pert_paths = pe.get("paths", k.pert_paths);
        k.pert_steps = pe.get("steps", k.pert_steps);
        pe.finish();
        auto du = s.sub("duhamel");
        k.function = du.get<std::string>("function", k.function);
        k.times = du.get("times", k.times);
        k.duhamel_particles = du.get("particles", k.duhamel_particles);
        k.start = du.get("start", std::vector<double>(static_cast<std::size_t>(std::max(p.dim, 1)), 0.0));
        k.gh_nodes = du.get("gh_nodes", k.gh_nodes);
        du.finish();
        s.finish();
        if (p.experiment == "kernel-check") {
            const double a = p.constants.alpha;
            for (double e : k.scaling_eps)
                if (!(e >= 0.0 && e < a)) errors.push_back("kernel.scaling.epsilons entries must lie in [0, alpha)");
            if (k.scaling_steps < 64) errors.push_back("kernel.scaling.steps must be >= 64 (four lags)");
            if (k.check == "perturbation" && p.dim != 1) errors.push_back("kernel perturbation check needs model.dim = 1");
            if (!(k.pert_eps >= 0.0 && k.pert_eps < a)) errors.push_back("kernel.perturbation.epsilon must lie in [0, alpha)");
            for (double l : k.lambdas)
                if (!(l * k.base_weight > 0.0 && l * k.base_weight < 1.0))
                    errors.push_back("kernel.perturbation: lambda * base_weight must lie in (0,1)");
            if (k.function != "tanh" && k.function != "constant") errors.push_back("kernel.duhamel.function must be tanh or constant");
            if (k.check == "duhamel" && p.dim > 2) errors.push_back("kernel duhamel check needs model.dim <= 2");
            if (k.start.size() != static_cast<std::size_t>(p.dim)) errors.push_back("kernel.duhamel.start must have model.dim entries");
            if (k.gh_nodes < 1) errors.push_back("kernel.duhamel.gh_nodes must be >= 1");
        }
    }
    {
        auto s = top.sub("contraction");
        p.contraction.deltas = s.get("deltas", p.contraction.deltas);
        p.contraction.shift = s.get("shift", p.contraction.shift);
        s.finish();
        if (p.experiment == "contraction") {
            if (p.contraction.deltas.size() < 3) errors.push_back("contraction.deltas needs >= 3 values");
            for (double d : p.contraction.deltas)
                if (!(d > 0.0)) errors.push_back("contraction.deltas must be > 0");
        }
    }
    {
        auto s = top.sub("metrics_selftest");
        p.selftest.instances = s.get("instances", p.selftest.instances);
        p.selftest.test_functions = s.get("test_functions", p.selftest.test_functions);
        p.selftest.kappas = s.get("kappas", p.selftest.kappas);
        s.finish();
        for (double k : p.selftest.kappas)
            if (!(k > 0.0)) errors.push_back("metrics_selftest.kappas must be > 0");
    }
    top.finish();
    return p;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return rng::splitmix64(seed ^ rng::splitmix64(tag)); }

CoefficientSet make_coeffs(const Parsed& p) {
    return make_coefficients(p.coefficients, p.dim, p.constants, p.builtin, p.constant_drift);
}

EmpiricalMeasure initial_law(const Parsed& p, const fs::path& config_dir) {
    const auto& in = p.initial;
    if (in.kind == "dirac") return EmpiricalMeasure::dirac(in.point);
    if (in.kind == "normal") {
        const auto d = static_cast<std::size_t>(p.dim);
        std::vector<double> atoms(in.atoms * d);
        for (std::size_t i = 0; i < in.atoms; ++i) {
            rng::Stream s(p.seed, rng::Purpose::InitialLaw, i, 1);
            for (std::size_t c = 0; c < d; ++c) atoms[i * d + c] = in.point[c] + in.sd * s.normal();
        }
        return EmpiricalMeasure::uniform(p.dim, std::move(atoms));
    }
    fs::path f(in.file);
    if (f.is_relative()) f = config_dir / f;
    std::ifstream is(f);
    if (!is) throw ConfigError("cannot open initial law file " + f.string());
    auto m = read_measure_csv(is);
    if (m.dim() != p.dim) throw ConfigError("initial law file dimension does not match model.dim");
    return m;
}

class Artifacts {
public:
    explicit Artifacts(fs::path dir) : dir_(std::move(dir)) {}

    std::ofstream open(const std::string& name) {
        std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + (dir_ / name).string());
        names_.push_back(name);
        return out;
    }
    void write_json(const std::string& name, const json& j) {
        auto out = open(name);
        out << j.dump(2) << '\n';
    }
    const std::vector<std::string>& names() const { return names_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::vector<std::string> names_;
};

json fit_json(const LinearFit& f) {
    return {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}, {"slope_stderr", f.slope_stderr}};
}

json metric_params(const SolverConfig& sc, const CoefficientSet& cs) {
    return {{"weighted_variation", "histogram on a box covering both compared flows"},
            {"bins_per_axis", sc.bins},
            {"wasserstein_subsample", sc.ot_subsample},
            {"eta", cs.constants.eta},
            {"k", cs.constants.k},
            {"note", "weighted variation between particle clouds is a binned estimate"}};
}

void run_simulate(const Parsed& p, const fs::path& config_dir, Artifacts& art) {
    const auto cs = make_coeffs(p);
    const auto gamma = initial_law(p, config_dir);
    const McKeanVlasovProblem prob(gamma, cs, p.solver);
    const auto sol = prob.solve();
    const auto& ens = *sol.ensemble;
    if (!(sol.flow == ens.law_flow())) throw NumericalError("solution flow differs from its ensemble law");
    {
        auto out = art.open("flow.csv");
        write_flow_csv(out, sol.flow);
    }
    const auto mb = moment_bound_report(ens, p.simulate.moment_k, gamma);
    json it{{"outer_iterations", sol.iterations},
            {"outer_residuals", sol.residuals},
            {"inner_iterations_total", sol.inner_iterations_total},
            {"inner_residuals", sol.inner_residuals},
            {"map_evaluations", sol.map_evaluations},
            {"delta", p.solver.delta},
            {"tol_inner", p.solver.tol_inner},
            {"tol_outer", p.solver.tol_outer},
            {"max_inner", p.solver.max_inner},
            {"max_outer", p.solver.max_outer},
            {"particles", p.solver.n_particles},
            {"coefficients", cs.name},
            {"estimator_params", metric_params(p.solver, cs)},
            {"moment_bound",
             {{"k", mb.k},
              {"sup_moment", mb.sup_moment},
              {"sup_moment_stderr", mb.sup_moment_stderr},
              {"sup_moment_winsorized", mb.sup_moment_winsorized},
              {"initial_moment", mb.initial_moment},
              {"ratio", mb.ratio}}}};
    art.write_json("iterations.json", it);
    if (p.simulate.write_ensemble) {
        auto out = art.open("ensemble.csv");
        csv::Writer w(out);
        std::vector<std::string> cols{"particle", "t"};
        for (int c = 1; c <= ens.dim(); ++c) cols.push_back("x_" + std::to_string(c));
        w.header(cols);
        for (std::size_t j = 0; j < ens.grid().size(); ++j)
            for (std::size_t i = 0; i < ens.particles(); ++i) {
                std::vector<double> row{static_cast<double>(i), ens.grid()[j]};
                for (double v : ens.state(j, i)) row.push_back(v);
                w.row(row);
            }
    }
    if (p.simulate.paths > 0) {
        const StableParams sp{p.constants.alpha, cs.noise_dim};
        const auto seed = derive_seed(p.seed, 0x70617468);
        std::vector<StablePath> paths;
        for (std::size_t q = 0; q < p.simulate.paths; ++q)
            paths.push_back(sample_stable_path(sp, sample_subordinator_path(sp, p.solver.grid, seed, q), seed, q));
        auto out = art.open("paths.csv");
        write_paths_csv(out, paths);
    }
    const auto& sm = p.simulate;
    {
        auto out = art.open("laplace.csv");
        csv::Writer w(out);
        w.header({"alpha", "t", "r", "estimate", "stderr", "exact"});
        for (double a : sm.alphas)
            for (double t : sm.times) {
                const auto s = sample_subordinator_marginal(a, t, sm.laplace_samples, derive_seed(p.seed, 0x6c61706c));
                for (double r : sm.rs) {
                    const auto e = empirical_laplace(s, r);
                    w.row(a, t, r, e.value, e.std_error, laplace_exact(a, r, t));
                }
            }
    }
    {
        auto out = art.open("charfn.csv");
        csv::Writer w(out);
        w.header({"alpha", "t", "xi", "estimate", "stderr", "exact"});
        for (double a : sm.alphas)
            for (double t : sm.times) {
                const StableParams sp{a, p.dim};
                const auto z = sample_stable_marginal(sp, t, sm.laplace_samples, derive_seed(p.seed, 0x63686172));
                for (double xi : sm.xis) {
                    std::vector<double> v(static_cast<std::size_t>(p.dim), 0.0);
                    v[0] = xi;
                    const auto e = empirical_charfn(z, v);
                    w.row(a, t, xi, e.value.real(), e.std_error, charfn_exact(a, std::abs(xi), t));
                }
            }
    }
}

void run_counterexample(const Parsed& p, Artifacts& art) {
    const auto& ce = p.counterexample;
    const double alpha = p.constants.alpha;
    const auto params = calibrate(alpha, ce.calibration_samples, p.seed, ce.T);
    const auto grid = TimeGrid::uniform(ce.T, ce.grid_points);
    const auto rep = verify_two_solutions(params, ce.samples, grid, derive_seed(p.seed, 0x76657269));
    json checks = json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"t", c.t}, {"c", c.c}, {"sigma", c.sigma}, {"stderr", c.std_error},
                          {"residual", c.residual}, {"within_3se", c.within_3se()}});
    json tails = json::array();
    {
        auto out = art.open("tail_ratio.csv");
        csv::Writer w(out);
        w.header({"x", "estimate", "stderr", "limit"});
        for (double x : ce.tail_x) {
            const auto e = tail_ratio(alpha, x, ce.tail_samples, derive_seed(p.seed, 0x7461696c));
            w.row(x, e.value, e.std_error, tail_ratio_limit(alpha));
            tails.push_back({{"x", x}, {"estimate", e.value}, {"stderr", e.std_error}, {"limit", tail_ratio_limit(alpha)}});
        }
    }
    art.write_json("counterexample.json", {{"alpha", alpha},
                                           {"M", params.M},
                                           {"a", params.a},
                                           {"b", params.b_coef},
                                           {"T", params.T},
                                           {"p_middle", params.p1},
                                           {"p_upper", params.p2},
                                           {"calibration_samples", params.n_calibration},
                                           {"samples", rep.n_samples},
                                           {"checks", checks},
                                           {"two_solutions_pass", rep.pass()},
                                           {"tail_ratio", tails}});
}

void run_limits(const Parsed& p, Artifacts& art) {
    const auto table = run_limit(p.part, p.limits);
    const auto part = to_string(p.part);
    {
        auto out = art.open("limit_" + part + ".csv");
        csv::Writer w(out);
        w.header({"delta", "estimate", "stderr", "envelope", "envelope_eps"});
        for (const auto& r : table.rows) w.row(r.delta, r.estimate, r.std_error, r.envelope, r.envelope_eps);
    }
    json rows = json::array();
    for (const auto& r : table.rows)
        rows.push_back({{"delta", r.delta}, {"estimate", r.estimate}, {"stderr", r.std_error}, {"argmax_t", r.argmax_t},
                        {"envelope", r.envelope}, {"envelope_eps", r.envelope_eps}, {"envelope_user_eps", r.envelope_user}});
    json exact = json::object(), mc = json::object();
    for (const auto& [k, v] : table.moments_exact) exact[k] = v;
    for (const auto& [k, v] : table.moments_mc) mc[k] = {{"estimate", v.value}, {"stderr", v.std_error}};
    json j{{"part", part},
           {"alpha", p.limits.alpha},
           {"kappa", p.limits.kappa},
           {"T", p.limits.T},
           {"epsilon", p.limits.epsilon},
           {"paths", p.limits.n_paths},
           {"steps", p.limits.steps},
           {"rows", rows},
           {"moments_exact", exact},
           {"moments_monte_carlo", mc},
           {"checks",
            {{"nonnegative", table.nonnegative()},
             {"nonincreasing", table.nonincreasing()},
             {"decays", table.decays()},
             {"dominated", table.dominated()}}},
           {"pass", table.pass()}};
    if (p.part == LimitPart::II) j["theta"] = p.limits.theta_value();
    art.write_json("limit_" + part + ".json", j);
}

void run_kernel(const Parsed& p, Artifacts& art) {
    const auto cs = make_coeffs(p);
    const auto& k = p.kernel;
    if (k.check == "scaling") {
        auto out = art.open("kernel_scaling.csv");
        csv::Writer w(out);
        w.header({"epsilon", "lag", "estimate", "stderr"});
        json fits = json::array();
        for (double e : k.scaling_eps) {
            const auto rep = gradient_scaling_check(cs, e, k.scaling_paths, derive_seed(p.seed, 0x7363616c), k.scaling_steps, p.T);
            for (const auto& r : rep.rows) w.row(e, r.lag, r.estimate, r.std_error);
            auto f = fit_json(rep.fit);
            f["epsilon"] = e;
            f["theory_slope"] = rep.theory_slope;
            f["fitted_constant"] = rep.fitted_constant();
            f["within_0.1"] = std::abs(rep.fit.slope - rep.theory_slope) <= 0.1;
            fits.push_back(f);
        }
        art.write_json("kernel_scaling.json", {{"check", "scaling"}, {"alpha", p.constants.alpha}, {"paths", k.scaling_paths},
                                               {"steps", k.scaling_steps}, {"fits", fits}});
    } else if (k.check == "perturbation") {
        const auto sweep = kernel_perturbation_sweep(cs, k.lambdas, k.base_weight, k.pert_eps, k.pert_paths,
                                                     derive_seed(p.seed, 0x70657274), k.pert_steps, p.T);
        auto out = art.open("kernel_perturbation.csv");
        csv::Writer w(out);
        w.header({"lambda", "weight", "lhs", "rhs", "rhs_stderr", "ratio", "mv_violations"});
        json rows = json::array();
        for (const auto& r : sweep.rows) {
            w.row(r.lambda, r.weight, r.report.lhs, r.report.rhs, r.report.rhs_std_error, r.report.ratio,
                  static_cast<std::uint64_t>(r.report.mv_violations));
            rows.push_back({{"lambda", r.lambda}, {"ratio", r.report.ratio}, {"mv_violations", r.report.mv_violations}});
        }
        art.write_json("kernel_perturbation.json", {{"check", "perturbation"}, {"epsilon", k.pert_eps},
                                                    {"base_weight", k.base_weight}, {"ratio_spread", sweep.ratio_spread()},
                                                    {"rows", rows}});
    } else {
        const auto grid = TimeGrid::uniform(p.T, p.steps);
        const auto flow = MeasureFlow::constant(grid, EmpiricalMeasure::dirac(k.start));
        const auto f = k.function == "tanh" ? tanh_test_function() : constant_test_function(1.0);
        auto out = art.open("kernel_duhamel.csv");
        csv::Writer w(out);
        w.header({"t", "lhs", "q_term", "integral", "residual", "stderr"});
        json rows = json::array();
        const double floor = 5e-3;
        for (double t : k.times) {
            const auto r = duhamel_residual(f, cs, flow, flow, k.start, t, k.duhamel_particles,
                                            derive_seed(p.seed, 0x6475686d), k.gh_nodes);
            w.row(t, r.lhs, r.q_term, r.integral, r.residual, r.std_error);
            rows.push_back({{"t", t}, {"residual", r.residual}, {"stderr", r.std_error},
                            {"within_bound", std::abs(r.residual) < std::max(3.0 * r.std_error, floor)}});
        }
        art.write_json("kernel_duhamel.json", {{"check", "duhamel"}, {"function", f.name}, {"coefficients", cs.name},
                                               {"particles", k.duhamel_particles}, {"discretization_floor", floor},
                                               {"rows", rows}});
    }
}

void run_contraction(const Parsed& p, const fs::path& config_dir, Artifacts& art) {
    const auto cs = make_coeffs(p);
    const auto gamma = initial_law(p, config_dir);
    const auto rep = contraction_estimate(gamma, cs, p.solver, p.contraction.deltas, p.contraction.shift);
    {
        auto out = art.open("contraction.csv");
        csv::Writer w(out);
        w.header({"delta", "input_distance", "output_distance", "ratio", "envelope"});
        for (const auto& r : rep.rows) w.row(r.delta, r.input_distance, r.output_distance, r.ratio, r.envelope);
    }
    const double theory = -(1.0 - 1.0 / p.constants.alpha);
    art.write_json("contraction.json", {{"shift", rep.shift},
                                        {"fit", fit_json(rep.fit)},
                                        {"reference_slope", theory},
                                        {"slope_within_bound", rep.fit.slope <= theory + 0.15},
                                        {"nonincreasing", rep.nonincreasing},
                                        {"estimator_params", metric_params(p.solver, cs)}});
}

// Small self-contained audit of the distance code on random instances.
json run_selftest(const Parsed& p, Artifacts& art, bool& ok) {
    const auto& st = p.selftest;
    json records = json::array();
    double worst_sym = 0.0, worst_tri = 0.0, worst_dual = 0.0, worst_dom = 0.0;
    auto random_measure = [](rng::Stream& s, std::size_t n, int d) {
        std::vector<double> atoms(n * static_cast<std::size_t>(d)), w(n);
        for (auto& a : atoms) a = 2.0 * s.normal();
        double total = 0.0;
        for (auto& v : w) total += (v = s.exponential());
        for (auto& v : w) v /= total;
        w.back() = 1.0;
        for (std::size_t i = 0; i + 1 < n; ++i) w.back() -= w[i];
        return EmpiricalMeasure(d, std::move(atoms), std::move(w));
    };
    for (std::size_t q = 0; q < st.instances; ++q) {
        rng::Stream s(p.seed, rng::Purpose::Generic, q);
        const auto g = random_measure(s, 5, 2), h = random_measure(s, 5, 2), f = random_measure(s, 5, 2);
        for (double kappa : st.kappas) {
            const double gh = wasserstein(g, h, kappa), hg = wasserstein(h, g, kappa);
            const double gf = wasserstein(g, f, kappa), fh = wasserstein(f, h, kappa);
            worst_sym = std::max(worst_sym, std::abs(gh - hg));
            worst_tri = std::max(worst_tri, gh - gf - fh);
            if (q < 10)
                records.push_back({{"metric", "wasserstein"}, {"kappa", kappa}, {"value", gh},
                                   {"estimator_params", {{"solver", "transportation simplex"}, {"atoms", 5}, {"dim", 2}}}});
        }
        // Same atoms, different weights: W_1 <= ||.||_{1,var}.
        const auto h2 = EmpiricalMeasure(2, g.atoms(), h.weights());
        const std::vector<EmpiricalMeasure> pair{g, h2};
        const auto box = BinningSpec::covering(pair, 256);
        const double kv = weighted_variation(g, h2, 1.0, box);
        worst_dom = std::max(worst_dom, wasserstein(g, h2, 1.0) - kv);
        if (q < 10)
            records.push_back({{"metric", "weighted_variation"}, {"kappa", 1.0}, {"value", kv},
                               {"estimator_params", {{"bins_per_axis", 256}}}});
    }
    // Dual inequality for kappa <= 1 with f = min_j (c_j + |x - z_j|^kappa).
    for (std::size_t q = 0; q < st.test_functions; ++q) {
        rng::Stream s(p.seed, rng::Purpose::Probe, q);
        const auto g = random_measure(s, 5, 2), h = random_measure(s, 5, 2);
        const double kappa = 0.2 + 0.8 * s.uniform();
        std::array<std::array<double, 3>, 4> centers{};
        for (auto& c : centers) c = {2.0 * s.normal(), 2.0 * s.normal(), s.normal()};
        auto fn = [&](std::span<const double> x) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers)
                best = std::min(best, c[2] + std::pow(std::hypot(x[0] - c[0], x[1] - c[1]), kappa));
            return best;
        };
        double gf = 0.0, hf = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gf += g.weight(i) * fn(g.atom(i));
        for (std::size_t i = 0; i < h.size(); ++i) hf += h.weight(i) * fn(h.atom(i));
        worst_dual = std::max(worst_dual, std::abs(gf - hf) - wasserstein(g, h, kappa));
    }
    const double tol = 1e-8;
    json checks{{"symmetry", {{"max_violation", worst_sym}, {"pass", worst_sym <= tol}}},
                {"triangle", {{"max_violation", worst_tri}, {"pass", worst_tri <= tol}}},
                {"dual_inequality", {{"max_violation", worst_dual}, {"pass", worst_dual <= tol}}},
                {"wasserstein_below_weighted_variation", {{"max_violation", worst_dom}, {"pass", worst_dom <= tol}}}};
    ok = worst_sym <= tol && worst_tri <= tol && worst_dual <= tol && worst_dom <= tol;
    json j{{"instances", st.instances}, {"test_functions", st.test_functions}, {"records", records}, {"checks", checks}, {"pass", ok}};
    art.write_json("metrics_selftest.json", j);
    return j;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

}  // namespace

json read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

LoadedConfig load_config(const json& raw, const Overrides& ov) {
    LoadedConfig cfg;
    cfg.raw = raw;
    if (!raw.is_object()) {
        cfg.errors.push_back("config must be a JSON object");
        return cfg;
    }
    const auto p = parse(raw, ov, cfg.effective, cfg.errors);
    cfg.experiment = p.experiment;
    cfg.seed = p.seed;
    return cfg;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

fs::path output_directory(const LoadedConfig& cfg, const Overrides& ov) {
    fs::path out;
    if (ov.out)
        out = *ov.out;
    else if (cfg.effective.contains("output"))
        out = cfg.effective["output"].get<std::string>();
    else
        out = fs::path("runs") / cfg.experiment;
    if (out.is_relative()) {
        if (const char* root = std::getenv("STABLEMV_OUT_ROOT"); root && *root) out = fs::path(root) / out;
    }
    return out;
}

int run_experiment(const LoadedConfig& cfg, const fs::path& out_dir, unsigned threads) {
    if (!cfg.errors.empty()) {
        for (const auto& e : cfg.errors) std::cerr << "error: " << e << '\n';
        return 1;
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        std::cerr << "error: cannot create output directory " << out_dir << ": " << ec.message() << '\n';
        return 1;
    }
    set_thread_count(threads);
    std::vector<std::string> errors;
    json eff;
    const auto p = parse(cfg.effective, {}, eff, errors);
    const fs::path config_dir = cfg.config_dir.empty() ? fs::current_path() : cfg.config_dir;
    Artifacts art(out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    int code = 0;
    json diagnostics;
    try {
        if (p.experiment == "simulate")
            run_simulate(p, config_dir, art);
        else if (p.experiment == "counterexample")
            run_counterexample(p, art);
        else if (p.experiment == "limits")
            run_limits(p, art);
        else if (p.experiment == "kernel-check")
            run_kernel(p, art);
        else if (p.experiment == "contraction")
            run_contraction(p, config_dir, art);
        else if (p.experiment == "metrics-selftest") {
            bool ok = true;
            const auto j = run_selftest(p, art, ok);
            if (!ok) {
                code = 2;
                diagnostics = {{"kind", "selftest"}, {"message", "distance self-test failed"}, {"checks", j["checks"]}};
            }
        }
    } catch (const ConvergenceError& e) {
        code = 2;
        diagnostics = {{"kind", "convergence"}, {"message", e.what()}, {"residuals", e.residuals()}};
    } catch (const NumericalError& e) {
        code = 2;
        diagnostics = {{"kind", "numerical"}, {"message", e.what()}};
    } catch (const CalibrationError& e) {
        code = 2;
        diagnostics = {{"kind", "calibration"}, {"message", e.what()}};
    } catch (const EmptyDataError& e) {
        code = 2;
        diagnostics = {{"kind", "empty_data"}, {"message", e.what()}};
    } catch (const CapacityError& e) {
        code = 2;
        diagnostics = {{"kind", "capacity"}, {"message", e.what()}};
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        code = 1;
    }
    if (code == 2) {
        std::cerr << "numerical failure: " << diagnostics["message"].get<std::string>() << '\n';
        art.write_json("diagnostics.json", diagnostics);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json manifest{{"experiment", p.experiment},
                  {"version", kVersion},
                  {"seed", p.seed},
                  {"config_hash", hex64(fnv1a(cfg.effective.dump()))},
                  {"config", cfg.effective},
                  {"threads", thread_count()},
                  {"wall_time_seconds", wall},
                  {"exit_code", code},
                  {"artifacts", art.names()}};
    std::ofstream(out_dir / "manifest.json", std::ios::binary | std::ios::trunc) << manifest.dump(2) << '\n';
    return code;
}

}  // namespace stablemv::cli
