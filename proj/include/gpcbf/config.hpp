#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcbf/cbf.hpp"
#include "gpcbf/controller.hpp"
#include "gpcbf/dynamics.hpp"
#include "gpcbf/errors.hpp"
#include "gpcbf/gp.hpp"

namespace gpcbf {

enum class PlantKind { Cruise, Quadrotor };

/// Everything a reproducible run needs, in sections mirroring the modules.
struct ScenarioConfig {
    // [plant]
    PlantKind kind{PlantKind::Cruise};
    CruiseParams cruise;
    QuadrotorParams quad;
    VectorXd input_lo;
    VectorXd input_hi;
    VectorXd x0;  // cruise: (v, z); quadrotor: (p, v) with R = I
    double m_xdot{25.0};

    // [cbf]
    double alpha_slope{1.0};
    double radius{2.0};
    double he_alpha{1.0};
    double lambda{1.0};
    PositionGradTerm grad_term{PositionGradTerm::HpGradient};
    double velocity_scale{10.0};

    // [gp]
    double noise_std{0.05};
    double rkhs_bound{2.0};
    double delta{0.05};
    int n_init{10};
    bool retain_bootstrap{true};
    int hyper_starts{8};
    GpHyperBounds hyper_bounds;
    bool kinematic_prior{true};
    double bootstrap_dt{0.05};
    double bootstrap_input_scale{1.0};

    // [controller]
    SampleIntervalMode interval_mode{SampleIntervalMode::Fixed};
    double sample_dt{1e-3};
    int delta_n{400};
    double c_i{1.0};
    double c_beta{1.0};
    double epsilon{0.5};
    double control_period{0.0};
    double kkt_tol{1e-6};
    int max_iterations{200};

    // [nominal]
    double gain_p{10.0};
    double gain_d{0.0};
    VectorXd target;

    // [sim]
    double duration{100.0};
    double integrator_dt{1e-3};
    std::uint64_t seed{0};

    // [baseline]
    ExploreMethod method{ExploreMethod::Ucb};

    // [sweep]
    std::vector<double> sweep_frequencies{20.0, 100.0, 500.0, 1000.0};
    int sweep_trials{20};
    double sweep_duration{15.0};
    VectorXd ic_lo;
    VectorXd ic_hi;

    // [output]
    std::string trace_path;

    void validate() const {
        if (!(duration >= 0.0)) throw ContractViolation("config: duration must be nonnegative");
        if (!(integrator_dt > 0.0)) throw ContractViolation("config: integrator_dt must be positive");
        if (interval_mode == SampleIntervalMode::Fixed && sample_dt < integrator_dt - 1e-15)
            throw ContractViolation("config: sample_dt must be at least integrator_dt");
        if (input_lo.size() != input_hi.size() ||
            (input_lo.array() > input_hi.array()).any())
            throw ContractViolation("config: input box is empty");
        if (!(noise_std > 0.0) || !(rkhs_bound > 0.0) || !(delta > 0.0 && delta < 1.0))
            throw ContractViolation("config: gp constants out of range");
        if (!(epsilon > 0.0) || delta_n < 1)
            throw ContractViolation("config: controller constants out of range");
        const int expect_x0 = kind == PlantKind::Cruise ? 2 : 6;
        if (x0.size() != expect_x0) throw ContractViolation("config: x0 has wrong dimension");
        if (ic_lo.size() != expect_x0 || ic_hi.size() != expect_x0)
            throw ContractViolation("config: sweep initial-condition box has wrong dimension");
    }
};

inline ScenarioConfig cruise_default_config() {
    ScenarioConfig c;
    c.kind = PlantKind::Cruise;
    c.input_lo = VectorXd::Constant(1, -4000.0);
    c.input_hi = VectorXd::Constant(1, 4000.0);
    c.x0 = (Eigen::Vector2d() << 20.0, 50.0).finished();
    c.m_xdot = 25.0;
    c.alpha_slope = 1.0;
    c.rkhs_bound = 5.0;
    c.hyper_bounds = GpHyperBounds{0.05, 30.0, 20.0, 60.0};
    c.delta_n = 600;
    c.gain_p = 500.0;
    c.target = VectorXd();
    c.ic_lo = (Eigen::Vector2d() << 16.0, 42.0).finished();
    c.ic_hi = (Eigen::Vector2d() << 22.0, 55.0).finished();
    return c;
}

inline ScenarioConfig quadrotor_default_config() {
    ScenarioConfig c;
    c.kind = PlantKind::Quadrotor;
    c.input_lo = (Eigen::Vector4d() << -120.0, -1.0, -1.0, -1.0).finished();
    c.input_hi = (Eigen::Vector4d() << 30.0, 1.0, 1.0, 1.0).finished();
    c.x0 = (Eigen::VectorXd(6) << 0.5, 0.0, 1.2, 0.0, 0.0, 0.0).finished();
    c.m_xdot = 140.0;
    c.radius = 2.0;
    c.he_alpha = 1.0;
    c.lambda = 0.5;
    c.velocity_scale = 4.0;
    c.alpha_slope = 2.0;
    c.noise_std = 0.01;
    c.rkhs_bound = 2.0;
    c.hyper_bounds = GpHyperBounds{1e-3, 30.0, 1.0, 30.0};
    c.hyper_starts = 4;
    c.delta_n = 400;
    c.control_period = 5e-3;
    c.bootstrap_input_scale = 0.6;
    c.bootstrap_dt = 0.02;
    c.gain_p = 2.0;
    c.gain_d = 3.0;
    c.target = (Eigen::Vector3d() << 0.0, 0.0, 1.2).finished();
    c.duration = 50.0;
    c.sweep_duration = 10.0;
    c.ic_lo = (Eigen::VectorXd(6) << -0.5, -0.5, 1.0, 0.0, 0.0, 0.0).finished();
    c.ic_hi = (Eigen::VectorXd(6) << 0.5, 0.5, 1.4, 0.0, 0.0, 0.0).finished();
    return c;
}

// ---------------------------------------------------------------------------
// Key-value text format

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_list(const VectorXd& v) {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

inline std::string format_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (!cell.empty()) out.push_back(std::stod(cell));
    }
    return out;
}

inline VectorXd to_vector(const std::vector<double>& v) {
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

}  // namespace detail

inline std::string serialize_config(const ScenarioConfig& c) {
    using detail::format_double;
    using detail::format_list;
    std::ostringstream os;
    os << "[plant]\n";
    os << "kind = " << (c.kind == PlantKind::Cruise ? "cruise" : "quadrotor") << "\n";
    os << "mass = " << format_double(c.cruise.mass) << "\n";
    os << "rolling0 = " << format_double(c.cruise.rolling0) << "\n";
    os << "rolling1 = " << format_double(c.cruise.rolling1) << "\n";
    os << "rolling2 = " << format_double(c.cruise.rolling2) << "\n";
    os << "lead_speed = " << format_double(c.cruise.lead_speed) << "\n";
    os << "headway = " << format_double(c.cruise.headway) << "\n";
    os << "desired_speed = " << format_double(c.cruise.desired_speed) << "\n";
    os << "gravity = " << format_double(c.quad.gravity) << "\n";
    os << "ground_effect_strength = " << format_double(c.quad.ground_effect_strength) << "\n";
    os << "rotor_radius = " << format_double(c.quad.rotor_radius) << "\n";
    os << "thrust_bound = " << format_double(c.quad.thrust_bound) << "\n";
    os << "altitude_gain = " << format_double(c.quad.altitude_gain) << "\n";
    os << "input_lo = " << format_list(c.input_lo) << "\n";
    os << "input_hi = " << format_list(c.input_hi) << "\n";
    os << "x0 = " << format_list(c.x0) << "\n";
    os << "m_xdot = " << format_double(c.m_xdot) << "\n";
    os << "\n[cbf]\n";
    os << "alpha_slope = " << format_double(c.alpha_slope) << "\n";
    os << "radius = " << format_double(c.radius) << "\n";
    os << "he_alpha = " << format_double(c.he_alpha) << "\n";
    os << "lambda = " << format_double(c.lambda) << "\n";
    os << "grad_term = " << (c.grad_term == PositionGradTerm::HpGradient ? "hp" : "he") << "\n";
    os << "velocity_scale = " << format_double(c.velocity_scale) << "\n";
    os << "\n[gp]\n";
    os << "noise_std = " << format_double(c.noise_std) << "\n";
    os << "rkhs_bound = " << format_double(c.rkhs_bound) << "\n";
    os << "delta = " << format_double(c.delta) << "\n";
    os << "n_init = " << c.n_init << "\n";
    os << "retain_bootstrap = " << (c.retain_bootstrap ? "true" : "false") << "\n";
    os << "hyper_starts = " << c.hyper_starts << "\n";
    os << "sigma_lo = " << format_double(c.hyper_bounds.sigma_lo) << "\n";
    os << "sigma_hi = " << format_double(c.hyper_bounds.sigma_hi) << "\n";
    os << "length_lo = " << format_double(c.hyper_bounds.length_lo) << "\n";
    os << "length_hi = " << format_double(c.hyper_bounds.length_hi) << "\n";
    os << "kinematic_prior = " << (c.kinematic_prior ? "true" : "false") << "\n";
    os << "bootstrap_dt = " << format_double(c.bootstrap_dt) << "\n";
    os << "bootstrap_input_scale = " << format_double(c.bootstrap_input_scale) << "\n";
    os << "\n[controller]\n";
    os << "interval_mode = " << (c.interval_mode == SampleIntervalMode::Fixed ? "fixed" : "theorem")
       << "\n";
    os << "sample_dt = " << format_double(c.sample_dt) << "\n";
    os << "delta_n = " << c.delta_n << "\n";
    os << "c_i = " << format_double(c.c_i) << "\n";
    os << "c_beta = " << format_double(c.c_beta) << "\n";
    os << "epsilon = " << format_double(c.epsilon) << "\n";
    os << "control_period = " << format_double(c.control_period) << "\n";
    os << "kkt_tol = " << format_double(c.kkt_tol) << "\n";
    os << "max_iterations = " << c.max_iterations << "\n";
    os << "\n[nominal]\n";
    os << "gain_p = " << format_double(c.gain_p) << "\n";
    os << "gain_d = " << format_double(c.gain_d) << "\n";
    os << "target = " << format_list(c.target) << "\n";
    os << "\n[sim]\n";
    os << "duration = " << format_double(c.duration) << "\n";
    os << "integrator_dt = " << format_double(c.integrator_dt) << "\n";
    os << "seed = " << c.seed << "\n";
    os << "\n[baseline]\n";
    os << "method = " << (c.method == ExploreMethod::Ucb ? "ucb" : "random") << "\n";
    os << "\n[sweep]\n";
    os << "frequencies = " << format_list(c.sweep_frequencies) << "\n";
    os << "trials = " << c.sweep_trials << "\n";
    os << "sweep_duration = " << format_double(c.sweep_duration) << "\n";
    os << "ic_lo = " << format_list(c.ic_lo) << "\n";
    os << "ic_hi = " << format_list(c.ic_hi) << "\n";
    os << "\n[output]\n";
    os << "trace = " << c.trace_path << "\n";
    return os.str();
}

inline ScenarioConfig parse_config(std::istream& is) {
    // Start from the matching plant defaults so omitted keys keep paper values.
    std::map<std::string, std::map<std::string, std::string>> raw;
    std::string line, section;
    while (std::getline(is, line)) {
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractViolation("config: expected 'key = value', got: " + line);
        raw[section][detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }

    ScenarioConfig c;
    const auto plant_kind = raw["plant"].count("kind") ? raw["plant"]["kind"] : "cruise";
    if (plant_kind == "cruise") c = cruise_default_config();
    else if (plant_kind == "quadrotor") c = quadrotor_default_config();
    else throw ContractViolation("config: unknown plant kind: " + plant_kind);

    auto get = [&](const std::string& sec, const std::string& key, auto setter) {
        auto s = raw.find(sec);
        if (s == raw.end()) return;
        auto k = s->second.find(key);
        if (k == s->second.end()) return;
        setter(k->second);
        s->second.erase(k);
    };
    auto dbl = [](double& target) {
        return [&target](const std::string& v) { target = std::stod(v); };
    };
    auto integer = [](int& target) {
        return [&target](const std::string& v) { target = std::stoi(v); };
    };
    auto boolean = [](bool& target) {
        return [&target](const std::string& v) {
            if (v != "true" && v != "false") throw ContractViolation("config: expected true/false");
            target = v == "true";
        };
    };
    auto vec = [](VectorXd& target) {
        return [&target](const std::string& v) { target = detail::to_vector(detail::parse_list(v)); };
    };

    get("plant", "kind", [](const std::string&) {});
    get("plant", "mass", dbl(c.cruise.mass));
    get("plant", "rolling0", dbl(c.cruise.rolling0));
    get("plant", "rolling1", dbl(c.cruise.rolling1));
    get("plant", "rolling2", dbl(c.cruise.rolling2));
    get("plant", "lead_speed", dbl(c.cruise.lead_speed));
    get("plant", "headway", dbl(c.cruise.headway));
    get("plant", "desired_speed", dbl(c.cruise.desired_speed));
    get("plant", "gravity", dbl(c.quad.gravity));
    get("plant", "ground_effect_strength", dbl(c.quad.ground_effect_strength));
    get("plant", "rotor_radius", dbl(c.quad.rotor_radius));
    get("plant", "thrust_bound", dbl(c.quad.thrust_bound));
    get("plant", "altitude_gain", dbl(c.quad.altitude_gain));
    get("plant", "input_lo", vec(c.input_lo));
    get("plant", "input_hi", vec(c.input_hi));
    get("plant", "x0", vec(c.x0));
    get("plant", "m_xdot", dbl(c.m_xdot));

    get("cbf", "alpha_slope", dbl(c.alpha_slope));
    get("cbf", "radius", dbl(c.radius));
    get("cbf", "he_alpha", dbl(c.he_alpha));
    get("cbf", "lambda", dbl(c.lambda));
    get("cbf", "grad_term", [&](const std::string& v) {
        if (v == "hp") c.grad_term = PositionGradTerm::HpGradient;
        else if (v == "he") c.grad_term = PositionGradTerm::HeGradient;
        else throw ContractViolation("config: grad_term must be hp or he");
    });
    get("cbf", "velocity_scale", dbl(c.velocity_scale));

    get("gp", "noise_std", dbl(c.noise_std));
    get("gp", "rkhs_bound", dbl(c.rkhs_bound));
    get("gp", "delta", dbl(c.delta));
    get("gp", "n_init", integer(c.n_init));
    get("gp", "retain_bootstrap", boolean(c.retain_bootstrap));
    get("gp", "hyper_starts", integer(c.hyper_starts));
    get("gp", "sigma_lo", dbl(c.hyper_bounds.sigma_lo));
    get("gp", "sigma_hi", dbl(c.hyper_bounds.sigma_hi));
    get("gp", "length_lo", dbl(c.hyper_bounds.length_lo));
    get("gp", "length_hi", dbl(c.hyper_bounds.length_hi));
    get("gp", "kinematic_prior", boolean(c.kinematic_prior));
    get("gp", "bootstrap_dt", dbl(c.bootstrap_dt));
    get("gp", "bootstrap_input_scale", dbl(c.bootstrap_input_scale));

    get("controller", "interval_mode", [&](const std::string& v) {
        if (v == "fixed") c.interval_mode = SampleIntervalMode::Fixed;
        else if (v == "theorem") c.interval_mode = SampleIntervalMode::Theorem;
        else throw ContractViolation("config: interval_mode must be fixed or theorem");
    });
    get("controller", "sample_dt", dbl(c.sample_dt));
    get("controller", "delta_n", integer(c.delta_n));
    get("controller", "c_i", dbl(c.c_i));
    get("controller", "c_beta", dbl(c.c_beta));
    get("controller", "epsilon", dbl(c.epsilon));
    get("controller", "control_period", dbl(c.control_period));
    get("controller", "kkt_tol", dbl(c.kkt_tol));
    get("controller", "max_iterations", integer(c.max_iterations));

    get("nominal", "gain_p", dbl(c.gain_p));
    get("nominal", "gain_d", dbl(c.gain_d));
    get("nominal", "target", vec(c.target));

    get("sim", "duration", dbl(c.duration));
    get("sim", "integrator_dt", dbl(c.integrator_dt));
    get("sim", "seed",
        [&](const std::string& v) { c.seed = static_cast<std::uint64_t>(std::stoull(v)); });

    get("baseline", "method", [&](const std::string& v) {
        if (v == "ucb") c.method = ExploreMethod::Ucb;
        else if (v == "random") c.method = ExploreMethod::Random;
        else throw ContractViolation("config: method must be ucb or random");
    });

    get("sweep", "frequencies",
        [&](const std::string& v) { c.sweep_frequencies = detail::parse_list(v); });
    get("sweep", "trials", integer(c.sweep_trials));
    get("sweep", "sweep_duration", dbl(c.sweep_duration));
    get("sweep", "ic_lo", vec(c.ic_lo));
    get("sweep", "ic_hi", vec(c.ic_hi));

    get("output", "trace", [&](const std::string& v) { c.trace_path = v; });

    for (const auto& [sec, keys] : raw)
        for (const auto& [key, value] : keys)
            if (!(sec == "plant" && key == "kind"))
                throw ContractViolation("config: unknown key [" + sec + "] " + key);

    c.validate();
    return c;
}

inline ScenarioConfig parse_config(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ContractViolation("config: cannot open " + path);
    return parse_config(f);
}

inline void save_config(const ScenarioConfig& c, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ContractViolation("config: cannot write " + path);
    f << serialize_config(c);
}

}  // namespace gpcbf
