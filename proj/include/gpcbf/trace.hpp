#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcbf/controller.hpp"
#include "gpcbf/errors.hpp"

namespace gpcbf {

struct TraceRow {
    double t{0.0};
    VectorXd x;
    VectorXd u;
    VectorXd h;  // one value per CBF
    int mode{0};  // 0 filtering, 1 exploring
    bool feasible{true};
    double margin{0.0};
    double slack{0.0};  // constraint LHS minus RHS at the applied input
    double beta{0.0};
    int gp_size{0};
};

struct TraceSummary {
    double min_h{std::numeric_limits<double>::infinity()};
    double recovery_time{0.0};  // first instant after which filtering persists
    bool failure{false};        // min_h < 0
    int samples_collected{0};
    std::string error;
};

struct SimTrace {
    int state_dim{0};
    int input_dim{0};
    int cbf_count{0};
    std::vector<TraceRow> rows;
    TraceSummary summary;

    void recompute_summary(int initial_gp_size) {
        summary.min_h = std::numeric_limits<double>::infinity();
        summary.recovery_time = 0.0;
        for (const auto& r : rows) summary.min_h = std::min(summary.min_h, r.h.minCoeff());
        if (rows.empty()) summary.min_h = std::numeric_limits<double>::quiet_NaN();
        summary.failure = !rows.empty() && summary.min_h < 0.0;
        for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
            if (it->mode != 0) {
                summary.recovery_time = it->t;
                break;
            }
        }
        summary.samples_collected = rows.empty() ? 0 : rows.back().gp_size - initial_gp_size;
    }
};

// ---------------------------------------------------------------------------
// CSV persistence. Column layout: t, x(1..n), u(1..m), h(1..k), mode,
// feasible, margin, slack, beta, gp_size. Header line mandatory.

namespace detail {

inline void put_value(std::string& out, double v, char sep) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
    out.push_back(sep);
}

}  // namespace detail

inline void write_trace_csv(const SimTrace& trace, std::ostream& os) {
    std::string header = "t";
    for (int i = 0; i < trace.state_dim; ++i) header += ",x" + std::to_string(i + 1);
    for (int j = 0; j < trace.input_dim; ++j) header += ",u" + std::to_string(j + 1);
    for (int k = 0; k < trace.cbf_count; ++k) header += ",h" + std::to_string(k + 1);
    header += ",mode,feasible,margin,slack,beta,gp_size\n";
    os << header;
    std::string line;
    for (const auto& r : trace.rows) {
        line.clear();
        detail::put_value(line, r.t, ',');
        for (int i = 0; i < trace.state_dim; ++i) detail::put_value(line, r.x[i], ',');
        for (int j = 0; j < trace.input_dim; ++j) detail::put_value(line, r.u[j], ',');
        for (int k = 0; k < trace.cbf_count; ++k) detail::put_value(line, r.h[k], ',');
        line += std::to_string(r.mode);
        line.push_back(',');
        line += r.feasible ? "1" : "0";
        line.push_back(',');
        detail::put_value(line, r.margin, ',');
        detail::put_value(line, r.slack, ',');
        detail::put_value(line, r.beta, ',');
        line += std::to_string(r.gp_size);
        line.push_back('\n');
        os << line;
    }
}

inline void write_trace_csv(const SimTrace& trace, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ContractViolation("write_trace_csv: cannot open " + path);
    write_trace_csv(trace, f);
}

inline SimTrace read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ContractViolation("read_trace_csv: missing header");
    SimTrace trace;
    {
        std::stringstream header(line);
        std::string col;
        while (std::getline(header, col, ',')) {
            if (col.rfind('x', 0) == 0) ++trace.state_dim;
            else if (col.rfind('u', 0) == 0) ++trace.input_dim;
            else if (col.rfind('h', 0) == 0) ++trace.cbf_count;
        }
    }
    const int n = trace.state_dim, m = trace.input_dim, k = trace.cbf_count;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
        if (static_cast<int>(vals.size()) != 1 + n + m + k + 6)
            throw ContractViolation("read_trace_csv: row width mismatch");
        TraceRow r;
        int idx = 0;
        r.t = vals[idx++];
        r.x.resize(n);
        for (int i = 0; i < n; ++i) r.x[i] = vals[idx++];
        r.u.resize(m);
        for (int j = 0; j < m; ++j) r.u[j] = vals[idx++];
        r.h.resize(k);
        for (int c = 0; c < k; ++c) r.h[c] = vals[idx++];
        r.mode = static_cast<int>(vals[idx++]);
        r.feasible = vals[idx++] != 0.0;
        r.margin = vals[idx++];
        r.slack = vals[idx++];
        r.beta = vals[idx++];
        r.gp_size = static_cast<int>(vals[idx++]);
        trace.rows.push_back(std::move(r));
    }
    return trace;
}

inline SimTrace read_trace_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ContractViolation("read_trace_csv: cannot open " + path);
    return read_trace_csv(f);
}

// ---------------------------------------------------------------------------
// Plot-data emission

struct SweepRow {
    double frequency{0.0};
    ExploreMethod method{ExploreMethod::Ucb};
    double failure_rate{0.0};
    double mean_samples{0.0};
    int trials{0};
};

inline void emit_plot_data(const SimTrace& trace, const std::string& dir) {
    {
        std::ofstream f(dir + "/h_vs_t.csv");
        if (!f) throw ContractViolation("emit_plot_data: cannot write under " + dir);
        std::string header = "t";
        for (int k = 0; k < trace.cbf_count; ++k) header += ",h" + std::to_string(k + 1);
        f << header << "\n";
        std::string line;
        for (const auto& r : trace.rows) {
            line.clear();
            detail::put_value(line, r.t, ',');
            for (int k = 0; k < trace.cbf_count; ++k)
                detail::put_value(line, r.h[k], k + 1 == trace.cbf_count ? '\n' : ',');
            f << line;
        }
    }
    {
        std::ofstream f(dir + "/worst_case_hdot_vs_t.csv");
        if (!f) throw ContractViolation("emit_plot_data: cannot write under " + dir);
        f << "t,constraint_slack\n";
        std::string line;
        for (const auto& r : trace.rows) {
            line.clear();
            detail::put_value(line, r.t, ',');
            detail::put_value(line, r.slack, '\n');
            f << line;
        }
    }
}

inline void emit_failure_rates(const std::vector<SweepRow>& table, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ContractViolation("emit_failure_rates: cannot write " + path);
    f << "frequency,method,failure_rate,mean_samples,trials\n";
    std::string line;
    for (const auto& row : table) {
        line.clear();
        detail::put_value(line, row.frequency, ',');
        line += row.method == ExploreMethod::Ucb ? "ucb" : "random";
        line.push_back(',');
        detail::put_value(line, row.failure_rate, ',');
        detail::put_value(line, row.mean_samples, ',');
        line += std::to_string(row.trials);
        line.push_back('\n');
        f << line;
    }
}

inline std::vector<SweepRow> read_failure_rates(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ContractViolation("read_failure_rates: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw ContractViolation("read_failure_rates: missing header");
    std::vector<SweepRow> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5) throw ContractViolation("read_failure_rates: row width mismatch");
        SweepRow r;
        r.frequency = std::stod(cells[0]);
        r.method = cells[1] == "ucb" ? ExploreMethod::Ucb : ExploreMethod::Random;
        r.failure_rate = std::stod(cells[2]);
        r.mean_samples = std::stod(cells[3]);
        r.trials = std::stoi(cells[4]);
        out.push_back(r);
    }
    return out;
}

}  // namespace gpcbf
