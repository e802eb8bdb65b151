#include "calival/dataset_io.hpp"

#include "calival/errors.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

namespace calival {

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw InputError("CSV has no column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    CsvTable t;
    std::string line;
    bool have_header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        auto cells = split_line(line);
        if (!have_header) {
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size())
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(t.header.size()) + " fields, got " +
                             std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    if (!have_header) throw InputError("'" + path.string() + "' is empty");
    return t;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    auto emit = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& r : table.rows) emit(r);
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return fmt::format("{}", v);
}

std::string format_fixed(double v, int decimals) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{:.{}f}", v, decimals);
}

double parse_double(const std::string& s) {
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw InputError("not a number: '" + s + "'");
    return v;
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    if (t.header.size() < 4 || t.header.front() != "test_id" || t.header.back() != "domain")
        throw InputError("'" + path.string() + "' is not a dataset file (need test_id ... domain)");

    // Variance columns end in _var; they name the QoIs. Everything between
    // test_id and the QoI columns is a design variable.
    std::vector<std::string> qoi_names;
    for (std::size_t i = 1; i + 1 < t.header.size(); ++i) {
        const auto& h = t.header[i];
        if (h.size() > 4 && h.compare(h.size() - 4, 4, "_var") == 0) qoi_names.push_back(h.substr(0, h.size() - 4));
    }
    const std::size_t nq = qoi_names.size();
    if (nq == 0) throw InputError("'" + path.string() + "' has no <qoi>_var columns");
    if (t.header.size() < 2 + 2 * nq + 1) throw InputError("'" + path.string() + "' has no design columns");
    const std::size_t nd = t.header.size() - 2 - 2 * nq;
    std::vector<std::string> design_names(t.header.begin() + 1, t.header.begin() + 1 + nd);
    for (std::size_t k = 0; k < nq; ++k) {
        if (t.header[1 + nd + k] != qoi_names[k] || t.header[1 + nd + nq + k] != qoi_names[k] + "_var")
            throw InputError("'" + path.string() + "' QoI and variance columns are out of order");
    }

    std::vector<Observation> obs;
    for (const auto& row : t.rows) {
        Observation o;
        o.test_id = row[0];
        o.design = {VectorXd(nd), design_names};
        o.measured = {VectorXd(nq), qoi_names};
        o.measurement_variance.resize(nq);
        for (std::size_t i = 0; i < nd; ++i) o.design.values[i] = parse_double(row[1 + i]);
        for (std::size_t k = 0; k < nq; ++k) {
            o.measured.values[k] = parse_double(row[1 + nd + k]);
            o.measurement_variance[k] = parse_double(row[1 + nd + nq + k]);
        }
        o.domain = domain_from_string(row.back());
        obs.push_back(std::move(o));
    }
    return Dataset(design_names, qoi_names, std::move(obs));
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
    CsvTable t;
    t.header.push_back("test_id");
    for (const auto& n : data.design_names()) t.header.push_back(n);
    for (const auto& n : data.qoi_names()) t.header.push_back(n);
    for (const auto& n : data.qoi_names()) t.header.push_back(n + "_var");
    t.header.push_back("domain");
    for (const auto& o : data.observations()) {
        std::vector<std::string> row{o.test_id};
        for (Eigen::Index i = 0; i < o.design.values.size(); ++i) row.push_back(format_double(o.design.values[i]));
        for (Eigen::Index k = 0; k < o.measured.values.size(); ++k) row.push_back(format_double(o.measured.values[k]));
        for (Eigen::Index k = 0; k < o.measurement_variance.size(); ++k)
            row.push_back(format_double(o.measurement_variance[k]));
        row.push_back(to_string(o.domain));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

void write_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const MatrixXd& samples, const std::vector<long long>& steps,
                       const VectorXd* log_posterior) {
    if (static_cast<std::size_t>(samples.cols()) != names.size() ||
        static_cast<std::size_t>(samples.rows()) != steps.size())
        throw InputError("sample matrix does not match names/steps");
    CsvTable t;
    t.header.push_back("step");
    for (const auto& n : names) t.header.push_back(n);
    if (log_posterior) t.header.push_back("log_posterior");
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        std::vector<std::string> row{std::to_string(steps[r])};
        for (Eigen::Index c = 0; c < samples.cols(); ++c) row.push_back(format_double(samples(r, c)));
        if (log_posterior) row.push_back(format_double((*log_posterior)[r]));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

MatrixXd read_samples_csv(const std::filesystem::path& path, std::vector<std::string>* names,
                          VectorXd* log_posterior, std::vector<long long>* steps) {
    const CsvTable t = read_csv(path);
    if (t.header.empty() || t.header.front() != "step") throw InputError("'" + path.string() + "' is not a samples file");
    const bool has_lp = t.header.back() == "log_posterior";
    const std::size_t d = t.header.size() - 1 - (has_lp ? 1 : 0);
    if (names) names->assign(t.header.begin() + 1, t.header.begin() + 1 + d);
    MatrixXd m(t.rows.size(), d);
    if (log_posterior) log_posterior->resize(has_lp ? t.rows.size() : 0);
    if (steps) steps->clear();
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (steps) steps->push_back(std::stoll(t.rows[r][0]));
        for (std::size_t c = 0; c < d; ++c) m(r, c) = parse_double(t.rows[r][1 + c]);
        if (has_lp && log_posterior) (*log_posterior)[r] = parse_double(t.rows[r].back());
    }
    return m;
}

} // namespace calival
