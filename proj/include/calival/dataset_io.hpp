#pragma once

#include "calival/core_model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace calival {

// Minimal CSV table: a header row and string cells. Quoting is not
// supported; fields never contain commas in any file this tool writes.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);
// Fixed-point rendering used by the human-readable reports.
std::string format_fixed(double v, int decimals);
double parse_double(const std::string& s);

/// Dataset file layout:
///   test_id, <design names...>, <qoi names...>, <qoi>_var..., domain
Dataset read_dataset_csv(const std::filesystem::path& path);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// Samples file: step, <names...>[, log_posterior]
void write_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const MatrixXd& samples, const std::vector<long long>& steps,
                       const VectorXd* log_posterior);
MatrixXd read_samples_csv(const std::filesystem::path& path, std::vector<std::string>* names = nullptr,
                          VectorXd* log_posterior = nullptr, std::vector<long long>* steps = nullptr);

} // namespace calival
