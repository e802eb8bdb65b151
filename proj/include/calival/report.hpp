#pragma once

#include "calival/dataset_io.hpp"
#include "calival/inverse_uq.hpp"
#include "calival/prediction_bma.hpp"
#include "calival/validation_bf.hpp"

#include <string>
#include <vector>

namespace calival {

// Report tables render numbers with four decimals.

// dataset, bias_mode, <qoi...>, aggregation
CsvTable bf_table(const std::vector<AggregatedBf>& rows, const std::vector<std::string>& qois);

// dataset, bma_model, component, <qoi...>: the prior and posterior weights
// of model D (A with B) and model E (A with C).
CsvTable weight_table(const std::vector<AggregatedBf>& rows, const std::vector<std::string>& qois);

// dataset, model, <qoi...>: mean absolute error per model.
CsvTable error_table(const std::string& dataset, const std::vector<ErrorRow>& rows,
                     const std::vector<std::string>& qois);

// dataset, bias_mode, parameter, mean, std
CsvTable posterior_table(const std::string& dataset, const std::string& bias_mode,
                         const std::vector<std::string>& names, const PosteriorMoments& moments);

// "<dataset> <bias_mode> <qoi>: B = x.xxxx prior-favored" for every B < 1.
std::vector<std::string> prior_favored_flags(const std::vector<AggregatedBf>& rows);

std::string render_table(const CsvTable& table);

} // namespace calival
