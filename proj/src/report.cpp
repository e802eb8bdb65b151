#include "calival/report.hpp"

#include "calival/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>

namespace calival {

namespace {

std::string f4(double v) { return format_fixed(v, 4); }

const AggregatedBf* lookup(const std::vector<AggregatedBf>& rows, const std::string& dataset,
                           const std::string& mode, const std::string& qoi) {
    for (const auto& r : rows)
        if (r.dataset == dataset && r.bias_mode == mode && r.qoi == qoi) return &r;
    return nullptr;
}

std::vector<std::pair<std::string, std::string>> groups(const std::vector<AggregatedBf>& rows) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& r : rows) {
        const std::pair<std::string, std::string> key{r.dataset, r.bias_mode};
        if (std::find(out.begin(), out.end(), key) == out.end()) out.push_back(key);
    }
    return out;
}

} // namespace

CsvTable bf_table(const std::vector<AggregatedBf>& rows, const std::vector<std::string>& qois) {
    if (rows.empty()) throw InputError("no Bayes factors to tabulate");
    CsvTable t;
    t.header = {"dataset", "bias_mode"};
    t.header.insert(t.header.end(), qois.begin(), qois.end());
    t.header.push_back("aggregation");
    for (const auto& [dataset, mode] : groups(rows)) {
        std::vector<std::string> row{dataset, mode};
        std::string agg;
        for (const auto& q : qois) {
            const AggregatedBf* a = lookup(rows, dataset, mode, q);
            if (!a) throw InputError(fmt::format("missing Bayes factor for {} {} {}", dataset, mode, q));
            row.push_back(f4(a->bf));
            agg = to_string(a->aggregation);
        }
        row.push_back(agg);
        t.rows.push_back(std::move(row));
    }
    return t;
}

CsvTable weight_table(const std::vector<AggregatedBf>& rows, const std::vector<std::string>& qois) {
    CsvTable t;
    t.header = {"dataset", "bma_model", "component"};
    t.header.insert(t.header.end(), qois.begin(), qois.end());
    const std::vector<std::tuple<std::string, std::string, std::string>> models{
        {"no_bias", "D", "B"}, {"with_bias", "E", "C"}};
    for (const auto& [dataset, mode] : groups(rows)) {
        for (const auto& [m, bma, post] : models) {
            if (m != mode) continue;
            std::vector<std::string> prior_row{dataset, bma, "A"}, post_row{dataset, bma, post};
            for (const auto& q : qois) {
                const AggregatedBf* a = lookup(rows, dataset, mode, q);
                if (!a) throw InputError(fmt::format("missing Bayes factor for {} {} {}", dataset, mode, q));
                const BmaWeights w = bma_weights(a->bf);
                prior_row.push_back(f4(w.prior));
                post_row.push_back(f4(w.posterior));
            }
            t.rows.push_back(std::move(prior_row));
            t.rows.push_back(std::move(post_row));
        }
    }
    return t;
}

CsvTable error_table(const std::string& dataset, const std::vector<ErrorRow>& rows, const std::vector<std::string>& qois) {
    if (rows.empty()) throw InputError("no prediction errors to tabulate");
    CsvTable t;
    t.header = {"dataset", "model"};
    t.header.insert(t.header.end(), qois.begin(), qois.end());
    std::vector<std::string> models;
    for (const auto& r : rows)
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    for (const auto& m : models) {
        std::vector<std::string> row{dataset, m};
        for (const auto& q : qois) {
            const auto it = std::find_if(rows.begin(), rows.end(), [&](const ErrorRow& e) { return e.model == m && e.qoi == q; });
            if (it == rows.end()) throw InputError(fmt::format("missing error entry for model {} {}", m, q));
            row.push_back(f4(it->mean_abs_error));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

CsvTable posterior_table(const std::string& dataset, const std::string& bias_mode, const std::vector<std::string>& names,
                         const PosteriorMoments& moments) {
    if (static_cast<std::size_t>(moments.mean.size()) != names.size()) throw InputError("moment and name counts differ");
    CsvTable t;
    t.header = {"dataset", "bias_mode", "parameter", "mean", "std"};
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        t.rows.push_back({dataset, bias_mode, names[j], f4(moments.mean[i]), f4(moments.std[i])});
    }
    return t;
}

std::vector<std::string> prior_favored_flags(const std::vector<AggregatedBf>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (r.bf < 1.0) out.push_back(fmt::format("{} {} {}: B = {} prior-favored", r.dataset, r.bias_mode, r.qoi, f4(r.bf)));
    return out;
}

std::string render_table(const CsvTable& table) {
    std::vector<std::size_t> width(table.header.size());
    for (std::size_t c = 0; c < width.size(); ++c) {
        width[c] = table.header[c].size();
        for (const auto& r : table.rows) width[c] = std::max(width[c], r[c].size());
    }
    std::string out;
    const auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) out += "  ";
            out += fmt::format("{:<{}}", cells[c], width[c]);
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
    };
    line(table.header);
    for (const auto& r : table.rows) line(r);
    return out;
}

} // namespace calival
