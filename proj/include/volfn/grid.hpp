#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace volfn {

// Regularly sampled log-price panel: rows are timestamps, columns assets.
// Time is measured in trading days, so one-second sampling is 1/23400.
class LogPriceGrid {
public:
    LogPriceGrid(Eigen::MatrixXd values, double delta_n, std::vector<std::string> labels = {})
        : values_(std::move(values)), delta_n_(delta_n), labels_(std::move(labels)) {
        if (!(delta_n_ > 0.0 && delta_n_ < 1.0))
            throw DataError("delta_n must lie in (0, 1) day units, got " + std::to_string(delta_n_));
        if (values_.rows() < 2) throw DataError("grid needs at least 2 rows");
        if (values_.cols() < 1) throw DataError("grid needs at least 1 column");
        if (!values_.allFinite()) throw DataError("grid contains non-finite values");
        if (labels_.empty()) {
            for (Eigen::Index j = 0; j < values_.cols(); ++j) labels_.push_back("y" + std::to_string(j + 1));
        }
        if (static_cast<Eigen::Index>(labels_.size()) != values_.cols())
            throw FormatError("label count does not match column count");
    }

    const Eigen::MatrixXd& values() const { return values_; }
    double delta_n() const { return delta_n_; }
    const std::vector<std::string>& labels() const { return labels_; }
    Eigen::Index rows() const { return values_.rows(); }
    Eigen::Index dim() const { return values_.cols(); }
    Eigen::Index increment_count() const { return values_.rows() - 1; }
    // Horizon spanned by the increments.
    double horizon() const { return static_cast<double>(increment_count()) * delta_n_; }

    // Rows [first, last] as a new grid.
    LogPriceGrid slice(Eigen::Index first, Eigen::Index last) const {
        if (first < 0 || last >= rows() || last - first < 1) throw SizeError("invalid grid slice");
        return LogPriceGrid(values_.middleRows(first, last - first + 1), delta_n_, labels_);
    }

private:
    Eigen::MatrixXd values_;
    double delta_n_;
    std::vector<std::string> labels_;
};

// First differences; row i-1 holds Y_i - Y_{i-1}.
struct IncrementSeries {
    Eigen::MatrixXd values;
    double delta_n = 0.0;

    Eigen::Index count() const { return values.rows(); }
    Eigen::Index dim() const { return values.cols(); }
    double horizon() const { return static_cast<double>(count()) * delta_n; }
};

inline IncrementSeries increments(const LogPriceGrid& grid) {
    const auto& y = grid.values();
    const Eigen::Index n = y.rows();
    return {y.bottomRows(n - 1) - y.topRows(n - 1), grid.delta_n()};
}

// Rebuilds the grid values from increments and a starting row.
inline Eigen::MatrixXd cumulate(const IncrementSeries& incr, const Eigen::RowVectorXd& first_row) {
    Eigen::MatrixXd out(incr.count() + 1, incr.dim());
    out.row(0) = first_row;
    for (Eigen::Index i = 0; i < incr.count(); ++i) out.row(i + 1) = out.row(i) + incr.values.row(i);
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& field, std::size_t line_no) {
    const std::string s = trim(field);
    double v = 0.0;
    const char* first = s.data();
    if (!s.empty() && s[0] == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw FormatError("line " + std::to_string(line_no) + ": cannot parse number '" + s + "'");
    return v;
}

// Shortest text that parses back to exactly the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

// Reads a header of labels followed by one row per timestamp. With raw_prices
// the natural log is applied elementwise.
inline LogPriceGrid load_csv(const std::string& path, double delta_n, bool raw_prices = false) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> labels;
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) {
            for (auto& f : detail::split_csv_line(line)) labels.push_back(detail::trim(f));
            break;
        }
    }
    if (labels.empty()) throw DataError(path + ": empty file");
    const std::size_t d = labels.size();
    std::vector<double> flat;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != d)
            throw FormatError(path + ": line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, expected " + std::to_string(d));
        for (const auto& f : fields) {
            double v = detail::parse_double(f, line_no);
            if (raw_prices) {
                if (!(std::isfinite(v) && v > 0.0))
                    throw DataError(path + ": line " + std::to_string(line_no) + ": raw price must be positive and finite");
                v = std::log(v);
            } else if (!std::isfinite(v)) {
                throw DataError(path + ": line " + std::to_string(line_no) + ": non-finite value");
            }
            flat.push_back(v);
        }
        ++rows;
    }
    if (rows < 2) throw DataError(path + ": need at least 2 data rows, got " + std::to_string(rows));
    Eigen::MatrixXd values(rows, d);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) values(i, j) = flat[i * d + j];
    return LogPriceGrid(std::move(values), delta_n, std::move(labels));
}

inline void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& values,
                             const std::vector<std::string>& labels) {
    for (std::size_t j = 0; j < labels.size(); ++j) out << (j ? "," : "") << labels[j];
    out << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << detail::format_double(values(i, j));
        out << '\n';
    }
}

inline void write_csv(const LogPriceGrid& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    write_matrix_csv(out, grid.values(), grid.labels());
}

}  // namespace volfn
