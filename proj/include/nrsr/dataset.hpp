#pragma once

#include "nrsr/numerics.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrsr {

// (X, y) with noise-column bookkeeping. y depends only on the real columns;
// sigma_y is the population standard deviation of y.
struct Dataset {
    Matrix X;  // m x (variable_count + noise_count)
    Vector y;
    std::vector<std::uint8_t> noise_column_mask;  // 1 = irrelevant column
    double sigma_y = 0.0;

    Eigen::Index rows() const { return X.rows(); }
    Eigen::Index cols() const { return X.cols(); }
};

inline double population_std(const Vector& v) {
    const double mean = v.mean();
    const double var = (v.array() - mean).square().mean();
    return std::sqrt(var);
}

inline double population_var(const Vector& v) {
    const double mean = v.mean();
    return (v.array() - mean).square().mean();
}

// CSV with header x1,...,xn,y and 17-significant-digit floats.
inline void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (Eigen::Index c = 0; c < data.X.cols(); ++c) {
        out << 'x' << (c + 1) << ',';
    }
    out << "y\n";
    char buf[64];
    for (Eigen::Index r = 0; r < data.X.rows(); ++r) {
        for (Eigen::Index c = 0; c < data.X.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.X(r, c));
            out << buf << ',';
        }
        std::snprintf(buf, sizeof(buf), "%.17g", data.y[r]);
        out << buf << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Reads a dataset written by write_csv. The noise mask is not stored in the
// file; callers that need it keep it alongside.
inline Dataset read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
    std::size_t n_cols = 0;
    for (char ch : line) n_cols += (ch == ',') ? 1 : 0;  // x columns; last field is y

    std::vector<double> values;
    std::size_t n_rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::size_t got = 0;
        while (std::getline(row, field, ',')) {
            values.push_back(std::stod(field));
            ++got;
        }
        if (got != n_cols + 1) throw std::runtime_error("ragged csv row in " + path);
        ++n_rows;
    }

    Dataset data;
    data.X.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(n_cols));
    data.y.resize(static_cast<Eigen::Index>(n_rows));
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < n_cols; ++c) {
            data.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                values[r * (n_cols + 1) + c];
        }
        data.y[static_cast<Eigen::Index>(r)] = values[r * (n_cols + 1) + n_cols];
    }
    data.noise_column_mask.assign(n_cols, 0);
    data.sigma_y = population_std(data.y);
    return data;
}

}  // namespace nrsr
