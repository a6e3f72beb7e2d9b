#pragma once

// Output tables and trajectory files. Floats are written with 17
// significant digits so values round-trip exactly. Files are written to a
// temporary name and renamed on success, so a failed run leaves nothing
// half-written behind.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "kicktop/analysis/config.hpp"
#include "kicktop/analysis/metrics.hpp"
#include "kicktop/errors.hpp"

namespace kicktop {

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

using Cell = std::variant<double, long long, std::string>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add(std::vector<Cell> row) {
        if (row.size() != columns.size()) {
            throw ParameterError("row has " + std::to_string(row.size()) + " cells, table has " +
                                 std::to_string(columns.size()) + " columns");
        }
        rows.push_back(std::move(row));
    }
};

inline void write_csv(std::ostream& out, const Table& t) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
    out << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << ',';
            std::visit(
                [&](const auto& v) {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, double>) {
                        out << format_double(v);
                    } else {
                        out << v;
                    }
                },
                row[c]);
        }
        out << '\n';
    }
}

/// One JSON object per row; NaN and infinities become null.
inline void write_jsonl(std::ostream& out, const Table& t) {
    for (const auto& row : t.rows) {
        nlohmann::ordered_json obj;
        for (std::size_t c = 0; c < row.size(); ++c) {
            std::visit(
                [&](const auto& v) {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, double>) {
                        if (std::isfinite(v)) {
                            obj[t.columns[c]] = v;
                        } else {
                            obj[t.columns[c]] = nullptr;
                        }
                    } else {
                        obj[t.columns[c]] = v;
                    }
                },
                row[c]);
        }
        out << obj.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict) << '\n';
    }
}

inline void write_table(std::ostream& out, const Table& t, OutputFormat format) {
    if (format == OutputFormat::csv) {
        write_csv(out, t);
    } else {
        write_jsonl(out, t);
    }
}

/// Writes `content` to `path` via a temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw std::runtime_error("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

inline std::string render_table(const Table& t, OutputFormat format) {
    std::ostringstream out;
    write_table(out, t, format);
    return out.str();
}

inline const char* extension(OutputFormat f) { return f == OutputFormat::csv ? ".csv" : ".jsonl"; }

/// Trajectory rows with a fixed column order:
/// ic_id, trajectory, step, m, n_x, n_y, n_z [, V_xx, V_xy, V_xz, V_yy, V_yz, V_zz].
inline Table trajectory_table(const std::vector<TrajectoryRecord>& records, const std::vector<long long>& ic_ids,
                              bool with_covariance) {
    if (ic_ids.size() != records.size()) throw ParameterError("one IC id per trajectory record is required");
    Table t;
    t.columns = {"ic_id", "trajectory", "step", "m", "n_x", "n_y", "n_z"};
    if (with_covariance) {
        for (const char* c : {"V_xx", "V_xy", "V_xz", "V_yy", "V_yz", "V_zz"}) t.columns.emplace_back(c);
    }
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        for (const auto& row : rec.rows) {
            std::vector<Cell> cells{ic_ids[r], static_cast<long long>(rec.seed.trajectory),
                                    static_cast<long long>(row.step), row.m, row.n.x(), row.n.y(), row.n.z()};
            if (with_covariance) {
                const double nan = std::nan("");
                const Mat3 v = row.V.value_or(Mat3::Constant(nan));
                for (auto [a, b] : {std::pair{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}}) cells.emplace_back(v(a, b));
            }
            t.add(std::move(cells));
        }
    }
    return t;
}

/// Reads back the n columns of a trajectory CSV written by trajectory_table,
/// grouped by (ic_id, trajectory) in file order.
struct LoadedPath {
    long long ic_id = 0;
    long long trajectory = 0;
    std::vector<Vec3> n;
};

inline std::vector<LoadedPath> read_trajectory_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParameterError("empty trajectory file");
    const auto header = detail::split(line, ',');
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw ParameterError("trajectory file lacks column '" + name + "'");
    };
    const std::size_t c_ic = col("ic_id"), c_tr = col("trajectory"), c_x = col("n_x"), c_y = col("n_y"),
                      c_z = col("n_z");
    std::vector<LoadedPath> out;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != header.size()) {
            throw ParameterError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                 " cells");
        }
        const std::string where = "line " + std::to_string(line_no);
        const long long ic = detail::parse_integer(where, cells[c_ic]);
        const long long tr = detail::parse_integer(where, cells[c_tr]);
        if (out.empty() || out.back().ic_id != ic || out.back().trajectory != tr) out.push_back({ic, tr, {}});
        out.back().n.emplace_back(detail::parse_double(where, cells[c_x]), detail::parse_double(where, cells[c_y]),
                                  detail::parse_double(where, cells[c_z]));
    }
    return out;
}

}  // namespace kicktop
