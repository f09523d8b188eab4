#pragma once

// Dataset loading, preprocessing, and per-agent partitioning.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ipsg/linalg.hpp"

namespace ipsg::data {

// Parse/format problems in input files; carries path and 1-based line number.
struct format_error : std::runtime_error {
    format_error(const std::string& path, std::size_t line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what) {}
};

struct Dataset {
    std::string name;
    Matrix A;          // N x d collective input matrix
    Vector B;          // N outputs
    std::optional<Vector> x_star;
    bool consistent = false;  // B = A * x_star holds by construction
    std::string provenance;
};

struct Partition {
    std::size_t m = 0;
    std::vector<std::pair<std::size_t, std::size_t>> blocks;  // [row_start, row_end)
};

struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    Vector pixels;  // row-major, [0,1]
};

namespace detail {

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline bool parse_real(const std::string& tok, double& out) {
    const char* p = tok.c_str();
    char* end = nullptr;
    out = std::strtod(p, &end);
    return end != p && *end == '\0';
}

}  // namespace detail

// --- Matrix Market ----------------------------------------------------------
//
// Supports the text format's `array` and `coordinate` layouts with field
// `real` (or `integer`) and symmetry `general`/`symmetric`. Dense result.
inline Matrix load_matrix_market(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_matrix_market: cannot open " + path);

    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw format_error(path, 1, "empty file");
    ++lineno;

    std::istringstream head(line);
    std::string banner, object, fmt, field, symmetry;
    head >> banner >> object >> fmt >> field >> symmetry;
    if (detail::lower(banner) != "%%matrixmarket") throw format_error(path, 1, "missing MatrixMarket banner");
    object = detail::lower(object);
    fmt = detail::lower(fmt);
    field = detail::lower(field);
    symmetry = detail::lower(symmetry);
    if (object != "matrix") throw format_error(path, 1, "unsupported object '" + object + "'");
    if (fmt != "coordinate" && fmt != "array") throw format_error(path, 1, "unsupported format '" + fmt + "'");
    if (field != "real" && field != "integer")
        throw format_error(path, 1, "unsupported field '" + field + "'");
    if (symmetry != "general" && symmetry != "symmetric")
        throw format_error(path, 1, "unsupported symmetry '" + symmetry + "'");
    const bool symmetric = symmetry == "symmetric";

    auto next_data_line = [&](std::string& out) -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            std::size_t i = 0;
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            if (i == line.size() || line[i] == '%') continue;
            out = line;
            return true;
        }
        return false;
    };

    std::string sizes;
    if (!next_data_line(sizes)) throw format_error(path, lineno, "missing size line");
    std::istringstream sz(sizes);

    if (fmt == "coordinate") {
        long long rows = -1, cols = -1, nnz = -1;
        if (!(sz >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0)
            throw format_error(path, lineno, "bad coordinate size line");
        if (symmetric && rows != cols) throw format_error(path, lineno, "symmetric matrix must be square");
        Matrix M(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
        std::vector<bool> seen(M.a.size(), false);
        for (long long k = 0; k < nnz; ++k) {
            std::string entry;
            if (!next_data_line(entry)) throw format_error(path, lineno, "unexpected end of file");
            std::istringstream es(entry);
            long long i = 0, j = 0;
            std::string vtok;
            if (!(es >> i >> j >> vtok)) throw format_error(path, lineno, "bad coordinate entry");
            double v = 0.0;
            if (!detail::parse_real(vtok, v)) throw format_error(path, lineno, "bad value '" + vtok + "'");
            if (i < 1 || i > rows || j < 1 || j > cols)
                throw format_error(path, lineno, "index out of range");
            if (symmetric && j > i)
                throw format_error(path, lineno, "entry above diagonal in symmetric file");
            const std::size_t r = static_cast<std::size_t>(i - 1), c = static_cast<std::size_t>(j - 1);
            if (seen[r * M.cols + c]) throw format_error(path, lineno, "duplicate coordinate entry");
            seen[r * M.cols + c] = true;
            M(r, c) = v;
            if (symmetric && r != c) M(c, r) = v;
        }
        return M;
    }

    long long rows = -1, cols = -1;
    if (!(sz >> rows >> cols) || rows < 0 || cols < 0)
        throw format_error(path, lineno, "bad array size line");
    if (symmetric && rows != cols) throw format_error(path, lineno, "symmetric matrix must be square");
    Matrix M(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    // array format lists values column-major; symmetric files store the lower
    // triangle of each column only
    for (long long j = 0; j < cols; ++j) {
        const long long i0 = symmetric ? j : 0;
        for (long long i = i0; i < rows; ++i) {
            std::string entry;
            if (!next_data_line(entry)) throw format_error(path, lineno, "unexpected end of file");
            std::istringstream es(entry);
            std::string vtok;
            if (!(es >> vtok)) throw format_error(path, lineno, "bad array entry");
            double v = 0.0;
            if (!detail::parse_real(vtok, v)) throw format_error(path, lineno, "bad value '" + vtok + "'");
            M(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
            if (symmetric) M(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = v;
        }
    }
    return M;
}

// Array-format writer (dense, general, column-major values per the format).
inline void write_matrix_market(const std::string& path, const Matrix& M) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("write_matrix_market: cannot open " + path);
    out << "%%MatrixMarket matrix array real general\n";
    out << M.rows << " " << M.cols << "\n";
    char buf[40];
    for (std::size_t j = 0; j < M.cols; ++j)
        for (std::size_t i = 0; i < M.rows; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g\n", M(i, j));
            out << buf;
        }
}

// --- synthetic outputs -------------------------------------------------------

// B = A * 1 with x* = all-ones; the standard consistent construction.
inline std::pair<Vector, Vector> synth_output(const Matrix& A) {
    Vector x_star(A.cols, 1.0);
    return {matvec(A, x_star), x_star};
}

// --- preprocessing -----------------------------------------------------------

// Column-wise zero mean, unit population standard deviation.
inline Matrix standardize_columns(const Matrix& A) {
    if (A.rows == 0) throw std::invalid_argument("standardize_columns: empty matrix");
    Matrix out = A;
    const double n = static_cast<double>(A.rows);
    for (std::size_t c = 0; c < A.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < A.rows; ++r) mean += A(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < A.rows; ++r) {
            const double d = A(r, c) - mean;
            var += d * d;
        }
        var /= n;
        if (var <= 0.0)
            throw std::invalid_argument("standardize_columns: column " + std::to_string(c) +
                                        " is constant");
        const double sd = std::sqrt(var);
        for (std::size_t r = 0; r < A.rows; ++r) out(r, c) = (A(r, c) - mean) / sd;
    }
    return out;
}

inline Matrix append_ones(const Matrix& A) {
    Matrix out(A.rows, A.cols + 1);
    for (std::size_t r = 0; r < A.rows; ++r) {
        for (std::size_t c = 0; c < A.cols; ++c) out(r, c) = A(r, c);
        out(r, A.cols) = 1.0;
    }
    return out;
}

inline double avg_intensity(const Image& img) {
    if (img.pixels.empty()) return 0.0;
    double s = 0.0;
    for (double p : img.pixels) s += p;
    return s / static_cast<double>(img.pixels.size());
}

// Negative mean absolute deviation between the image and its left-right
// mirror.
inline double avg_symmetry(const Image& img) {
    if (img.pixels.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            const double p = img.pixels[r * img.width + c];
            const double q = img.pixels[r * img.width + (img.width - 1 - c)];
            s += std::fabs(p - q);
        }
    return -s / static_cast<double>(img.pixels.size());
}

// Feature columns [a1, a2, a1^2, a1*a2, a2^2], pre-standardization.
inline Matrix mnist_features(const Vector& a1, const Vector& a2) {
    if (a1.size() != a2.size()) throw std::invalid_argument("mnist_features: length mismatch");
    Matrix F(a1.size(), 5);
    for (std::size_t r = 0; r < a1.size(); ++r) {
        F(r, 0) = a1[r];
        F(r, 1) = a2[r];
        F(r, 2) = a1[r] * a1[r];
        F(r, 3) = a1[r] * a2[r];
        F(r, 4) = a2[r] * a2[r];
    }
    return F;
}

// --- partitioning ------------------------------------------------------------

inline Partition partition(const Dataset& ds, std::size_t m) {
    const std::size_t N = ds.A.rows;
    if (m == 0 || N % m != 0)
        throw std::invalid_argument("partition: N=" + std::to_string(N) +
                                    " not divisible by m=" + std::to_string(m));
    const std::size_t n = N / m;
    Partition p;
    p.m = m;
    for (std::size_t i = 0; i < m; ++i) p.blocks.emplace_back(i * n, (i + 1) * n);
    return p;
}

// --- least squares -----------------------------------------------------------

inline Vector least_squares_oracle(const Dataset& ds) {
    Matrix G = gram(ds.A);
    Vector rhs = matvec_t(ds.A, ds.B);
    Vector x;
    try {
        x = solve_spd(G, rhs);
    } catch (const numerical_error&) {
        throw numerical_error("least_squares_oracle: gram matrix rank deficient (Assumption 1 violated)");
    }
    const Vector res = [&] {
        Vector g = matvec(G, x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= rhs[i];
        return g;
    }();
    if (vec_norm(res) > 1e-8 * std::max(vec_norm(rhs), 1e-300))
        throw numerical_error("least_squares_oracle: normal-equation residual too large");
    return x;
}

// --- CSV ---------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("read_csv: cannot open " + path);
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur += ch;
            }
        }
        out.push_back(cur);
        return out;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.eof()) break;
        auto cells = split(line);
        if (lineno == 1) {
            t.header = cells;
        } else {
            if (cells.size() != t.header.size())
                throw format_error(path, lineno, "row has " + std::to_string(cells.size()) +
                                                     " cells, header has " +
                                                     std::to_string(t.header.size()));
            t.rows.push_back(std::move(cells));
        }
    }
    if (t.header.empty()) throw format_error(path, 1, "missing header row");
    return t;
}

inline std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

struct TabularConfig {
    std::string label_col;
    std::size_t take_rows = 0;        // 0 = all surviving rows
    double positive_above = 0.0;      // label > threshold -> +1 else -1
    bool standardize = true;
    bool add_ones = true;
};

// Cleveland-style pipeline: drop rows with missing cells, take the first
// take_rows in file order, standardize features, append the intercept column,
// encode the label as {+1,-1}. Selected-subset checksum lands in provenance.
inline Dataset load_tabular_csv(const std::string& path, const TabularConfig& cfg) {
    CsvTable t = read_csv(path);
    std::size_t label_idx = t.header.size();
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == cfg.label_col) label_idx = i;
    if (label_idx == t.header.size())
        throw std::invalid_argument("load_tabular_csv: no column named '" + cfg.label_col + "'");

    auto missing = [](const std::string& s) { return s.empty() || s == "?"; };
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        bool ok = true;
        for (const auto& cell : t.rows[r])
            if (missing(cell)) ok = false;
        if (ok) keep.push_back(r);
    }
    if (cfg.take_rows > 0) {
        if (keep.size() < cfg.take_rows)
            throw std::invalid_argument("load_tabular_csv: only " + std::to_string(keep.size()) +
                                        " complete rows, need " + std::to_string(cfg.take_rows));
        keep.resize(cfg.take_rows);
    }
    if (keep.empty()) throw std::invalid_argument("load_tabular_csv: no complete rows");

    const std::size_t d_raw = t.header.size() - 1;
    Matrix F(keep.size(), d_raw);
    Vector labels(keep.size());
    std::uint64_t checksum = 1469598103934665603ull;
    for (std::size_t out_r = 0; out_r < keep.size(); ++out_r) {
        const auto& row = t.rows[keep[out_r]];
        std::size_t cc = 0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            double v = 0.0;
            if (!detail::parse_real(row[c], v))
                throw format_error(path, keep[out_r] + 2, "non-numeric cell '" + row[c] + "'");
            checksum = fnv1a(checksum, row[c]);
            if (c == label_idx)
                labels[out_r] = v > cfg.positive_above ? 1.0 : -1.0;
            else
                F(out_r, cc++) = v;
        }
    }

    Dataset ds;
    ds.name = path;
    Matrix X = cfg.standardize ? standardize_columns(F) : F;
    ds.A = cfg.add_ones ? append_ones(X) : X;
    ds.B = labels;
    ds.consistent = false;
    std::ostringstream prov;
    prov << "tabular csv " << path << "; label=" << cfg.label_col << "; rows=" << keep.size()
         << " (first complete rows in file order); subset checksum=0x" << std::hex << checksum
         << std::dec << "; standardization=population";
    ds.provenance = prov.str();
    return ds;
}

struct LabeledImage {
    int label = 0;
    Image img;
};

// MNIST-style CSV: label, then 784 pixels in 0..255 scaled to [0,1].
inline std::vector<LabeledImage> load_mnist_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    if (t.header.size() != 785)
        throw format_error(path, 1, "expected 785 columns (label + 784 pixels), got " +
                                        std::to_string(t.header.size()));
    std::vector<LabeledImage> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        LabeledImage li;
        double lab = 0.0;
        if (!detail::parse_real(t.rows[r][0], lab))
            throw format_error(path, r + 2, "bad label '" + t.rows[r][0] + "'");
        li.label = static_cast<int>(lab);
        li.img.height = 28;
        li.img.width = 28;
        li.img.pixels.resize(784);
        for (std::size_t c = 0; c < 784; ++c) {
            double v = 0.0;
            if (!detail::parse_real(t.rows[r][c + 1], v))
                throw format_error(path, r + 2, "bad pixel '" + t.rows[r][c + 1] + "'");
            li.img.pixels[c] = v / 255.0;
        }
        out.push_back(std::move(li));
    }
    return out;
}

}  // namespace ipsg::data
