#include "imitate/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>

#include "imitate/errors.hpp"

namespace imitate {

namespace {

struct Color {
    double r, g, b;
};

Color lerp(Color a, Color b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

std::string hex(Color c) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(c.r)),
                  static_cast<int>(std::lround(c.g)), static_cast<int>(std::lround(c.b)));
    return buf;
}

// Diverging blue - grey - red map on t in [0, 1].
Color diverging(double t) {
    constexpr Color lo{59, 76, 192}, mid{221, 221, 221}, hi{180, 4, 38};
    t = std::clamp(t, 0.0, 1.0);
    return t < 0.5 ? lerp(lo, mid, t * 2.0) : lerp(mid, hi, (t - 0.5) * 2.0);
}

// Sequential dark-blue to yellow map for frame indices.
Color sequential(double t) {
    constexpr Color a{68, 1, 84}, b{33, 145, 140}, c{253, 231, 37};
    t = std::clamp(t, 0.0, 1.0);
    return t < 0.5 ? lerp(a, b, t * 2.0) : lerp(b, c, (t - 0.5) * 2.0);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmtg(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

double row_norm(std::span<const double> r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::sqrt(s);
}

struct Series {
    std::string label;
    std::string color;
    std::vector<double> values;
};

void line_panel(std::string& svg, double x0, double y0, double w, double h, const std::string& title,
                const std::vector<Series>& series) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t n = 0;
    for (const Series& s : series) {
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        n = std::max(n, s.values.size());
    }
    if (!(hi > lo)) {
        hi = lo + 1.0;
    }
    svg += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y0) + "\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) +
           "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg += "<text x=\"" + fmt(x0 + w / 2) + "\" y=\"" + fmt(y0 - 8) + "\" text-anchor=\"middle\" font-size=\"13\">" +
           title + "</text>\n";
    svg += "<text x=\"" + fmt(x0 - 4) + "\" y=\"" + fmt(y0 + 10) + "\" text-anchor=\"end\" font-size=\"10\">" +
           fmtg(hi) + "</text>\n";
    svg += "<text x=\"" + fmt(x0 - 4) + "\" y=\"" + fmt(y0 + h) + "\" text-anchor=\"end\" font-size=\"10\">" +
           fmtg(lo) + "</text>\n";
    svg += "<text x=\"" + fmt(x0 + w / 2) + "\" y=\"" + fmt(y0 + h + 16) +
           "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";
    const double dx = n > 1 ? w / static_cast<double>(n - 1) : 0.0;
    for (std::size_t k = 0; k < series.size(); ++k) {
        const Series& s = series[k];
        svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            const double x = x0 + dx * static_cast<double>(i);
            const double y = y0 + h - (s.values[i] - lo) / (hi - lo) * h;
            svg += fmt(x) + "," + fmt(y) + (i + 1 < s.values.size() ? " " : "");
        }
        svg += "\"/>\n";
        const double ly = y0 + 14 + 14 * static_cast<double>(k);
        svg += "<text x=\"" + fmt(x0 + w - 6) + "\" y=\"" + fmt(ly) + "\" text-anchor=\"end\" font-size=\"11\" fill=\"" +
               s.color + "\">" + s.label + "</text>\n";
    }
}

std::string svg_open(double w, double h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) +
           "\" viewBox=\"0 0 " + fmt(w) + " " + fmt(h) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace

EmbeddingTrack embed_video(const NetworkParams& params, const Episode& episode, std::size_t batch, int threads) {
    if (batch == 0) throw ConfigError("batch must be at least 1");
    EmbeddingTrack track(episode.size(), params.embedding_dim);
    for (std::size_t start = 0; start < episode.size(); start += batch) {
        const std::size_t n = std::min(batch, episode.size() - start);
        const Matrix part = encode(params, std::span<const Image>(episode.frames).subspan(start, n), threads);
        std::copy(part.data.begin(), part.data.end(), track.data.begin() + static_cast<long>(start * track.cols));
    }
    for (double v : track.data) {
        if (!std::isfinite(v)) throw NumericError("non-finite embedding");
    }
    return track;
}

SymmetricEigen jacobi_eigen(const Matrix& symmetric, int max_sweeps) {
    const std::size_t n = symmetric.rows;
    if (symmetric.cols != n) throw ConfigError("eigendecomposition needs a square matrix");
    Matrix a = symmetric;
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    double scale = 0.0;
    for (double x : a.data) scale += x * x;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off <= 1e-30 * scale || off == 0.0) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    SymmetricEigen out;
    out.vectors = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out.values.push_back(a(order[i], order[i]));
        for (std::size_t k = 0; k < n; ++k) out.vectors(i, k) = v(k, order[i]);
    }
    return out;
}

PcaResult pca3(const Matrix& track) {
    const std::size_t t = track.rows, d = track.cols;
    if (t < 4) throw ConfigError("PCA needs at least 4 rows");
    if (d < 3) throw ConfigError("PCA needs at least 3 columns");
    PcaResult r;
    r.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) r.mean[j] += track(i, j);
    for (double& m : r.mean) m /= static_cast<double>(t);

    Matrix cov(d, d);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = track(i, a) - r.mean[a];
            for (std::size_t b = a; b < d; ++b) cov(a, b) += xa * (track(i, b) - r.mean[b]);
        }
    }
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            cov(a, b) /= static_cast<double>(t - 1);
            cov(b, a) = cov(a, b);
        }
    }

    const SymmetricEigen eig = jacobi_eigen(cov);
    double trace = 0.0;
    for (double ev : eig.values) trace += std::max(ev, 0.0);
    r.components = Matrix(3, d);
    for (std::size_t k = 0; k < 3; ++k) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j) {
            if (std::abs(eig.vectors(k, j)) > std::abs(eig.vectors(k, arg))) arg = j;
        }
        const double sign = eig.vectors(k, arg) < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < d; ++j) r.components(k, j) = sign * eig.vectors(k, j);
        r.explained_ratio[k] = trace > 0.0 ? std::max(eig.values[k], 0.0) / trace : 0.0;
    }
    r.projected = Matrix(t, 3);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (track(i, j) - r.mean[j]) * r.components(k, j);
            r.projected(i, k) = s;
        }
    }
    return r;
}

Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw ConfigError("tracks differ in embedding width");
    constexpr double guard = 1e-12;
    std::vector<double> na(a.rows), nb(b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) na[i] = row_norm(a.row(i)) + guard;
    for (std::size_t j = 0; j < b.rows; ++j) nb[j] = row_norm(b.row(j)) + guard;
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) dot += a(i, k) * b(j, k);
            out(i, j) = std::clamp(dot / (na[i] * nb[j]), -1.0, 1.0);
        }
    }
    return out;
}

double alignment_error(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw ConfigError("alignment needs tracks of equal length");
    if (a.cols != b.cols) throw ConfigError("tracks differ in embedding width");
    if (a.rows == 0) throw ConfigError("alignment needs non-empty tracks");
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        std::size_t best_j = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                const double d = a(i, k) - b(j, k);
                s += d * d;
            }
            if (s < best) {
                best = s;
                best_j = j;
            }
        }
        total += std::abs(static_cast<double>(best_j) - static_cast<double>(i));
    }
    return total / static_cast<double>(a.rows);
}

std::string similarity_color(double value) { return hex(diverging((value + 1.0) / 2.0)); }

std::string loss_curves_svg(const TrainLog& log) {
    if (log.rows.empty()) throw ConfigError("loss log is empty; nothing to plot");
    Series train_total{"train", "#1f77b4", {}}, val_total{"val", "#d62728", {}};
    Series train_tcn{"train tcn", "#1f77b4", {}}, train_reg{"train reg", "#2ca02c", {}};
    Series val_tcn{"val tcn", "#ff7f0e", {}}, val_reg{"val reg", "#9467bd", {}};
    for (const EpochRow& r : log.rows) {
        train_total.values.push_back(r.train_total);
        val_total.values.push_back(r.val_total);
        train_tcn.values.push_back(r.train_tcn);
        train_reg.values.push_back(r.train_reg);
        val_tcn.values.push_back(r.val_tcn);
        val_reg.values.push_back(r.val_reg);
    }
    std::string svg = svg_open(900, 360);
    line_panel(svg, 60, 40, 360, 280, "Total loss", {train_total, val_total});
    line_panel(svg, 510, 40, 360, 280, "Loss terms", {train_tcn, train_reg, val_tcn, val_reg});
    if (log.best_epoch >= 0 && log.rows.size() > 1) {
        const double x = 60 + 360.0 * log.best_epoch / static_cast<double>(log.rows.size() - 1);
        svg += "<line x1=\"" + fmt(x) + "\" y1=\"40\" x2=\"" + fmt(x) +
               "\" y2=\"320\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
    }
    svg += "</svg>\n";
    return svg;
}

std::string pca_trajectory_svg(const PcaResult& pca) {
    const std::size_t t = pca.projected.rows;
    if (t == 0) throw ConfigError("PCA result is empty; nothing to plot");
    // Fixed view: azimuth 45 degrees, elevation 30 degrees.
    const double az = std::numbers::pi / 4, el = std::numbers::pi / 6;
    std::vector<double> sx(t), sy(t);
    for (std::size_t i = 0; i < t; ++i) {
        const double x = pca.projected(i, 0), y = pca.projected(i, 1), z = pca.projected(i, 2);
        sx[i] = x * std::cos(az) - y * std::sin(az);
        sy[i] = (x * std::sin(az) + y * std::cos(az)) * std::sin(el) + z * std::cos(el);
    }
    const auto [xmin, xmax] = std::minmax_element(sx.begin(), sx.end());
    const auto [ymin, ymax] = std::minmax_element(sy.begin(), sy.end());
    const double span = std::max({*xmax - *xmin, *ymax - *ymin, 1e-12});
    const double size = 480, pad = 40;
    auto px = [&](std::size_t i) { return pad + (sx[i] - *xmin) / span * (size - 2 * pad); };
    auto py = [&](std::size_t i) { return size - pad - (sy[i] - *ymin) / span * (size - 2 * pad); };

    std::string svg = svg_open(size, size + 30);
    svg += "<text x=\"" + fmt(size / 2) +
           "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">Embedding trajectory (PCA, explained " +
           fmtg(pca.explained_ratio[0]) + " / " + fmtg(pca.explained_ratio[1]) + " / " +
           fmtg(pca.explained_ratio[2]) + ")</text>\n";
    for (std::size_t i = 0; i + 1 < t; ++i) {
        const double u = t > 1 ? static_cast<double>(i) / static_cast<double>(t - 1) : 0.0;
        svg += "<line x1=\"" + fmt(px(i)) + "\" y1=\"" + fmt(py(i)) + "\" x2=\"" + fmt(px(i + 1)) + "\" y2=\"" +
               fmt(py(i + 1)) + "\" stroke=\"" + hex(sequential(u)) + "\" stroke-width=\"2\"/>\n";
    }
    svg += "<circle cx=\"" + fmt(px(0)) + "\" cy=\"" + fmt(py(0)) + "\" r=\"4\" fill=\"" + hex(sequential(0.0)) +
           "\"/>\n";
    svg += "</svg>\n";
    return svg;
}

std::string similarity_svg(const Matrix& sim) {
    if (sim.rows == 0 || sim.cols == 0) throw ConfigError("similarity matrix is empty; nothing to plot");
    const double cell = std::max(1.0, std::floor(480.0 / static_cast<double>(std::max(sim.rows, sim.cols))));
    const double w = cell * static_cast<double>(sim.cols), h = cell * static_cast<double>(sim.rows);
    std::string svg = svg_open(w + 20, h + 40);
    svg += "<text x=\"" + fmt((w + 20) / 2) +
           "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">Cosine similarity</text>\n<g transform=\"translate(10,30)\">\n";
    for (std::size_t i = 0; i < sim.rows; ++i) {
        for (std::size_t j = 0; j < sim.cols; ++j) {
            svg += "<rect x=\"" + fmt(cell * static_cast<double>(j)) + "\" y=\"" + fmt(cell * static_cast<double>(i)) +
                   "\" width=\"" + fmt(cell) + "\" height=\"" + fmt(cell) + "\" fill=\"" +
                   similarity_color(sim(i, j)) + "\"/>\n";
        }
    }
    svg += "</g>\n</svg>\n";
    return svg;
}

void emit_plot(const TrainLog& log, const std::filesystem::path& path) { write_text(loss_curves_svg(log), path); }
void emit_plot(const PcaResult& pca, const std::filesystem::path& path) { write_text(pca_trajectory_svg(pca), path); }
void emit_plot(const Matrix& similarity, const std::filesystem::path& path) {
    write_text(similarity_svg(similarity), path);
}

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
    std::string text = "rows=" + std::to_string(m.rows) + ",cols=" + std::to_string(m.cols) + "\n";
    char buf[32];
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", m(i, j));
            text += buf;
            text += j + 1 < m.cols ? "," : "\n";
        }
    }
    write_text(text, path);
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t rows = 0, cols = 0;
    if (!std::getline(in, line) || std::sscanf(line.c_str(), "rows=%zu,cols=%zu", &rows, &cols) != 2) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": missing dims header");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw ParseError(ParseError::Kind::Truncated, path.string() + ": missing rows");
        const char* p = line.c_str();
        for (std::size_t j = 0; j < cols; ++j) {
            char* end = nullptr;
            m(i, j) = std::strtod(p, &end);
            if (end == p) throw ParseError(ParseError::Kind::Malformed, path.string() + ": bad value");
            p = *end == ',' ? end + 1 : end;
        }
    }
    return m;
}

}  // namespace imitate
