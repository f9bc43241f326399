#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "imitate/dataset.hpp"
#include "imitate/nn.hpp"
#include "imitate/tensor.hpp"
#include "imitate/trainer.hpp"

namespace imitate {

/// One embedding row per frame of an episode.
using EmbeddingTrack = Matrix;

/// Encodes every frame, `batch` frames at a time. The result does not
/// depend on `batch` or `threads`.
EmbeddingTrack embed_video(const NetworkParams& params, const Episode& episode, std::size_t batch = 32,
                           int threads = 1);

struct SymmetricEigen {
    std::vector<double> values;  // descending
    Matrix vectors;              // row i is the unit eigenvector of values[i]
};

/// Cyclic Jacobi rotations on a symmetric matrix.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, int max_sweeps = 100);

struct PcaResult {
    std::vector<double> mean;
    Matrix components;  // 3 x D, orthonormal rows
    std::array<double, 3> explained_ratio{};
    Matrix projected;  // T x 3
};

/// Top three principal directions of the mean-centred rows. Each component's
/// largest-magnitude entry is made positive. Throws ConfigError when T < 4.
PcaResult pca3(const Matrix& track);

/// (i, j) = <a_i, b_j> / ((|a_i| + 1e-12)(|b_j| + 1e-12)).
Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b);

/// Mean over i of |j* - i| where j* is the nearest row of `b` to row i of `a`
/// (ties go to the smallest j). Throws ConfigError on a length mismatch.
double alignment_error(const Matrix& a, const Matrix& b);

/// Two panels: totals (train/val) and per-term losses. Throws ConfigError when empty.
std::string loss_curves_svg(const TrainLog& log);
/// Orthographic view of the 3D trajectory, segments coloured by frame index.
std::string pca_trajectory_svg(const PcaResult& pca);
/// One cell per entry, coloured on a diverging map over [-1, 1].
std::string similarity_svg(const Matrix& sim);

/// "#rrggbb" for a similarity value; 1.0 maps to the map's maximum colour.
std::string similarity_color(double value);

void emit_plot(const TrainLog& log, const std::filesystem::path& path);
void emit_plot(const PcaResult& pca, const std::filesystem::path& path);
void emit_plot(const Matrix& similarity, const std::filesystem::path& path);

/// First line "rows=R,cols=C", then one comma-separated row per line (%.9g).
void write_matrix_csv(const Matrix& m, const std::filesystem::path& path);
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace imitate
