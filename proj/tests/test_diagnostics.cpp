#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "imitate/dataset.hpp"
#include "imitate/diagnostics.hpp"
#include "imitate/errors.hpp"
#include "test_support.hpp"

using namespace imitate;
using imitate::testing::read_bytes;
using imitate::testing::scratch_dir;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

/// Random orthogonal matrix from a QR factorization.
Eigen::MatrixXd random_rotation(int n, Rng& rng) {
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
    return Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
    return e;
}

Matrix from_eigen(const Eigen::MatrixXd& e) {
    Matrix m(e.rows(), e.cols());
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = e(i, j);
    return m;
}

Matrix reversed(const Matrix& m) {
    Matrix r(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) r(i, j) = m(m.rows - 1 - i, j);
    return r;
}

}  // namespace

TEST_CASE("jacobi eigen solver diagonalizes symmetric matrices") {
    Rng rng(1);
    const Matrix a = random_matrix(9, 9, rng);
    Matrix s(9, 9);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) s(i, j) = a(i, j) + a(j, i);
    const SymmetricEigen eig = jacobi_eigen(s);
    for (std::size_t k = 0; k + 1 < 9; ++k) CHECK(eig.values[k] >= eig.values[k + 1]);
    for (std::size_t k = 0; k < 9; ++k) {
        for (std::size_t i = 0; i < 9; ++i) {
            double sv = 0.0;
            for (std::size_t j = 0; j < 9; ++j) sv += s(i, j) * eig.vectors(k, j);
            CHECK(std::abs(sv - eig.values[k] * eig.vectors(k, i)) <= 1e-10);
        }
    }
}

TEST_CASE("pca3 matches an independent eigensolver on random data") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix x = random_matrix(50, 32, rng);
        const PcaResult r = pca3(x);

        const Eigen::MatrixXd ex = to_eigen(x);
        const Eigen::MatrixXd centred = ex.rowwise() - ex.colwise().mean();
        const Eigen::MatrixXd cov = centred.transpose() * centred / 49.0;
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        const Eigen::VectorXd values = solver.eigenvalues();  // ascending
        const double trace = values.sum();
        for (int k = 0; k < 3; ++k) {
            Eigen::VectorXd v = solver.eigenvectors().col(31 - k);
            Eigen::Index arg;
            v.cwiseAbs().maxCoeff(&arg);
            if (v(arg) < 0) v = -v;
            CHECK(std::abs(r.explained_ratio[k] - values(31 - k) / trace) <= 1e-6);
            for (int j = 0; j < 32; ++j) CHECK(std::abs(r.components(k, j) - v(j)) <= 1e-6);
            const Eigen::VectorXd proj = centred * v;
            for (int i = 0; i < 50; ++i) CHECK(std::abs(r.projected(i, k) - proj(i)) <= 1e-6);
        }
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                double dot = 0.0;
                for (int j = 0; j < 32; ++j) dot += r.components(a, j) * r.components(b, j);
                CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) <= 1e-9);
            }
        }
        CHECK(r.explained_ratio[0] >= r.explained_ratio[1]);
        CHECK(r.explained_ratio[1] >= r.explained_ratio[2]);
        CHECK(r.explained_ratio[0] + r.explained_ratio[1] + r.explained_ratio[2] <= 1.0 + 1e-12);
    }
}

TEST_CASE("pca3 on rank-one and isotropic lattice data") {
    Rng rng(3);
    std::vector<double> a(32), d(32);
    for (double& v : a) v = rng.uniform(-1, 1);
    for (double& v : d) v = rng.uniform(-1, 1);
    Matrix line(20, 32);
    for (std::size_t t = 0; t < 20; ++t)
        for (std::size_t j = 0; j < 32; ++j) line(t, j) = a[j] + static_cast<double>(t) * d[j];
    const PcaResult l = pca3(line);
    CHECK(std::abs(l.explained_ratio[0] - 1.0) <= 1e-9);
    CHECK(l.explained_ratio[1] <= 1e-9);
    CHECK(l.explained_ratio[2] <= 1e-9);

    const Eigen::MatrixXd q = random_rotation(32, rng);
    Matrix lattice(25, 32);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            for (int c = 0; c < 32; ++c) lattice(i * 5 + j, c) = i * q(c, 0) + j * q(c, 1);
        }
    }
    const PcaResult s = pca3(lattice);
    CHECK(std::abs(s.explained_ratio[0] - s.explained_ratio[1]) <= 1e-9);
    CHECK(std::abs(s.explained_ratio[0] - 0.5) <= 1e-9);

    CHECK_THROWS_AS(pca3(Matrix(3, 32)), ConfigError);
}

TEST_CASE("pca explained variance is rotation invariant") {
    Rng rng(4);
    const Matrix x = random_matrix(40, 32, rng);
    const Matrix rotated = from_eigen(to_eigen(x) * random_rotation(32, rng));
    const PcaResult a = pca3(x), b = pca3(rotated);
    for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(a.explained_ratio[k] - b.explained_ratio[k]) <= 1e-9);
        for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(std::abs(a.projected(i, k)) - std::abs(b.projected(i, k))) <= 1e-9);
    }
}

TEST_CASE("cosine similarity identities") {
    Rng rng(5);
    const Matrix x = random_matrix(30, 32, rng);
    const Matrix s = cosine_similarity_matrix(x, x);
    for (std::size_t i = 0; i < 30; ++i) CHECK(std::abs(s(i, i) - 1.0) <= 1e-6);
    for (double v : s.data) CHECK((v >= -1.0 && v <= 1.0));

    Matrix pair(2, 3);
    pair(0, 0) = 1.0;
    pair(0, 1) = 2.0;
    pair(1, 0) = -1.0;
    pair(1, 1) = -2.0;
    CHECK(cosine_similarity_matrix(pair, pair)(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
    Matrix ortho(2, 3);
    ortho(0, 0) = 1.0;
    ortho(1, 2) = 3.0;
    CHECK(std::abs(cosine_similarity_matrix(ortho, ortho)(0, 1)) <= 1e-12);

    Matrix scaled = x;
    for (std::size_t j = 0; j < 32; ++j) scaled(7, j) *= 13.5;
    const Matrix t = cosine_similarity_matrix(scaled, x);
    for (std::size_t j = 0; j < 30; ++j) CHECK(std::abs(t(7, j) - s(7, j)) <= 1e-6);

    const Matrix zero(2, 3);
    for (double v : cosine_similarity_matrix(zero, zero).data) CHECK(std::isfinite(v));
}

TEST_CASE("alignment error closed forms") {
    Rng rng(6);
    const Matrix x = random_matrix(5, 8, rng);
    CHECK(alignment_error(x, x) == 0.0);
    CHECK(alignment_error(x, reversed(x)) == doctest::Approx(2.4).epsilon(1e-12));
    const Matrix y = random_matrix(9, 8, rng);
    CHECK(alignment_error(y, reversed(y)) == doctest::Approx((81.0 - 1.0) / 18.0).epsilon(1e-12));

    Matrix ties(3, 1);  // all rows equal: every j* is 0
    CHECK(alignment_error(ties, ties) == doctest::Approx(1.0));
    CHECK_THROWS_AS(alignment_error(x, y), ConfigError);
}

TEST_CASE("alignment of independent random tracks is near T/3") {
    Rng rng(7);
    double sum = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        sum += alignment_error(random_matrix(120, 32, rng), random_matrix(120, 32, rng));
    }
    const double mean = sum / 20.0;
    CHECK(mean >= 30.0);
    CHECK(mean <= 50.0);
}

TEST_CASE("embed_video is batch and thread invariant") {
    Episode ep = record_episode(make_arm(RobotId::Sawyer), 12, 60, 3, RecordOptions{16, 16, 1});
    const NetworkParams p = init_params(Architecture{}, 1);
    const Matrix all = embed_video(p, ep, 100);
    CHECK(all.rows == 12);
    CHECK(embed_video(p, ep, 1) == all);
    CHECK(embed_video(p, ep, 5, 3) == all);

    for (Image& f : ep.frames) f = ep.frames.front();
    const Matrix same = embed_video(p, ep);
    for (std::size_t i = 1; i < same.rows; ++i)
        for (std::size_t j = 0; j < same.cols; ++j) CHECK(same(i, j) == same(0, j));
}

TEST_CASE("plots are deterministic and well formed") {
    TrainLog empty;
    CHECK_THROWS_AS(loss_curves_svg(empty), ConfigError);

    TrainLog log;
    for (int e = 0; e < 5; ++e) log.rows.push_back({e, 3.0 - 0.3 * e, 7.0 - e, 0.2, 2.5, 6.0, 0.1 + 0.01 * e});
    log.best_epoch = 0;
    const std::string svg = loss_curves_svg(log);
    CHECK(svg == loss_curves_svg(log));
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("polyline") != std::string::npos);

    Rng rng(8);
    const PcaResult pca = pca3(random_matrix(20, 32, rng));
    const std::string p1 = pca_trajectory_svg(pca);
    CHECK(p1 == pca_trajectory_svg(pca));
    CHECK(p1.find("<line") != std::string::npos);

    const Matrix track = random_matrix(6, 32, rng);
    const Matrix sim = cosine_similarity_matrix(track, track);
    const std::string s = similarity_svg(sim);
    const std::string top = "fill=\"" + similarity_color(1.0) + "\"";
    CHECK(similarity_color(1.0) == "#b40426");
    std::size_t count = 0;
    for (std::size_t pos = s.find(top); pos != std::string::npos; pos = s.find(top, pos + 1)) ++count;
    CHECK(count >= 6);  // every diagonal cell
    for (std::size_t i = 0; i < 6; ++i) CHECK(similarity_color(sim(i, i)) == similarity_color(1.0));
    CHECK(similarity_color(-1.0) != similarity_color(1.0));

    const auto dir = scratch_dir("diag_plots");
    emit_plot(sim, dir / "a.svg");
    emit_plot(sim, dir / "b.svg");
    CHECK(read_bytes(dir / "a.svg") == read_bytes(dir / "b.svg"));
    CHECK(read_bytes(dir / "a.svg") == s);
}

TEST_CASE("matrix CSV round-trip") {
    Rng rng(9);
    const Matrix m = random_matrix(7, 3, rng);
    const auto dir = scratch_dir("diag_csv");
    write_matrix_csv(m, dir / "m.csv");
    CHECK(read_bytes(dir / "m.csv").rfind("rows=7,cols=3\n", 0) == 0);
    const Matrix back = read_matrix_csv(dir / "m.csv");
    REQUIRE(back.rows == 7);
    REQUIRE(back.cols == 3);
    for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(m.data[i]).epsilon(1e-8));
}
