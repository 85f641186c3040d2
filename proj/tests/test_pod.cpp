#include "doctest.h"

#include "ddmor/integrator.hpp"
#include "ddmor/pod.hpp"
#include "test_models.hpp"

#include <Eigen/Eigenvalues>

#include <random>

using namespace ddmor;

TEST_SUITE_BEGIN("pod");

TEST_CASE("information gap")
{
    SUBCASE("no truncation means no gap")
    {
        Vector sigma(3);
        sigma << 3.0, 2.0, 1.0;
        CHECK(information_gap(sigma, 3) == 0.0);
        CHECK(information_gap(sigma, 5) == 0.0);
    }
    SUBCASE("flat spectrum")
    {
        Vector sigma = Vector::Ones(4);
        CHECK(information_gap(sigma, 2) == doctest::Approx(std::sqrt(0.5)));
    }
    SUBCASE("two values")
    {
        Vector sigma(2);
        sigma << 4.0, 3.0;
        CHECK(information_gap(sigma, 1) == doctest::Approx(0.6));
    }
    SUBCASE("monotone in s with unit start")
    {
        Vector sigma(5);
        sigma << 5.0, 2.0, 1.0, 0.5, 0.01;
        CHECK(information_gap(sigma, 0) == doctest::Approx(1.0));
        for (Index s = 0; s < 5; ++s)
            CHECK(information_gap(sigma, s) >= information_gap(sigma, s + 1));
    }
    SUBCASE("all-zero spectrum rejected")
    {
        CHECK_THROWS_AS(information_gap(Vector::Zero(3), 1), ConfigError);
    }
}

TEST_CASE("snapshot decomposition basics")
{
    std::mt19937 rng(77);
    std::normal_distribution<double> gauss;

    SUBCASE("single snapshot normalizes")
    {
        Vector y(4);
        y << 1.0, -2.0, 0.5, 3.0;
        Vector mass = Vector::Constant(4, 0.25);
        const PodBasis basis = compute_pod(Matrix(y), mass, 1e-8, DeviceVar::Psi);
        CHECK(basis.dimension() == 1);
        const double norm_m = std::sqrt(y.dot(mass.cwiseProduct(y)));
        CHECK((basis.basis.col(0) - y / norm_m).norm() <= 1e-12);
    }

    SUBCASE("duplicated snapshots have rank one")
    {
        Vector y(5);
        for (Index i = 0; i < 5; ++i)
            y[i] = gauss(rng);
        Matrix snaps(5, 2);
        snaps << y, y;
        const PodBasis basis = compute_pod(snaps, Vector::Ones(5), 1e-12, DeviceVar::N);
        CHECK(basis.dimension() == 1);
        CHECK(information_gap(basis.singular_values, 1) == 0.0);
    }

    SUBCASE("projection error identity against eigendecomposition oracle")
    {
        Matrix y(6, 4);
        for (Index i = 0; i < y.size(); ++i)
            y.data()[i] = gauss(rng);
        const Vector mass = Vector::Ones(6);

        // oracle: eigenvalues of Y^T Y are the squared singular values
        Eigen::SelfAdjointEigenSolver<Matrix> eig(y.transpose() * y);
        Vector lambda = eig.eigenvalues().reverse();

        const PodBasis pod = compute_pod(y, mass, -1.0, DeviceVar::P);
        for (Index s = 1; s <= 4; ++s) {
            const Matrix u = pod.basis.leftCols(std::min<Index>(s, pod.dimension()));
            double proj_err = 0.0;
            for (Index k = 0; k < y.cols(); ++k) {
                const Vector r = y.col(k) - u * (u.transpose() * y.col(k));
                proj_err += r.squaredNorm();
            }
            double tail = 0.0;
            for (Index i = s; i < 4; ++i)
                tail += std::max(lambda[i], 0.0);
            CHECK(proj_err == doctest::Approx(tail).epsilon(1e-8).scale(lambda[0]));
        }
    }

    SUBCASE("mass orthonormality for both spaces")
    {
        const FemOperators fem = assemble_operators(build_mesh(16));
        Matrix yc(16, 7), yf(17, 7);
        for (Index i = 0; i < yc.size(); ++i)
            yc.data()[i] = gauss(rng);
        for (Index i = 0; i < yf.size(); ++i)
            yf.data()[i] = gauss(rng);

        const PodBasis cell = compute_pod(yc, fem.mass_cell, -1.0, DeviceVar::N);
        const Matrix gc = cell.basis.transpose() * fem.mass_cell.asDiagonal() * cell.basis;
        CHECK((gc - Matrix::Identity(gc.rows(), gc.cols())).norm() <= 1e-10);

        const PodBasis flux = compute_pod(yf, fem.mass_flux, -1.0, DeviceVar::Jn);
        const Matrix gf = flux.basis.transpose() * (fem.mass_flux * flux.basis);
        CHECK((gf - Matrix::Identity(gf.rows(), gf.cols())).norm() <= 1e-10);
    }

    SUBCASE("gap target selects the smallest sufficient dimension")
    {
        Matrix y = Matrix::Zero(8, 8);
        Vector scales(8);
        scales << 1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7;
        for (Index k = 0; k < 8; ++k)
            y(k, k) = scales[k];
        const PodBasis pod = compute_pod(y, Vector::Ones(8), 1e-3, DeviceVar::Psi);
        const Index s = pod.dimension();
        CHECK(information_gap(pod.singular_values, s) <= 1e-3);
        if (s > 1)
            CHECK(information_gap(pod.singular_values, s - 1) > 1e-3);
    }

    SUBCASE("completed basis is square and orthonormal")
    {
        const FemOperators fem = assemble_operators(build_mesh(12));
        Matrix y(12, 3);
        for (Index i = 0; i < y.size(); ++i)
            y.data()[i] = gauss(rng);
        const PodBasis pod = compute_pod(y, fem.mass_cell, -1.0, DeviceVar::N);
        const PodBasis full = complete_basis(pod, fem);
        REQUIRE(full.basis.cols() == 12);
        const Matrix gram = full.basis.transpose() * fem.mass_cell.asDiagonal() * full.basis;
        CHECK((gram - Matrix::Identity(12, 12)).norm() <= 1e-8);
    }
}

namespace {

FullModelOptions mesh_options(Index n)
{
    FullModelOptions o;
    o.mesh_elements = n;
    return o;
}

struct RomFixture {
    RomFixture(double delta, Index mesh_n = 160, double amplitude = 0.5, double f = 1e10,
               double periods = 1.0)
        : model(testmodels::basic_diode_circuit(f, amplitude), mesh_options(mesh_n))
    {
        init = consistent_initialize(model, 0.0);
        IntegratorOptions opts;
        opts.rtol = 1e-6;
        opts.t_end = periods / f;
        traj = integrate(model, init.z, init.zdot, opts);
        traj.parameter_hz = f;
        store.add_trajectory(model.layout(), traj);
        bases = merge_bases(store, model, MergeStrategy::ResvdAll, delta);
    }

    FullModel model;
    InitResult init;
    Trajectory traj;
    SnapshotStore store;
    std::vector<DeviceBases> bases;
};

} // namespace

TEST_CASE("reduced model assembly")
{
    RomFixture fix(1e-4);
    ReducedModel rom = build_reduced_model(fix.model, fix.bases, &fix.init.z);

    SUBCASE("identity mass blocks of the projected system")
    {
        const Matrix& a = rom.projected_system(0);
        const auto& r = rom.layout().device[0];
        const Index base = r.offset[0];
        for (std::size_t v : {3, 4, 5}) {
            const Index off = r.offset[v] - base;
            const Matrix blk = a.block(off, off, r.dim[v], r.dim[v]);
            CHECK((blk - Matrix::Identity(r.dim[v], r.dim[v])).norm() <= 1e-10);
        }
    }

    SUBCASE("projected Poisson coupling equals the dense product oracle")
    {
        const Matrix& a = rom.projected_system(0);
        const auto& r = rom.layout().device[0];
        const Index base = r.offset[0];
        const Matrix u_psi = rom.bases()[0][0].basis;
        const Matrix u_g = rom.bases()[0][3].basis;
        const Matrix dense_div = Matrix(fix.model.fem(0).div);
        const Matrix oracle = fix.model.device(0).lambda * u_psi.transpose() * dense_div * u_g;
        const Matrix blk = a.block(0, r.offset[3] - base, r.dim[0], r.dim[3]);
        CHECK((blk - oracle).norm() <= 1e-12 * std::max(1.0, oracle.norm()));
    }

    SUBCASE("lift and project round trip")
    {
        std::mt19937 rng(3);
        std::normal_distribution<double> gauss;
        Vector gamma(rom.size());
        for (Index i = 0; i < rom.size(); ++i)
            gamma[i] = gauss(rng);
        const Vector back = rom.project_full_state(rom.lift_state(gamma));
        CHECK((back - gamma).lpNorm<Eigen::Infinity>() <= 1e-9);
    }

    SUBCASE("tag mismatch rejected")
    {
        auto broken = fix.bases;
        std::swap(broken[0][0], broken[0][3]);
        CHECK_THROWS_AS(build_reduced_model(fix.model, broken, &fix.init.z), ConfigError);
    }
}

TEST_CASE("reduced residual is the projected full residual")
{
    RomFixture fix(1e-6);
    ReducedModel rom = build_reduced_model(fix.model, fix.bases, &fix.init.z);

    std::mt19937 rng(5);
    std::normal_distribution<double> gauss;
    for (int trial = 0; trial < 3; ++trial) {
        const Vector zproj = rom.project_full_state(fix.traj.states.back());
        Vector zr(rom.size()), zrdot(rom.size());
        for (Index i = 0; i < rom.size(); ++i) {
            zr[i] = zproj[i] * (1.0 + 0.01 * gauss(rng));
            zrdot[i] = 0.1 * gauss(rng);
        }
        const double t = fix.traj.times.back();

        Vector reduced_res(rom.size());
        rom.residual(t, zr, zrdot, reduced_res);

        Vector full_res(fix.model.size());
        fix.model.residual(t, rom.lift_state(zr), rom.lift_state(zrdot), full_res);
        const Vector projected = rom.project_residual(full_res);

        CHECK((reduced_res - projected).lpNorm<Eigen::Infinity>() <=
              1e-8 * std::max(1.0, projected.lpNorm<Eigen::Infinity>()));
    }
}

TEST_CASE("zero state isolates the nonlinearity and load projections")
{
    RomFixture fix(1e-4);
    ReducedModel rom = build_reduced_model(fix.model, fix.bases, &fix.init.z);

    Vector zr = Vector::Zero(rom.size());
    Vector res(rom.size());
    rom.residual(0.0, zr, zr, res);

    const FemOperators& fem = fix.model.fem(0);
    const ScaledDevice& dev = fix.model.device(0);
    const Index nc = fem.num_cells();
    const Index mf = fem.num_flux_dofs();
    const DeviceBlocks blocks{nc, mf};
    const auto boff = blocks.offsets();
    const Vector f0 =
        assemble_nonlinearity(Vector::Zero(nc), Vector::Zero(nc), Vector::Zero(mf), fem, dev);
    const Vector b0 = assemble_rhs({0.0, 0.0}, dev, fem, fix.model.doping(0));

    const auto& r = rom.layout().device[0];
    for (std::size_t v = 0; v < 6; ++v) {
        const Index dim_full = v < 3 ? nc : mf;
        const Vector expected = rom.bases()[0][v].basis.transpose() *
                                (f0.segment(boff[v], dim_full) - b0.segment(boff[v], dim_full));
        CHECK((res.segment(r.offset[v], r.dim[v]) - expected).lpNorm<Eigen::Infinity>() <=
              1e-12 * std::max(1.0, expected.lpNorm<Eigen::Infinity>()));
    }
}

TEST_CASE("reduced Jacobian matches finite differences")
{
    RomFixture fix(1e-5);
    ReducedModel rom = build_reduced_model(fix.model, fix.bases, &fix.init.z);

    std::mt19937 rng(9);
    std::normal_distribution<double> gauss;
    const Vector z0 = rom.project_full_state(fix.traj.states.back());
    const Vector zdot = Vector::Zero(rom.size());
    const double t = fix.traj.times.back();

    Vector direction(rom.size());
    for (Index i = 0; i < rom.size(); ++i)
        direction[i] = gauss(rng) * std::max(std::abs(z0[i]), 1e-6);

    const double delta = 1e-6;
    Vector fp(rom.size()), fm(rom.size());
    rom.residual(t, z0 + delta * direction, zdot, fp);
    rom.residual(t, z0 - delta * direction, zdot, fm);
    const Vector fd = (fp - fm) / (2.0 * delta);
    const Vector an = rom.jacobian(t, z0, zdot, 0.0) * direction;
    CHECK((an - fd).norm() <= 1e-5 * std::max(an.norm(), 1e-30));
}

TEST_CASE("full-rank reduced model reproduces the full trajectory")
{
    // gentle drive keeps this mesh-friendly and quick
    RomFixture fix(-1.0, 160, 0.5, 1e10, 1.0);
    ReducedModel rom = build_reduced_model(fix.model, fix.bases, &fix.init.z);
    rom.set_frequency(1e10);

    const InitResult rinit = consistent_initialize(rom, 0.0);
    IntegratorOptions opts;
    opts.rtol = 1e-6;
    opts.t_end = 1.0 / 1e10;
    Trajectory reduced = integrate(rom, rinit.z, rinit.zdot, opts);
    const Trajectory lifted = lift_trajectory(rom, reduced);

    // compare the coupling current through the source over the run
    const Index jv = fix.model.layout().jv_offset();
    double max_err = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < fix.traj.size(); ++k) {
        const double t = fix.traj.times[k];
        const Vector zi = lifted.interpolate_state(t);
        max_err = std::max(max_err, std::abs(zi[jv] - fix.traj.states[k][jv]));
        scale = std::max(scale, std::abs(fix.traj.states[k][jv]));
    }
    CHECK(max_err <= 1e-4 * scale);
}

TEST_CASE("basis merging")
{
    std::mt19937 rng(13);
    std::normal_distribution<double> gauss;
    const FemOperators fem = assemble_operators(build_mesh(10));

    auto span_distance = [](const Matrix& a, const Matrix& b) {
        // largest principal-angle sine between equal spans is zero
        Eigen::HouseholderQR<Matrix> qa(a), qb(b);
        const Matrix q1 = Matrix(qa.householderQ()).leftCols(a.cols());
        const Matrix q2 = Matrix(qb.householderQ()).leftCols(b.cols());
        Eigen::BDCSVD<Matrix> svd(q1.transpose() * q2);
        return std::sqrt(std::max(0.0, 1.0 - std::pow(svd.singularValues().minCoeff(), 2)));
    };

    SUBCASE("identical snapshot sets leave the span unchanged")
    {
        Matrix y(10, 4);
        for (Index i = 0; i < y.size(); ++i)
            y.data()[i] = gauss(rng);
        const PodBasis once = compute_pod(y, fem.mass_cell, 1e-12, DeviceVar::N);
        Matrix twice(10, 8);
        twice << y, y;
        const PodBasis merged = compute_pod(twice, fem.mass_cell, 1e-12, DeviceVar::N);
        REQUIRE(once.dimension() == merged.dimension());
        CHECK(span_distance(once.basis, merged.basis) <= 1e-7);
    }

    SUBCASE("orthogonal rank-one sets span their union")
    {
        Matrix a = Matrix::Zero(10, 1), b = Matrix::Zero(10, 1);
        a(1, 0) = 1.0;
        b(7, 0) = 1.0; // disjoint supports: mass-orthogonal
        Matrix joined(10, 2);
        joined << a, b;
        const PodBasis merged = compute_pod(joined, fem.mass_cell, -1.0, DeviceVar::N);
        CHECK(merged.dimension() == 2);
    }
}

TEST_SUITE_END();
