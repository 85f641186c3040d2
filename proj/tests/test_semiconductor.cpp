#include "doctest.h"

#include "ddmor/semiconductor.hpp"
#include "oracle_helpers.hpp"

#include <random>

using namespace ddmor;

TEST_SUITE_BEGIN("semiconductor");

namespace {

PhysicalDevice table_device()
{
    return PhysicalDevice{}; // defaults hold the diode parameters
}

} // namespace

TEST_CASE("unit scaling of the diode parameters")
{
    const PhysicalDevice dev = table_device();
    const ScaledDevice s = scale_device(dev);

    // scalar arithmetic oracles, evaluated independently
    const double sup = 4.06e18;
    const double q = 1.602176634e-19;
    const double lambda = dev.permittivity * dev.thermal_voltage /
                          (dev.length * dev.length * q * sup);
    CHECK(s.lambda == doctest::Approx(lambda).epsilon(1e-14));
    CHECK(s.lambda == doctest::Approx(4.12e-6).epsilon(2e-3));

    CHECK(s.nu_n == doctest::Approx(0.0259 * 1350.0 / 1e-8).epsilon(1e-14));
    CHECK(s.nu_n == doctest::Approx(3.4965e9).epsilon(1e-4));
    CHECK(s.nu_p == doctest::Approx(0.0259 * 480.0 / 1e-8).epsilon(1e-14));

    CHECK(s.eta == doctest::Approx(1.4e10 / 4.06e18).epsilon(1e-14));
    CHECK(s.eta == doctest::Approx(3.448e-9).epsilon(1e-3));

    CHECK(s.current_scale_n ==
          doctest::Approx(dev.area * q * dev.thermal_voltage * sup * 1350.0 / dev.length));
    CHECK(s.current_scale_p ==
          doctest::Approx(dev.area * q * dev.thermal_voltage * sup * 480.0 / dev.length));
    CHECK(s.displacement_scale ==
          doctest::Approx(dev.area * dev.permittivity * dev.thermal_voltage / dev.length));

    SUBCASE("doping sign pattern preserved and normalized")
    {
        CHECK(s.doping[0].value == doctest::Approx(-9.94e15 / 4.06e18));
        CHECK(s.doping[1].value == doctest::Approx(1.0));
    }

    SUBCASE("nonpositive parameters rejected")
    {
        PhysicalDevice bad = table_device();
        bad.mobility_n = 0.0;
        CHECK_THROWS_AS(scale_device(bad), ConfigError);
        bad = table_device();
        bad.length = -1e-4;
        CHECK_THROWS_AS(scale_device(bad), ConfigError);
        bad = table_device();
        bad.doping = {{1.0, 0.0}};
        CHECK_THROWS_AS(scale_device(bad), ConfigError);
    }
}

TEST_CASE("equilibrium boundary values")
{
    const double eta = 3.448e-9;
    const double ut = 0.0259;

    SUBCASE("intrinsic contact")
    {
        const BoundaryValues bv = equilibrium_boundary(0.0, 0.0, ut, eta);
        CHECK(bv.psi == doctest::Approx(0.0));
        CHECK(bv.n == doctest::Approx(eta));
        CHECK(bv.p == doctest::Approx(eta));
    }

    SUBCASE("mass-action identity at random doping")
    {
        std::mt19937 rng(42);
        std::uniform_real_distribution<double> uni(-1.0, 1.0);
        for (int i = 0; i < 200; ++i) {
            const double c = uni(rng);
            const BoundaryValues bv = equilibrium_boundary(c, 0.37, ut, eta);
            CHECK(bv.n * bv.p == doctest::Approx(eta * eta).epsilon(1e-15));
        }
    }

    SUBCASE("strongly n-doped contact")
    {
        const BoundaryValues bv = equilibrium_boundary(1.0, 0.0, ut, eta);
        CHECK(bv.n == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(bv.p == doctest::Approx(eta * eta).epsilon(1e-8));
        CHECK(bv.psi == doctest::Approx(std::log(1.0 / eta)).epsilon(1e-6));
        CHECK(bv.psi == doctest::Approx(19.49).epsilon(1e-3));
    }

    SUBCASE("applied bias shifts the potential only")
    {
        const BoundaryValues ref = equilibrium_boundary(0.5, 0.0, ut, eta);
        const BoundaryValues biased = equilibrium_boundary(0.5, 0.1, ut, eta);
        CHECK(biased.psi - ref.psi == doctest::Approx(0.1 / ut));
        CHECK(biased.n == ref.n);
        CHECK(biased.p == ref.p);
    }
}

TEST_CASE("Shockley-Read-Hall rate")
{
    SUBCASE("thermal equilibrium gives zero rate")
    {
        const double eta = 1e-3;
        CHECK(srh_rate(2e-3, eta * eta / 2e-3, eta, 3.3e-8, 3.3e-7) == doctest::Approx(0.0));
        CHECK(srh_rate(eta, eta, eta, 1.0, 2.0) == doctest::Approx(0.0));
    }
    SUBCASE("unit concentrations without intrinsic level")
    {
        CHECK(srh_rate(1.0, 1.0, 0.0, 1.0, 1.0) == doctest::Approx(0.5));
    }
    SUBCASE("denominator floor prevents division blowup")
    {
        const double r = srh_rate(-1.0, -1.0, 0.0, 1.0, 1.0);
        CHECK(std::isfinite(r));
    }
    SUBCASE("derivatives match finite differences")
    {
        const double eta = 3.4e-9, tn = 3.3e-7, tp = 3.3e-8;
        const double n0 = 0.2, p0 = 1e-4;
        const double d = 1e-7;
        const double fd_n = (srh_rate(n0 + d, p0, eta, tn, tp) -
                             srh_rate(n0 - d, p0, eta, tn, tp)) / (2 * d);
        const double fd_p = (srh_rate(n0, p0 + d, eta, tn, tp) -
                             srh_rate(n0, p0 - d, eta, tn, tp)) / (2 * d);
        CHECK(srh_rate_dn(n0, p0, eta, tn, tp) == doctest::Approx(fd_n).epsilon(1e-6));
        CHECK(srh_rate_dp(n0, p0, eta, tn, tp) == doctest::Approx(fd_p).epsilon(1e-6));
    }
}

TEST_CASE("nonlinear functional assembly")
{
    const FemOperators fem = assemble_operators(build_mesh(4));
    const ScaledDevice dev = scale_device(table_device());
    const Index nc = fem.num_cells();
    const Index mf = fem.num_flux_dofs();
    const DeviceBlocks blocks{nc, mf};
    const auto off = blocks.offsets();

    SUBCASE("vanishes at equilibrium with zero field")
    {
        const Vector n = Vector::Constant(nc, 2.0 * dev.eta);
        const Vector p = Vector::Constant(nc, dev.eta / 2.0);
        const Vector g = Vector::Zero(mf);
        const Vector f = assemble_nonlinearity(n, p, g, fem, dev);
        CHECK(f.lpNorm<Eigen::Infinity>() == doctest::Approx(0.0).epsilon(1e-18));
    }

    SUBCASE("unit concentration and field reproduce hat integrals")
    {
        const Vector n = Vector::Ones(nc);
        const Vector p = Vector::Zero(nc);
        const Vector g = Vector::Ones(mf);
        const Vector f = assemble_nonlinearity(n, p, g, fem, dev);
        for (Index l = 0; l < mf; ++l) {
            const double exact = oracle::integrate_mesh(fem.mesh.nodes, [&](double x) {
                return oracle::hat(fem.mesh.nodes, l, x);
            });
            CHECK(f[off[4] + l] == doctest::Approx(exact).epsilon(1e-13));
        }
        // matches the flux mass acting on the constant-one vector
        const Vector via_mass = fem.mass_flux * Vector::Ones(mf);
        for (Index l = 0; l < mf; ++l)
            CHECK(f[off[4] + l] == doctest::Approx(via_mass[l]).epsilon(1e-13));
    }

    SUBCASE("drift block is bilinear")
    {
        std::mt19937 rng(7);
        std::uniform_real_distribution<double> uni(0.1, 1.0);
        Vector n(nc), p(nc), g(mf);
        for (Index i = 0; i < nc; ++i) {
            n[i] = uni(rng);
            p[i] = uni(rng);
        }
        for (Index i = 0; i < mf; ++i)
            g[i] = uni(rng) - 0.5;
        const Vector f1 = assemble_nonlinearity(n, p, g, fem, dev);
        const Vector f2 = assemble_nonlinearity(2.0 * n, p, g, fem, dev);
        for (Index l = 0; l < mf; ++l)
            CHECK(f2[off[4] + l] == doctest::Approx(2.0 * f1[off[4] + l]).epsilon(1e-12));
        const Vector f3 = assemble_nonlinearity(n, p, 3.0 * g, fem, dev);
        for (Index l = 0; l < mf; ++l)
            CHECK(f3[off[5] + l] == doctest::Approx(3.0 * f1[off[5] + l]).epsilon(1e-12));
    }

    SUBCASE("dimension mismatch rejected")
    {
        const Vector n = Vector::Ones(nc + 1);
        CHECK_THROWS_AS(assemble_nonlinearity(n, Vector::Ones(nc), Vector::Ones(mf), fem, dev),
                        ConfigError);
    }
}

TEST_CASE("right-hand side assembly")
{
    const ScaledDevice dev = scale_device(table_device());
    const FemOperators fem = assemble_operators(build_mesh(4));
    const Index nc = fem.num_cells();
    const Index mf = fem.num_flux_dofs();
    const DeviceBlocks blocks{nc, mf};
    const auto off = blocks.offsets();

    SUBCASE("intrinsic unbiased device")
    {
        const Vector zero_doping = Vector::Zero(nc);
        const Vector b = assemble_rhs({0.0, 0.0}, dev, fem, zero_doping);
        CHECK(b.segment(off[0], nc).lpNorm<Eigen::Infinity>() == 0.0);
        // psi trace vanishes, carrier traces use the intrinsic level
        CHECK(b[off[3] + 0] == doctest::Approx(0.0));
        CHECK(b[off[3] + mf - 1] == doctest::Approx(0.0));
        CHECK(b[off[4] + 0] == doctest::Approx(-dev.eta));
        CHECK(b[off[4] + mf - 1] == doctest::Approx(+dev.eta));
        CHECK(b[off[5] + 0] == doctest::Approx(+dev.eta));
        CHECK(b[off[5] + mf - 1] == doctest::Approx(-dev.eta));
    }

    SUBCASE("doping load from the two-region profile")
    {
        const Vector doping = dev.element_doping(fem.mesh);
        const Vector b = assemble_rhs({0.0, 0.0}, dev, fem, doping);
        const double h = 0.25;
        for (Index k = 0; k < nc / 2; ++k)
            CHECK(b[off[0] + k] == doctest::Approx(9.94e15 / 4.06e18 * h).epsilon(1e-12));
        for (Index k = nc / 2; k < nc; ++k)
            CHECK(b[off[0] + k] == doctest::Approx(-1.0 * h).epsilon(1e-12));
    }

    SUBCASE("contact bias moves only the psi trace")
    {
        const Vector doping = dev.element_doping(fem.mesh);
        const Vector b0 = assemble_rhs({0.0, 0.0}, dev, fem, doping);
        const double delta = 0.2;
        const Vector b1 = assemble_rhs({delta, 0.0}, dev, fem, doping);
        Vector diff = b1 - b0;
        // contact 0 has outward normal -1
        CHECK(diff[off[3] + 0] ==
              doctest::Approx(-delta / dev.thermal_voltage).epsilon(1e-12));
        diff[off[3] + 0] = 0.0;
        CHECK(diff.lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
    }

    SUBCASE("unmapped contact rejected")
    {
        const Vector doping = dev.element_doping(fem.mesh);
        CHECK_THROWS_AS(assemble_rhs({0.0}, dev, fem, doping), ConfigError);
    }
}

TEST_CASE("coupling current extraction")
{
    const ScaledDevice dev = scale_device(table_device());
    const FemOperators fem = assemble_operators(build_mesh(4));
    const Index mf = fem.num_flux_dofs();

    SUBCASE("zero fields give zero current")
    {
        const Vector zero = Vector::Zero(mf);
        CHECK(coupling_current(zero, zero, zero, dev, fem, 0) == 0.0);
        CHECK(coupling_current(zero, zero, zero, dev, fem, 1) == 0.0);
    }

    SUBCASE("stationary current is the conduction trace")
    {
        Vector jn = Vector::Zero(mf), jp = Vector::Zero(mf), dg = Vector::Zero(mf);
        jn[mf - 1] = 2.0;
        jp[mf - 1] = -1.0;
        const double expected = dev.current_scale_n * 2.0 - dev.current_scale_p;
        CHECK(coupling_current(jn, jp, dg, dev, fem, 1) == doctest::Approx(expected));
    }

    SUBCASE("row extractors have one nonzero with documented scales")
    {
        for (std::size_t c : {std::size_t{0}, std::size_t{1}}) {
            const CouplingRows rows = coupling_rows(dev, fem, c);
            CHECK(std::abs(rows.c_jn) == doctest::Approx(dev.current_scale_n));
            CHECK(std::abs(rows.c_jp) == doctest::Approx(dev.current_scale_p));
            CHECK(std::abs(rows.c_dgdt) == doctest::Approx(dev.displacement_scale));
        }
        CHECK(coupling_rows(dev, fem, 0).flux_dof == 0);
        CHECK(coupling_rows(dev, fem, 1).flux_dof == mf - 1);
    }

    SUBCASE("contact index out of range")
    {
        const Vector zero = Vector::Zero(mf);
        CHECK_THROWS(coupling_current(zero, zero, zero, dev, fem, 2));
    }
}

TEST_CASE("doping profile needs a resolving mesh")
{
    const ScaledDevice dev = scale_device(table_device());
    const Mesh1D odd = build_mesh(5); // no node at 0.5
    CHECK_THROWS_AS(dev.element_doping(odd), ConfigError);
    const Mesh1D even = build_mesh(6);
    const Vector doping = dev.element_doping(even);
    CHECK(doping[0] == doctest::Approx(-9.94e15 / 4.06e18));
    CHECK(doping[5] == doctest::Approx(1.0));
}

TEST_SUITE_END();
