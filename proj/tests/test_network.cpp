#include "doctest.h"

#include "ddmor/integrator.hpp"
#include "ddmor/network.hpp"
#include "test_models.hpp"

#include <random>

using namespace ddmor;

TEST_SUITE_BEGIN("network");

TEST_CASE("source evaluation")
{
    SourceSpec sine{SourceSpec::Waveform::Sine, 5.0, 1e9, 0.0};
    CHECK(source_eval(0.0, sine) == doctest::Approx(0.0));
    CHECK(source_eval(2.5e-10, sine) == doctest::Approx(5.0));
    sine.offset = 1.5;
    CHECK(source_eval(2.5e-10, sine) == doctest::Approx(6.5));
    SourceSpec dc{SourceSpec::Waveform::Dc, 3.0, 0.0, 0.0};
    CHECK(source_eval(123.0, dc) == doctest::Approx(3.0));
}

TEST_CASE("incidence matrices of the basic circuit")
{
    const Netlist net = testmodels::basic_diode_circuit(1e9);
    const Matrix av = net.incidence(BranchType::VoltageSource);
    const Matrix as = net.incidence(BranchType::Semiconductor);
    const Matrix ar = net.incidence(BranchType::Resistor);
    REQUIRE(av.rows() == 2);
    CHECK(av(0, 0) == 1.0);
    CHECK(av(1, 0) == 0.0);
    CHECK(as(0, 0) == -1.0);
    CHECK(as(1, 0) == 1.0);
    CHECK(ar(0, 0) == 0.0);
    CHECK(ar(1, 0) == 1.0);
}

TEST_CASE("smallest network and structural validation")
{
    SUBCASE("single grounded resistor")
    {
        Netlist net;
        net.node_names = {"1"};
        Branch r;
        r.type = BranchType::Resistor;
        r.name = "r";
        r.node_plus = 0;
        r.node_minus = -1;
        r.value = 10.0;
        net.branches.push_back(r);
        net.validate();
        const Matrix ar = net.incidence(BranchType::Resistor);
        CHECK(ar.rows() == 1);
        CHECK(ar(0, 0) == 1.0);
    }

    SUBCASE("duplicate branch names rejected")
    {
        Netlist net = testmodels::basic_diode_circuit(1e9);
        net.branches[2].name = "vs";
        CHECK_THROWS_AS(net.validate(), ConfigError);
    }

    SUBCASE("dangling node rejected")
    {
        Netlist net = testmodels::basic_diode_circuit(1e9);
        net.node_names.push_back("floating");
        CHECK_THROWS_AS(net.validate(), ConfigError);
    }

    SUBCASE("missing device reference rejected")
    {
        Netlist net = testmodels::basic_diode_circuit(1e9);
        net.branches[1].device = 3;
        CHECK_THROWS_AS(net.validate(), ConfigError);
    }

    SUBCASE("nonpositive element values rejected")
    {
        Netlist net = testmodels::basic_diode_circuit(1e9);
        net.branches[2].value = 0.0;
        CHECK_THROWS_AS(net.validate(), ConfigError);
    }
}

TEST_CASE("rectifier bridge structure")
{
    const Netlist net = testmodels::rectifier_bridge(1e9);
    net.validate();
    const Matrix as = net.incidence(BranchType::Semiconductor);
    REQUIRE(as.rows() == 3);
    REQUIRE(as.cols() == 4);
    // every branch column sums to 0, +1 or -1 (ground absorbs the rest)
    for (Index j = 0; j < as.cols(); ++j) {
        const double s = as.col(j).sum();
        CHECK((s == 0.0 || s == 1.0 || s == -1.0));
    }
    // each column has at most one +1 and one -1
    for (Index j = 0; j < as.cols(); ++j) {
        int plus = 0, minus = 0;
        for (Index i = 0; i < as.rows(); ++i) {
            if (as(i, j) == 1.0)
                ++plus;
            if (as(i, j) == -1.0)
                ++minus;
        }
        CHECK(plus <= 1);
        CHECK(minus <= 1);
    }
}

TEST_CASE("consistent initialization at zero drive")
{
    FullModelOptions opts;
    opts.mesh_elements = 160;
    FullModel model(testmodels::basic_diode_circuit(1e10), opts);

    const InitResult init = consistent_initialize(model, 0.0);
    CHECK(init.residual_norm <= 1e-10);

    const auto& layout = model.layout();
    // v_s(0) = 0: network at rest up to the discretization's leakage current
    CHECK(init.z.head(layout.nodes).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(init.z.segment(layout.jv_offset(), layout.vsrc + layout.inductors + layout.sbranches)
              .lpNorm<Eigen::Infinity>() <= 1e-11);

    SUBCASE("equilibrium persists with zero sources")
    {
        Vector f(model.size());
        Vector zdot = Vector::Zero(model.size());
        model.set_source_scale(0.0);
        model.residual(0.123, init.z, zdot, f);
        CHECK(f.lpNorm<Eigen::Infinity>() <= 1e-10);
    }

    SUBCASE("scaled Poisson residual vanishes at equilibrium")
    {
        const auto& r = layout.device[0];
        const FemOperators& fem = model.fem(0);
        const ScaledDevice& dev = model.device(0);
        const Vector psi = init.z.segment(r.psi, r.cells);
        const Vector n = init.z.segment(r.n, r.cells);
        const Vector p = init.z.segment(r.p, r.cells);
        const Vector g = init.z.segment(r.grad_psi, r.flux);
        const Vector poisson = dev.lambda * (fem.div * g) -
                               fem.mass_cell.cwiseProduct(n - p - model.doping(0));
        CHECK(poisson.lpNorm<Eigen::Infinity>() <= 1e-10);
    }

    SUBCASE("stationary contact currents balance")
    {
        const auto& r = layout.device[0];
        const Vector jn = init.z.segment(r.j_n, r.flux);
        const Vector jp = init.z.segment(r.j_p, r.flux);
        const Vector dg = Vector::Zero(r.flux);
        const double j0 = coupling_current(jn, jp, dg, model.device(0), model.fem(0), 0);
        const double j1 = coupling_current(jn, jp, dg, model.device(0), model.fem(0), 1);
        CHECK(j0 + j1 == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("residual block sparsity")
{
    FullModelOptions opts;
    opts.mesh_elements = 160;
    FullModel model(testmodels::basic_diode_circuit(1e10), opts);
    const InitResult init = consistent_initialize(model, 0.0);
    const auto& layout = model.layout();
    const auto& r = layout.device[0];

    Vector f0(model.size()), f1(model.size());
    const Vector zdot = Vector::Zero(model.size());
    model.residual(0.0, init.z, zdot, f0);
    Vector z = init.z;
    z.segment(r.psi, r.cells).array() += 0.37;
    model.residual(0.0, z, zdot, f1);

    // network rows (KCL, source, coupling) are untouched by psi
    const Index network_rows = layout.nodes + layout.vsrc + layout.inductors + layout.sbranches;
    CHECK((f1 - f0).head(network_rows).lpNorm<Eigen::Infinity>() == 0.0);
    // the potential moves only fem rows
    CHECK((f1 - f0).tail(model.size() - network_rows).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("voltage rows depend on node potentials only through the source branch")
{
    FullModelOptions opts;
    opts.mesh_elements = 160;
    FullModel model(testmodels::basic_diode_circuit(1e10), opts);
    const Vector zdot = Vector::Zero(model.size());
    const auto& layout = model.layout();

    std::mt19937 rng(3);
    std::normal_distribution<double> gauss;
    Vector z = Vector::Zero(model.size());
    for (Index i = 0; i < layout.nodes; ++i)
        z[i] = gauss(rng);
    Vector f(model.size());
    model.residual(0.0, z, zdot, f);
    // row of the voltage source equals e_1 - v_s(0) = e_1
    CHECK(f[layout.jv_offset()] == doctest::Approx(z[0]));
}

namespace {

void check_directional_derivative(FullModel& model, const Vector& z, const Vector& zdot,
                                  std::mt19937& rng)
{
    std::normal_distribution<double> gauss;
    const Index n = model.size();

    Vector direction(n);
    for (Index i = 0; i < n; ++i)
        direction[i] = gauss(rng) * std::max(std::abs(z[i]), 1e-4 * (1.0 + std::abs(z[i])));

    const double delta = 1e-6;
    Vector fp(n), fm(n);
    model.residual(0.0, z + delta * direction, zdot, fp);
    model.residual(0.0, z - delta * direction, zdot, fm);
    const Vector fd = (fp - fm) / (2.0 * delta);
    const Vector an = model.jacobian(0.0, z, zdot, 0.0) * direction;
    CHECK((an - fd).norm() <= 1e-5 * std::max(an.norm(), 1e-30));
}

} // namespace

TEST_CASE("analytic Jacobian against finite differences")
{
    FullModelOptions opts;
    opts.mesh_elements = 160;
    FullModel model(testmodels::basic_diode_circuit(1e10), opts);
    const InitResult init = consistent_initialize(model, 0.0);

    std::mt19937 rng(11);
    std::normal_distribution<double> gauss;

    SUBCASE("state derivative at perturbed equilibria")
    {
        for (int trial = 0; trial < 5; ++trial) {
            Vector z = init.z;
            for (Index i = 0; i < z.size(); ++i)
                z[i] += 0.05 * gauss(rng) * std::max(std::abs(z[i]), 1e-8);
            check_directional_derivative(model, z, Vector::Zero(model.size()), rng);
        }
    }

    SUBCASE("mass action equals the alpha-scaled difference")
    {
        const Vector zdot = Vector::Zero(model.size());
        const Matrix j0 = Matrix(model.jacobian(0.0, init.z, zdot, 0.0));
        const Matrix j1 = Matrix(model.jacobian(0.0, init.z, zdot, 1.0));
        const double alpha = 7.5e3;
        const Matrix ja = Matrix(model.jacobian(0.0, init.z, zdot, alpha));
        CHECK((ja - j0 - alpha * (j1 - j0)).norm() <=
              1e-12 * std::max(1.0, ja.norm()));
    }

    SUBCASE("derivative-direction action matches the mass part")
    {
        // f is affine in zdot: f(z, zdot + w) - f(z, zdot) = (df/dzdot) w
        const Vector zdot = Vector::Zero(model.size());
        Vector w(model.size());
        for (Index i = 0; i < w.size(); ++i)
            w[i] = gauss(rng) * std::max(std::abs(init.z[i]), 1e-6);
        Vector fa(model.size()), fb(model.size());
        model.residual(0.0, init.z, zdot, fa);
        model.residual(0.0, init.z, zdot + w, fb);
        const Matrix j0 = Matrix(model.jacobian(0.0, init.z, zdot, 0.0));
        const Matrix j1 = Matrix(model.jacobian(0.0, init.z, zdot, 1.0));
        const Vector an = (j1 - j0) * w;
        CHECK((fb - fa - an).norm() <= 1e-10 * std::max(1.0, an.norm()));
    }
}

TEST_CASE("linear network Jacobian is constant in the state")
{
    FullModel model(testmodels::rc_lowpass(5e4), {});
    std::mt19937 rng(5);
    std::normal_distribution<double> gauss;
    Vector z1(model.size()), z2(model.size()), zdot = Vector::Zero(model.size());
    for (Index i = 0; i < model.size(); ++i) {
        z1[i] = gauss(rng);
        z2[i] = gauss(rng);
    }
    const double alpha = 1e5;
    const Matrix ja = Matrix(model.jacobian(0.0, z1, zdot, alpha));
    const Matrix jb = Matrix(model.jacobian(0.0, z2, zdot, alpha));
    CHECK((ja - jb).norm() == 0.0);

    // analytic stamps: KCL row of "out" node has 1/R and alpha*C on the diagonal
    CHECK(ja(1, 1) == doctest::Approx(1.0 / 1e3 + alpha * 1e-9));
    CHECK(ja(1, 0) == doctest::Approx(-1.0 / 1e3));
}

TEST_SUITE_END();
