#include <doctest.h>

#include <cmath>
#include <numbers>

#include "safeinfer/errors.hpp"
#include "safeinfer/safety_filter.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace safeinfer;

namespace {

CbfConfig config(double d_safe, double lookahead) {
    CbfConfig c;
    c.d_safe = d_safe;
    c.lookahead = lookahead;
    c.c_F = {0.0};
    c.delta_i = {0.0};
    return c;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("barrier value examples") {
    CHECK(cbf_value({0.0, 0.0, 0.3}, Eigen::Vector2d(1.0, 0.0), config(1.0, 0.0)) == 0.0);
    CHECK(cbf_value({0.0, 0.0, 1.0}, Eigen::Vector2d(3.0, 4.0), config(1.0, 0.0)) == 24.0);
    CHECK(cbf_value({0.0, 0.0, 0.0}, Eigen::Vector2d(2.0, 0.0), config(1.0, 1.0)) == 0.0);
}

TEST_CASE("look-ahead point") {
    const Eigen::Vector2d p = lookahead_point({1.0, 2.0, std::numbers::pi / 2}, 0.5);
    CHECK(p(0) == doctest::Approx(1.0));
    CHECK(p(1) == doctest::Approx(2.5));
}

TEST_CASE("Lie derivative examples") {
    const double d = 2.5;
    const CbfConfig cfg = config(1.0, 0.4);
    // theta = 0, agent placed so that r = (d, 0).
    const EgoState ego{0.0, 0.0, 0.0};
    const Eigen::Vector2d agent(0.4 - d, 0.0);
    const CbfRow row = lie_derivatives(ego, agent, cfg);
    CHECK(row.lf == 0.0);
    CHECK(row.lg(0) == doctest::Approx(2.0 * d));
    CHECK(row.lg(1) == doctest::Approx(0.0));
    CHECK(row.dh_dxi(0) == doctest::Approx(-2.0 * d));
    CHECK(row.dh_dxi(1) == doctest::Approx(0.0));
    CHECK(row.h == doctest::Approx(d * d - 1.0));
}

TEST_CASE("Lie derivatives match central differences of the barrier") {
    testing::Gen g(51);
    for (int trial = 0; trial < 500; ++trial) {
        const CbfConfig cfg = config(g.uniform(0.5, 2.0), g.uniform(0.05, 1.0));
        const EgoState ego{g.uniform(-5, 5), g.uniform(-5, 5), g.uniform(-3.1, 3.1)};
        const Eigen::Vector2d agent = g.vector(2, -5, 5);
        const CbfRow row = lie_derivatives(ego, agent, cfg);
        const double e = 1e-6;
        auto h = [&](const EgoState& s, const Eigen::Vector2d& x) { return cbf_value(s, x, cfg); };
        const double dpx = (h({ego.px + e, ego.py, ego.theta}, agent) - h({ego.px - e, ego.py, ego.theta}, agent)) / (2 * e);
        const double dpy = (h({ego.px, ego.py + e, ego.theta}, agent) - h({ego.px, ego.py - e, ego.theta}, agent)) / (2 * e);
        const double dth = (h({ego.px, ego.py, ego.theta + e}, agent) - h({ego.px, ego.py, ego.theta - e}, agent)) / (2 * e);
        // L_g h = dh/dp . (cos, sin) for v and dh/dtheta for omega.
        const double lg_v = dpx * std::cos(ego.theta) + dpy * std::sin(ego.theta);
        CHECK(rel_err(row.lg(0), lg_v) <= 1e-6);
        CHECK(rel_err(row.lg(1), dth) <= 1e-6);
        for (int r = 0; r < 2; ++r) {
            Eigen::Vector2d xp = agent;
            Eigen::Vector2d xm = agent;
            xp(r) += e;
            xm(r) -= e;
            CHECK(rel_err(row.dh_dxi(r), (h(ego, xp) - h(ego, xm)) / (2 * e)) <= 1e-6);
        }
        CHECK(row.h == cbf_value(ego, agent, cfg));
    }
}

TEST_CASE("worst-case term examples") {
    const PredictionBox zero_box{Eigen::Vector2d(0.3, -0.7), 0.0};
    CHECK(worst_case_term(Eigen::Vector2d(2.0, 5.0), zero_box, 0.0) == doctest::Approx(2.0 * 0.3 - 5.0 * 0.7));
    CHECK(worst_case_term(Eigen::Vector2d(1.0, -1.0), {Eigen::Vector2d(0.0, 0.0), 1.0}, 0.0) == -2.0);
    CHECK(worst_case_term(Eigen::Vector2d(2.0, 3.0), {Eigen::Vector2d(1.0, 1.0), 0.25}, 0.25) == 2.5);
    CHECK_THROWS_AS(worst_case_term(Eigen::Vector3d(1.0, 1.0, 1.0), zero_box, 0.0), InputError);
}

TEST_CASE("worst-case term equals vertex enumeration") {
    testing::Gen g(52);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto n = static_cast<Eigen::Index>(g.integer(1, 4));
        const Eigen::VectorXd mu = g.vector(n, -5, 5);
        const PredictionBox box{g.vector(n, -2, 2), g.uniform(0, 1)};
        const double eta = g.uniform(0, 0.2);
        CHECK(worst_case_term(mu, box, eta) == oracle::vertex_min(mu, box.center, box.radius + eta));
    }
}

TEST_CASE("margin examples") {
    CbfConfig cfg = config(1.0, 0.3);
    cfg.delta_e = 0.1;
    cfg.delta_i = {0.1};
    CHECK(margin(cfg, 0).phi == 0.0);

    cfg.c_f = 1.0;
    cfg.c_g = 0.0;
    cfg.c_beta = 1.0;
    CHECK(margin(cfg, 0).phi == doctest::Approx(0.4).epsilon(1e-15));

    cfg.c_F = {2.0, 2.0};
    cfg.delta_i = {0.1, 0.1};
    CHECK(margin(cfg, 0).eta == doctest::Approx(0.6).epsilon(1e-15));
    CHECK_THROWS_AS(margin(cfg, 2), InputError);
}

TEST_CASE("margin uses the largest corner norm of the control box") {
    CbfConfig cfg = config(1.0, 0.3);
    cfg.u_bounds = {-1.0, 1.5, 3.0};
    cfg.c_g = 1.0;
    cfg.delta_e = 1.0;
    CHECK(control_norm_bound(cfg.u_bounds) == doctest::Approx(std::hypot(1.5, 3.0)));
    CHECK(margin(cfg, 0).phi == doctest::Approx(std::hypot(1.5, 3.0)));
}

TEST_CASE("margin is monotone in every constant and delta") {
    testing::Gen g(53);
    for (int trial = 0; trial < 300; ++trial) {
        CbfConfig cfg = config(1.0, 0.3);
        cfg.c_f = g.uniform(0, 2);
        cfg.c_g = g.uniform(0, 2);
        cfg.c_beta = g.uniform(0, 2);
        cfg.c_F = {g.uniform(0, 2), g.uniform(0, 2)};
        cfg.delta_e = g.uniform(0, 0.1);
        cfg.delta_i = {g.uniform(0, 0.1), g.uniform(0, 0.1)};
        const Margin base = margin(cfg, 0);
        const double bump = g.uniform(0, 0.5);
        for (int field = 0; field < 7; ++field) {
            CbfConfig up = cfg;
            switch (field) {
                case 0: up.c_f += bump; break;
                case 1: up.c_g += bump; break;
                case 2: up.c_beta += bump; break;
                case 3: up.c_F[0] += bump; break;
                case 4: up.delta_e += bump; break;
                case 5: up.delta_i[0] += bump; break;
                default: up.delta_i[1] += bump; break;
            }
            const Margin m = margin(up, 0);
            CHECK(m.phi >= base.phi);
            CHECK(m.eta >= base.eta);
        }
    }
}

TEST_CASE("assembled rows follow the sampled-data condition") {
    CbfConfig cfg = config(1.3, 0.3);
    cfg.c_f = 0.0;
    cfg.c_g = 1.0;
    cfg.c_beta = 2.0;
    cfg.c_F = {0.5};
    cfg.delta_e = 0.02;
    cfg.delta_i = {0.005};
    cfg.u_bounds = {-1.0, 1.5, 3.0};
    const WorldState world{0.0, {0.0, 0.0, 0.0}, {Eigen::Vector2d(1.5, 0.2)}};
    const std::vector<PredictionBox> boxes{{Eigen::Vector2d(-0.2, 0.1), 0.05}};
    const auto rows = build_cbf_rows(world, boxes, cfg);
    const QpProblem qp = assemble_qp(world, boxes, cfg, Eigen::Vector2d(1.0, 0.0));
    REQUIRE(qp.rows.size() == 1);
    const CbfRow& r = rows[0];
    CHECK(qp.rows[0].a == -r.lg);
    CHECK(qp.rows[0].b == doctest::Approx(r.lf + r.m_worst + cfg.kappa * r.h - r.phi));
    CHECK(r.m_worst == worst_case_term(r.dh_dxi, boxes[0], margin(cfg, 0).eta));
    CHECK(qp.u_ref == Eigen::Vector2d(1.0, 0.0));
    CHECK(qp.box.v_max == 1.5);
    // Dead ahead and inside the safe distance: the reference violates the row.
    CHECK(qp.rows[0].a.dot(qp.u_ref) > qp.rows[0].b);
}

TEST_CASE("a distant agent leaves the reference control feasible") {
    CbfConfig cfg = config(1.3, 0.3);
    cfg.c_g = 1.0;
    cfg.c_F = {0.5};
    cfg.delta_e = 0.02;
    cfg.delta_i = {0.005};
    const WorldState world{0.0, {0.0, 0.0, 0.0}, {Eigen::Vector2d(40.0, 30.0)}};
    const std::vector<PredictionBox> boxes{{Eigen::Vector2d(-0.3, -0.3), 0.1}};
    const QpProblem qp = assemble_qp(world, boxes, cfg, Eigen::Vector2d(1.0, 0.5));
    CHECK(qp.rows[0].a.dot(qp.u_ref) - qp.rows[0].b < -1000.0);
}

TEST_CASE("zero agents give a box-only problem") {
    CbfConfig cfg;
    cfg.u_bounds = {-1.0, 1.5, 3.0};
    const WorldState world{0.0, {0.0, 0.0, 0.0}, {}};
    const QpProblem qp = assemble_qp(world, std::vector<PredictionBox>{}, cfg, Eigen::Vector2d(4.0, -4.0));
    CHECK(qp.rows.empty());
    const QpSolution s = solve(qp);
    CHECK(s.u == Eigen::Vector2d(1.5, -3.0));
}

TEST_CASE("one box per agent is required") {
    CbfConfig cfg = config(1.0, 0.3);
    const WorldState world{0.0, {0.0, 0.0, 0.0}, {Eigen::Vector2d(1.0, 1.0)}};
    CHECK_THROWS_AS(build_cbf_rows(world, std::vector<PredictionBox>{}, cfg), InputError);
}

TEST_CASE("config validation") {
    CbfConfig cfg = config(1.0, 0.3);
    CHECK_NOTHROW(cfg.validate(1));
    CHECK_THROWS_AS(cfg.validate(2), InputError);
    cfg.d_safe = 0.0;
    CHECK_THROWS_AS(cfg.validate(1), InputError);
    cfg = config(1.0, 0.3);
    cfg.kappa = 0.0;
    CHECK_THROWS_AS(cfg.validate(1), InputError);
    cfg = config(1.0, 0.3);
    cfg.u_bounds = {1.0, 0.0, 1.0};
    CHECK_THROWS_AS(cfg.validate(1), InputError);
}

TEST_CASE("sampled Lipschitz estimates approach their analytic suprema") {
    CbfConfig cfg = config(1.3, 0.3);
    const double sep = 4.0;
    const LipschitzEstimate est = estimate_lipschitz(cfg, sep, 4000, 7);
    CHECK(est.c_f == 0.0);
    // kappa h: the ego-side gradient (2r, 2 l r.n) peaks at |r| = sep with r normal to the heading.
    const double beta_sup = 2.0 * sep * std::sqrt(1.0 + cfg.lookahead * cfg.lookahead);
    CHECK(est.c_beta <= beta_sup * (1.0 + 1e-6));
    CHECK(est.c_beta >= 0.97 * beta_sup);
    CHECK(est.c_g >= 2.0);
    const LipschitzEstimate again = estimate_lipschitz(cfg, sep, 4000, 7);
    CHECK(again.c_g == est.c_g);
}
