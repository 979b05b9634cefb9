// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cimn/autodiff.hpp"
#include "cimn/rng.hpp"

using namespace cimn;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

double rel_error(const ad::ParamSet& a, const ad::ParamSet& b) {
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < a.count(); ++i) {
        for (std::size_t j = 0; j < a.value(i).size(); ++j) {
            const double d = a.value(i).data()[j] - b.value(i).data()[j];
            diff2 += d * d;
            norm2 += b.value(i).data()[j] * b.value(i).data()[j];
        }
    }
    return std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-12);
}

// Small smooth net used in several gradient checks.
ad::NodeId net_loss(ad::Tape& tape, const ad::BoundParams& p, const Matrix& x) {
    ad::NodeId input = tape.constant(x);
    ad::NodeId h = tape.add(tape.matmul(input, p.at("w1")),
                            tape.broadcast_rows(p.at("b1"), x.rows()));
    ad::NodeId act = tape.log(tape.add_scalar(tape.exp(h), 1.0));
    ad::NodeId out = tape.add(tape.matmul(act, p.at("w2")),
                              tape.broadcast_rows(p.at("b2"), x.rows()));
    return tape.sum_all(tape.mul(out, out));
}

ad::ParamSet random_net_params(Rng& rng) {
    ad::ParamSet theta;
    theta.add("w1", random_matrix(rng, 3, 4, 0.6));
    theta.add("b1", random_matrix(rng, 1, 4, 0.2));
    theta.add("w2", random_matrix(rng, 4, 2, 0.6));
    theta.add("b2", random_matrix(rng, 1, 2, 0.2));
    return theta;
}

}  // namespace

TEST_CASE("param set flatten/unflatten round trip") {
    Rng rng(7);
    ad::ParamSet p = random_net_params(rng);
    ad::ParamSet q = p;
    q.unflatten(p.flatten());
    CHECK(q.bit_equal(p));
}

TEST_CASE("evaluate: constant computation has no parameter dependence") {
    ad::ParamSet p;
    p.add("theta", Matrix::from_rows(1, 2, std::vector<double>{1.0, 2.0}));
    ad::Evaluation ev = ad::evaluate(
        [](ad::Tape& tape, const ad::BoundParams&) { return tape.constant(Matrix::scalar(3.0)); },
        p);
    CHECK(ev.value == 3.0);
    ad::ParamSet g = ad::gradient(ev);
    CHECK(g.at("theta")(0, 0) == 0.0);
    CHECK(g.at("theta")(0, 1) == 0.0);
}

TEST_CASE("evaluate: sum of squares") {
    ad::ParamSet p;
    p.add("theta", Matrix::from_rows(1, 2, std::vector<double>{1.0, 2.0}));
    auto builder = [](ad::Tape& tape, const ad::BoundParams& b) {
        return tape.sum_all(tape.mul(b.at("theta"), b.at("theta")));
    };
    ad::Evaluation ev = ad::evaluate(builder, p);
    CHECK(ev.value == doctest::Approx(5.0).epsilon(1e-15));

    SUBCASE("gradient is 2*theta") {
        ad::ParamSet g = ad::gradient(ev);
        CHECK(g.at("theta")(0, 0) == doctest::Approx(2.0));
        CHECK(g.at("theta")(0, 1) == doctest::Approx(4.0));
    }
    SUBCASE("finite differences agree") {
        ad::ParamSet fd = ad::finite_diff_gradient(
            [&](const ad::ParamSet& q) { return ad::evaluate(builder, q).value; }, p, 1e-5);
        CHECK(fd.at("theta")(0, 0) == doctest::Approx(2.0).epsilon(1e-8));
        CHECK(fd.at("theta")(0, 1) == doctest::Approx(4.0).epsilon(1e-8));
    }
}

TEST_CASE("evaluate matches a straight-line re-evaluation on a 2-layer net") {
    Rng rng(11);
    ad::ParamSet theta = random_net_params(rng);
    const Matrix x = random_matrix(rng, 4, 3);
    ad::Evaluation ev = ad::evaluate(
        [&](ad::Tape& tape, const ad::BoundParams& p) { return net_loss(tape, p, x); }, theta);

    // Independent straight-line recomputation without the tape.
    const Matrix& w1 = theta.at("w1");
    const Matrix& b1 = theta.at("b1");
    const Matrix& w2 = theta.at("w2");
    const Matrix& b2 = theta.at("b2");
    double loss = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
        std::vector<double> h(4, 0.0);
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = b1(0, j);
            for (std::size_t k = 0; k < 3; ++k) acc += x(r, k) * w1(k, j);
            h[j] = std::log(std::exp(acc) + 1.0);
        }
        for (std::size_t j = 0; j < 2; ++j) {
            double acc = b2(0, j);
            for (std::size_t k = 0; k < 4; ++k) acc += h[k] * w2(k, j);
            loss += acc * acc;
        }
    }
    CHECK(ev.value == doctest::Approx(loss).epsilon(1e-12));
}

TEST_CASE("evaluate: non-finite intermediate reports the offending node") {
    ad::ParamSet p;
    p.add("theta", Matrix::from_rows(1, 1, std::vector<double>{-1.0}));
    CHECK_THROWS_AS(ad::evaluate(
                        [](ad::Tape& tape, const ad::BoundParams& b) {
                            return tape.log(b.at("theta"));  // log(-1) = nan
                        },
                        p),
                    NumericFailure);
}

TEST_CASE("gradient: hinge inactive gives zero gradient") {
    // f = max(theta1 - theta2 + 0.3, 0) at (0, 1): argument is -0.7
    ad::ParamSet p;
    p.add("theta", Matrix::from_rows(1, 2, std::vector<double>{0.0, 1.0}));
    ad::Evaluation ev = ad::evaluate(
        [](ad::Tape& tape, const ad::BoundParams& b) {
            std::vector<std::int32_t> i0 = {0}, i1 = {1};
            ad::NodeId t1 = tape.row_gather(b.at("theta"), i0);
            ad::NodeId t2 = tape.row_gather(b.at("theta"), i1);
            return tape.sum_all(tape.relu(tape.add_scalar(tape.sub(t1, t2), 0.3)));
        },
        p);
    CHECK(ev.value == 0.0);
    ad::ParamSet g = ad::gradient(ev);
    CHECK(g.at("theta")(0, 0) == 0.0);
    CHECK(g.at("theta")(0, 1) == 0.0);
}

TEST_CASE("gradient: random nets match finite differences to 1e-6") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(mix_seed(100, s));
        ad::ParamSet theta = random_net_params(rng);
        const Matrix x = random_matrix(rng, 4, 3);
        auto builder = [&](ad::Tape& tape, const ad::BoundParams& p) {
            return net_loss(tape, p, x);
        };
        ad::Evaluation ev = ad::evaluate(builder, theta);
        ad::ParamSet g = ad::gradient(ev);
        ad::ParamSet fd = ad::finite_diff_gradient(
            [&](const ad::ParamSet& q) { return ad::evaluate(builder, q).value; }, theta, 1e-5);
        CHECK(rel_error(g, fd) <= 1e-6);
    }
}

TEST_CASE("gradient: linearity over random graphs") {
    Rng rng(42);
    ad::ParamSet theta = random_net_params(rng);
    const Matrix xa = random_matrix(rng, 4, 3);
    const Matrix xb = random_matrix(rng, 4, 3);

    auto grad_of = [&](const ad::LossBuilder& b) {
        ad::Evaluation ev = ad::evaluate(b, theta);
        return ad::gradient(ev);
    };
    ad::ParamSet ga = grad_of([&](ad::Tape& t, const ad::BoundParams& p) { return net_loss(t, p, xa); });
    ad::ParamSet gb = grad_of([&](ad::Tape& t, const ad::BoundParams& p) { return net_loss(t, p, xb); });
    ad::ParamSet gsum = grad_of([&](ad::Tape& t, const ad::BoundParams& p) {
        return t.add(net_loss(t, p, xa), net_loss(t, p, xb));
    });
    for (std::size_t i = 0; i < gsum.count(); ++i) {
        for (std::size_t j = 0; j < gsum.value(i).size(); ++j) {
            CHECK(gsum.value(i).data()[j] ==
                  doctest::Approx(ga.value(i).data()[j] + gb.value(i).data()[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("replay determinism: same seed gives bit-identical losses and gradients") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        ad::ParamSet theta = random_net_params(rng);
        const Matrix x = random_matrix(rng, 4, 3);
        ad::Evaluation ev = ad::evaluate(
            [&](ad::Tape& tape, const ad::BoundParams& p) { return net_loss(tape, p, x); }, theta);
        ad::ParamSet g = ad::gradient(ev);
        ev.tape.replay_verify();
        return std::make_pair(ev.value, g);
    };
    auto [v1, g1] = run(99);
    auto [v2, g2] = run(99);
    CHECK(v1 == v2);
    CHECK(g1.bit_equal(g2));
}

TEST_CASE("inner_step arithmetic and identity") {
    ad::ParamSet p;
    p.add("theta", Matrix::from_rows(1, 2, std::vector<double>{1.0, 2.0}));
    ad::Tape tape;
    ad::BoundParams theta = ad::bind(tape, p);
    std::vector<ad::NodeId> grads = {
        tape.constant(Matrix::from_rows(1, 2, std::vector<double>{2.0, 4.0}))};

    SUBCASE("eta=0.5 lands on zero") {
        ad::BoundParams updated = ad::inner_step(tape, theta, grads, 0.5);
        CHECK(tape.value(updated.nodes[0])(0, 0) == 0.0);
        CHECK(tape.value(updated.nodes[0])(0, 1) == 0.0);
    }
    SUBCASE("eta=0 is the identity") {
        ad::BoundParams updated = ad::inner_step(tape, theta, grads, 0.0);
        CHECK(tape.value(updated.nodes[0]).bit_equal(tape.value(theta.nodes[0])));
    }
    SUBCASE("shape mismatch is a contract violation") {
        std::vector<ad::NodeId> bad = {tape.constant(Matrix(2, 2, 1.0))};
        CHECK_THROWS_AS(ad::inner_step(tape, theta, bad, 0.1), ContractViolation);
    }
}

TEST_CASE("inner_step stays differentiable: quadratic closed form") {
    // L_in = L_out = 0.5 |theta|^2; meta-gradient is (1-eta)^2 theta.
    ad::ParamSet p;
    p.add("theta", Matrix::from_rows(1, 2, std::vector<double>{1.0, 0.0}));
    auto half_sq = [](ad::Tape& tape, const ad::BoundParams& b) {
        return tape.scale(tape.sum_all(tape.mul(b.at("theta"), b.at("theta"))), 0.5);
    };
    ad::ParamSet exact = ad::meta_gradient(half_sq, half_sq, p, 0.1, false);
    CHECK(exact.at("theta")(0, 0) == doctest::Approx(0.81).epsilon(1e-14));
    CHECK(exact.at("theta")(0, 1) == doctest::Approx(0.0));

    ad::ParamSet first = ad::meta_gradient(half_sq, half_sq, p, 0.1, true);
    CHECK(first.at("theta")(0, 0) == doctest::Approx(0.9).epsilon(1e-14));
}

TEST_CASE("meta_gradient matches finite differences of the composed objective") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng(mix_seed(2000, s));
        ad::ParamSet theta = random_net_params(rng);
        const Matrix xi = random_matrix(rng, 4, 3);
        const Matrix xo = random_matrix(rng, 4, 3);
        const double eta = 0.05;
        ad::LossBuilder inner = [&](ad::Tape& t, const ad::BoundParams& p) {
            return net_loss(t, p, xi);
        };
        ad::LossBuilder outer = [&](ad::Tape& t, const ad::BoundParams& p) {
            return net_loss(t, p, xo);
        };
        ad::ParamSet analytic = ad::meta_gradient(inner, outer, theta, eta);

        auto composed = [&](const ad::ParamSet& q) {
            ad::Tape tape;
            ad::BoundParams bound = ad::bind(tape, q);
            std::vector<ad::NodeId> g = tape.backward(inner(tape, bound), bound.nodes);
            ad::BoundParams tp = ad::inner_step(tape, bound, g, eta);
            return tape.scalar_value(outer(tape, tp));
        };
        ad::ParamSet fd = ad::finite_diff_gradient(composed, theta, 1e-5);
        CHECK(rel_error(analytic, fd) <= 1e-4);
    }
}

TEST_CASE("finite_diff_gradient: constants and contract") {
    ad::ParamSet p;
    p.add("theta", Matrix::from_rows(1, 3, std::vector<double>{1.0, -2.0, 0.5}));
    ad::ParamSet zeros = ad::finite_diff_gradient([](const ad::ParamSet&) { return 7.0; }, p, 1e-5);
    for (std::size_t j = 0; j < 3; ++j) CHECK(zeros.at("theta")(0, j) == 0.0);
    CHECK_THROWS_AS(ad::finite_diff_gradient([](const ad::ParamSet&) { return 0.0; }, p, 0.0),
                    ContractViolation);
}

TEST_CASE("gradient of unreachable parameter is zero, not an error") {
    ad::ParamSet p;
    p.add("used", Matrix::from_rows(1, 1, std::vector<double>{2.0}));
    p.add("unused", Matrix::from_rows(1, 2, std::vector<double>{1.0, 1.0}));
    ad::Evaluation ev = ad::evaluate(
        [](ad::Tape& tape, const ad::BoundParams& b) {
            return tape.sum_all(tape.mul(b.at("used"), b.at("used")));
        },
        p);
    ad::ParamSet g = ad::gradient(ev);
    CHECK(g.at("used")(0, 0) == doctest::Approx(4.0));
    CHECK(g.at("unused")(0, 0) == 0.0);
    CHECK(g.at("unused")(0, 1) == 0.0);
}
