// SPDX-License-Identifier: Apache-2.0
#include "cimn/gradcheck.hpp"

#include <cmath>

#include "cimn/autodiff.hpp"
#include "cimn/losses.hpp"
#include "cimn/rng.hpp"

namespace cimn::gradcheck {

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kKinkGap = 1e-3;
constexpr double kLossBound = 1e-5;
constexpr double kMargin = 0.3;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// Labels for 4 identities x 2 images.
const std::vector<int> kTripletLabels = {0, 0, 1, 1, 2, 2, 3, 3};

double norm2(const ad::ParamSet& p) {
    double s = 0.0;
    for (const auto& e : p)
        for (double v : e.value.values()) s += v * v;
    return std::sqrt(s);
}

// Hinge arguments and selection gaps of a batch-hard instance; used to
// resample kink-adjacent inputs before differencing.
bool triplet_inputs_safe(const Matrix& emb, std::span<const int> labels, double margin) {
    const std::size_t n = emb.rows();
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < emb.cols(); ++k) {
            const double d = emb(i, k) - emb(j, k);
            s += d * d;
        }
        return std::sqrt(s);
    };
    for (std::size_t i = 0; i < n; ++i) {
        double dp_best = -1.0, dp_second = -1.0;
        double dn_best = 1e300, dn_second = 1e300;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = dist(i, j);
            if (d < kKinkGap) return false;  // near-coincident points
            if (labels[j] == labels[i]) {
                if (d > dp_best) {
                    dp_second = dp_best;
                    dp_best = d;
                } else if (d > dp_second) {
                    dp_second = d;
                }
            } else {
                if (d < dn_best) {
                    dn_second = dn_best;
                    dn_best = d;
                } else if (d < dn_second) {
                    dn_second = d;
                }
            }
        }
        if (dp_second >= 0.0 && dp_best - dp_second < kKinkGap) return false;
        if (dn_second < 1e300 && dn_second - dn_best < kKinkGap) return false;
        if (std::abs(dp_best - dn_best + margin) < kKinkGap) return false;
    }
    return true;
}

using InstanceBuilder = std::function<bool(Rng&, ad::ParamSet&, ad::LossBuilder&)>;

// Runs FD-vs-backward over num_seeds instances, resampling until the
// builder reports a kink-safe draw.
CheckLine fd_check(const std::string& name, std::uint64_t seed, std::size_t num_seeds,
                   double bound, const InstanceBuilder& make_instance) {
    CheckLine line{name, 0.0, bound, true};
    for (std::size_t s = 0; s < num_seeds; ++s) {
        ad::ParamSet inputs;
        ad::LossBuilder builder;
        bool ok = false;
        for (std::size_t attempt = 0; attempt < 200 && !ok; ++attempt) {
            inputs = ad::ParamSet{};
            Rng rng(mix_seed(seed, s, attempt));
            ok = make_instance(rng, inputs, builder);
        }
        if (!ok) throw ContractViolation("gradcheck: could not draw a kink-safe instance");

        ad::Evaluation ev = ad::evaluate(builder, inputs);
        ad::ParamSet analytic = ad::gradient(ev);
        ad::ParamSet numeric = ad::finite_diff_gradient(
            [&](const ad::ParamSet& p) { return ad::evaluate(builder, p).value; }, inputs, kFdStep);
        const double rel = relative_error(analytic, numeric);
        line.max_rel_err = std::max(line.max_rel_err, rel);
    }
    line.pass = line.max_rel_err <= bound;
    return line;
}

// Smooth two-layer net: softplus keeps the composed objective free of kinks
// so the finite-difference oracle is exact to truncation order.
ad::NodeId smooth_net_loss(ad::Tape& tape, const ad::BoundParams& theta, const Matrix& x,
                           const Matrix& target) {
    ad::NodeId input = tape.constant(x);
    ad::NodeId h = tape.add(tape.matmul(input, theta.at("w1")),
                            tape.broadcast_rows(theta.at("b1"), x.rows()));
    ad::NodeId softplus = tape.log(tape.add_scalar(tape.exp(h), 1.0));
    ad::NodeId pred = tape.add(tape.matmul(softplus, theta.at("w2")),
                               tape.broadcast_rows(theta.at("b2"), x.rows()));
    ad::NodeId err = tape.sub(pred, tape.constant(target));
    return tape.sum_all(tape.mul(err, err));
}

double composed_objective(const ad::LossBuilder& inner, const ad::LossBuilder& outer,
                          const ad::ParamSet& params, double eta) {
    ad::Tape tape;
    ad::BoundParams theta = ad::bind(tape, params);
    ad::NodeId inner_loss = inner(tape, theta);
    std::vector<ad::NodeId> grads = tape.backward(inner_loss, theta.nodes);
    ad::BoundParams theta_prime = ad::inner_step(tape, theta, grads, eta);
    return tape.scalar_value(outer(tape, theta_prime));
}

}  // namespace

double relative_error(const ad::ParamSet& a, const ad::ParamSet& b) {
    if (!a.same_layout(b)) throw ContractViolation("relative_error: layout mismatch");
    double diff2 = 0.0;
    for (std::size_t i = 0; i < a.count(); ++i) {
        const Matrix& ma = a.value(i);
        const Matrix& mb = b.value(i);
        for (std::size_t j = 0; j < ma.size(); ++j) {
            const double d = ma.data()[j] - mb.data()[j];
            diff2 += d * d;
        }
    }
    const double denom = std::max(norm2(b), 1e-12);
    return std::sqrt(diff2) / denom;
}

Summary run_loss_gradient_checks(std::uint64_t seed, std::size_t num_seeds) {
    constexpr double kBound = kLossBound;
    Summary summary;

    summary.lines.push_back(fd_check(
        "batch_hard_triplet", mix_seed(seed, 1), num_seeds, kBound,
        [&](Rng& rng, ad::ParamSet& inputs, ad::LossBuilder& builder) {
            Matrix emb = random_matrix(rng, 8, 6);
            if (!triplet_inputs_safe(emb, kTripletLabels, kMargin)) return false;
            inputs.add("emb", std::move(emb));
            builder = [](ad::Tape& tape, const ad::BoundParams& p) {
                return losses::batch_hard_triplet(tape, p.at("emb"), kTripletLabels, kMargin);
            };
            return true;
        }));

    summary.lines.push_back(fd_check(
        "meta_triplet", mix_seed(seed, 2), num_seeds, kBound,
        [&](Rng& rng, ad::ParamSet& inputs, ad::LossBuilder& builder) {
            Matrix ea = random_matrix(rng, 8, 6);
            Matrix eb = random_matrix(rng, 8, 6);
            static const std::vector<int> labels_b = {4, 4, 5, 5, 6, 6, 7, 7};
            // The combined instance must be kink-safe for both the within-set
            // positives and the cross-set negatives; checking the pooled
            // 16-row batch covers both selections.
            Matrix pooled(16, 6);
            for (std::size_t r = 0; r < 8; ++r)
                for (std::size_t c = 0; c < 6; ++c) {
                    pooled(r, c) = ea(r, c);
                    pooled(8 + r, c) = eb(r, c);
                }
            std::vector<int> pooled_labels = kTripletLabels;
            pooled_labels.insert(pooled_labels.end(), labels_b.begin(), labels_b.end());
            if (!triplet_inputs_safe(pooled, pooled_labels, kMargin)) return false;
            inputs.add("ea", std::move(ea));
            inputs.add("eb", std::move(eb));
            builder = [](ad::Tape& tape, const ad::BoundParams& p) {
                return losses::meta_triplet(tape, p.at("ea"), kTripletLabels, p.at("eb"), labels_b,
                                            kMargin);
            };
            return true;
        }));

    summary.lines.push_back(fd_check(
        "cross_entropy", mix_seed(seed, 3), num_seeds, kBound,
        [&](Rng& rng, ad::ParamSet& inputs, ad::LossBuilder& builder) {
            inputs.add("logits", random_matrix(rng, 8, 5));
            static const std::vector<int> labels = {0, 1, 2, 3, 4, 0, 1, 2};
            builder = [](ad::Tape& tape, const ad::BoundParams& p) {
                return losses::cross_entropy(tape, p.at("logits"), labels);
            };
            return true;
        }));

    summary.lines.push_back(fd_check(
        "mmd", mix_seed(seed, 4), num_seeds, kBound,
        [&](Rng& rng, ad::ParamSet& inputs, ad::LossBuilder& builder) {
            inputs.add("fa", random_matrix(rng, 8, 6));
            inputs.add("fb", random_matrix(rng, 8, 6, 1.2));
            builder = [](ad::Tape& tape, const ad::BoundParams& p) {
                return losses::mmd(tape, p.at("fa"), p.at("fb"), 1.5);
            };
            return true;
        }));

    summary.lines.push_back(fd_check(
        "center_distance", mix_seed(seed, 5), num_seeds, kBound,
        [&](Rng& rng, ad::ParamSet& inputs, ad::LossBuilder& builder) {
            inputs.add("fa", random_matrix(rng, 8, 6));
            inputs.add("fb", random_matrix(rng, 8, 6));
            builder = [](ad::Tape& tape, const ad::BoundParams& p) {
                return losses::center_distance(tape, p.at("fa"), p.at("fb"));
            };
            return true;
        }));

    summary.lines.push_back(fd_check(
        "meta_camera_alignment", mix_seed(seed, 6), num_seeds, kBound,
        [&](Rng& rng, ad::ParamSet& inputs, ad::LossBuilder& builder) {
            inputs.add("fa", random_matrix(rng, 8, 6));
            inputs.add("fb", random_matrix(rng, 8, 6, 0.8));
            builder = [](ad::Tape& tape, const ad::BoundParams& p) {
                return losses::meta_camera_alignment(tape, p.at("fa"), p.at("fb"), 1.5);
            };
            return true;
        }));

    for (const CheckLine& line : summary.lines) summary.all_pass &= line.pass;
    return summary;
}

Summary run_meta_gradient_checks(std::uint64_t seed, std::size_t num_seeds) {
    Summary summary;

    {
        CheckLine line{"meta_gradient_vs_fd(smooth net)", 0.0, 1e-4, true};
        for (std::size_t s = 0; s < num_seeds; ++s) {
            Rng rng(mix_seed(seed, 11, s));
            ad::ParamSet theta;
            theta.add("w1", random_matrix(rng, 3, 4, 0.7));
            theta.add("b1", random_matrix(rng, 1, 4, 0.3));
            theta.add("w2", random_matrix(rng, 4, 1, 0.7));
            theta.add("b2", random_matrix(rng, 1, 1, 0.3));
            const Matrix x_in = random_matrix(rng, 5, 3);
            const Matrix y_in = random_matrix(rng, 5, 1);
            const Matrix x_out = random_matrix(rng, 5, 3);
            const Matrix y_out = random_matrix(rng, 5, 1);
            const double eta = 0.05;

            ad::LossBuilder inner = [&](ad::Tape& tape, const ad::BoundParams& p) {
                return smooth_net_loss(tape, p, x_in, y_in);
            };
            ad::LossBuilder outer = [&](ad::Tape& tape, const ad::BoundParams& p) {
                return smooth_net_loss(tape, p, x_out, y_out);
            };

            ad::ParamSet analytic = ad::meta_gradient(inner, outer, theta, eta);
            ad::ParamSet numeric = ad::finite_diff_gradient(
                [&](const ad::ParamSet& p) { return composed_objective(inner, outer, p, eta); },
                theta, kFdStep);
            line.max_rel_err = std::max(line.max_rel_err, relative_error(analytic, numeric));
        }
        line.pass = line.max_rel_err <= line.bound;
        summary.lines.push_back(line);
    }

    {
        CheckLine line{"meta_gradient_vs_quadratic_closed_form", 0.0, 1e-10, true};
        for (std::size_t s = 0; s < num_seeds; ++s) {
            Rng rng(mix_seed(seed, 12, s));
            const std::size_t n = 6;
            auto spd = [&](double ridge) {
                Matrix m = random_matrix(rng, n, n, 0.5);
                Matrix out(n, n);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = i == j ? ridge : 0.0;
                        for (std::size_t k = 0; k < n; ++k) acc += m(k, i) * m(k, j) / n;
                        out(i, j) = acc;
                    }
                return out;
            };
            const Matrix a = spd(0.1);
            const Matrix c = spd(0.2);
            const Matrix b_vec = random_matrix(rng, 1, n);
            const Matrix d_vec = random_matrix(rng, 1, n);
            const double eta = 0.07;

            ad::ParamSet theta;
            theta.add("theta", random_matrix(rng, 1, n));

            auto quadratic = [](const Matrix& h, const Matrix& lin) {
                return [h, lin](ad::Tape& tape, const ad::BoundParams& p) {
                    ad::NodeId t = p.at("theta");
                    ad::NodeId quad =
                        tape.scale(tape.matmul(tape.matmul(t, tape.constant(h)), tape.transpose(t)),
                                   0.5);
                    ad::NodeId linear = tape.matmul(t, tape.transpose(tape.constant(lin)));
                    return tape.add(quad, linear);
                };
            };

            ad::ParamSet analytic =
                ad::meta_gradient(quadratic(a, b_vec), quadratic(c, d_vec), theta, eta);

            // theta' = theta - eta (A theta + b); grad = (I - eta A)(C theta' + d)
            const Matrix& t0 = theta.at("theta");
            Matrix tp(1, n);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = b_vec(0, i);
                for (std::size_t j = 0; j < n; ++j) acc += a(i, j) * t0(0, j);
                tp(0, i) = t0(0, i) - eta * acc;
            }
            Matrix outer_grad(1, n);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = d_vec(0, i);
                for (std::size_t j = 0; j < n; ++j) acc += c(i, j) * tp(0, j);
                outer_grad(0, i) = acc;
            }
            ad::ParamSet expected;
            Matrix g(1, n);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = outer_grad(0, i);
                for (std::size_t j = 0; j < n; ++j) acc -= eta * a(j, i) * outer_grad(0, j);
                g(0, i) = acc;
            }
            expected.add("theta", std::move(g));
            line.max_rel_err = std::max(line.max_rel_err, relative_error(analytic, expected));
        }
        line.pass = line.max_rel_err <= line.bound;
        summary.lines.push_back(line);
    }

    for (const CheckLine& line : summary.lines) summary.all_pass &= line.pass;
    return summary;
}

}  // namespace cimn::gradcheck
