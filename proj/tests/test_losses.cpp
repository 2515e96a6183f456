#include <doctest.h>

#include <cmath>
#include <vector>

#include "cofinal/etf.hpp"
#include "cofinal/losses.hpp"
#include "cofinal/tensor.hpp"

using namespace cofinal;

namespace {

Tensor proto_from_angles(const std::vector<double>& angles, std::size_t dim) {
    std::vector<double> v(angles.size() * dim, 0.0);
    for (std::size_t i = 0; i < angles.size(); ++i) {
        v[i * dim] = std::cos(angles[i]);
        v[i * dim + 1] = std::sin(angles[i]);
    }
    return Tensor::from_values({angles.size(), dim}, std::move(v), true);
}

}  // namespace

TEST_CASE("score_loss is half the mean squared error") {
    CHECK(score_loss({Tensor::scalar(2.0), Tensor::scalar(-1.0)}, {2.0, -1.0}).item() ==
          doctest::Approx(0.0));
    CHECK(score_loss({Tensor::scalar(1.0)}, {3.0}).item() == doctest::Approx(2.0));
    CHECK(score_loss({Tensor::scalar(0.0), Tensor::scalar(0.0)}, {1.0, 1.0}).item() ==
          doctest::Approx(0.5));
    CHECK_THROWS_AS(score_loss({}, {}), DimensionError);
}

TEST_CASE("coarse_loss is mean cross-entropy") {
    // aligned one-hot with a huge margin
    const Tensor confident = Tensor::from_values({4}, {100.0, 0.0, 0.0, 0.0});
    CHECK(coarse_loss({confident}, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));

    const Tensor uniform = Tensor::from_values({4}, {0.3, 0.3, 0.3, 0.3});
    CHECK(coarse_loss({uniform}, {2}).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    CHECK_THROWS_AS(coarse_loss({uniform}, {4}), LabelError);
}

TEST_CASE("coarse_loss gradient matches finite differences") {
    RngStream rng(31);
    std::vector<double> l0(5), l1(5);
    for (double& x : l0) x = -2.0 + 4.0 * rng.next_double();
    for (double& x : l1) x = -2.0 + 4.0 * rng.next_double();
    std::vector<Tensor> in = {Tensor::from_values({5}, l0, true),
                              Tensor::from_values({5}, l1, true)};
    const double err = grad_check(
        [](const std::vector<Tensor>& xs) {
            return coarse_loss({xs[0], xs[1]}, {1, 4});
        },
        in);
    CHECK(err < 1e-6);
}

TEST_CASE("fine_loss against the fixed frame") {
    RngStream rng(0);
    const EtfMatrix etf = build_etf(16, 10, rng);

    // pooled feature proportional to its target prototype: unit-norm
    // prototypes make the dot product exactly 1, so the loss vanishes
    std::vector<double> along(etf.row(3), etf.row(3) + etf.d);
    for (double& x : along) x *= 2.7;
    const Tensor h_aligned = Tensor::from_values({etf.d}, along);
    CHECK(fine_loss({h_aligned}, {3}, etf).item() ==
          doctest::Approx(0.0).epsilon(1e-10));

    // orthogonal feature: (0 - 1)^2 / 2 per sample
    std::vector<double> ortho(etf.d, 0.0);
    for (std::size_t i = 0; i < etf.d; ++i) ortho[i] = rng.next_normal();
    double dot = 0.0;
    for (std::size_t i = 0; i < etf.d; ++i) dot += ortho[i] * etf.row(3)[i];
    for (std::size_t i = 0; i < etf.d; ++i) ortho[i] -= dot * etf.row(3)[i];
    const Tensor h_ortho = Tensor::from_values({etf.d}, ortho);
    CHECK(fine_loss({h_ortho}, {3}, etf).item() == doctest::Approx(0.5).epsilon(1e-10));

    // degenerate zero feature contributes 1/2 with no gradient
    const Tensor h_zero = Tensor::zeros({etf.d});
    CHECK(fine_loss({h_zero}, {0}, etf).item() == doctest::Approx(0.5));

    CHECK_THROWS_AS(fine_loss({h_zero}, {10}, etf), LabelError);
}

TEST_CASE("fine_loss gradient matches finite differences away from zero") {
    RngStream rng(41);
    const EtfMatrix etf = build_etf(8, 4, rng);
    std::vector<double> h(etf.d);
    for (double& x : h) x = 0.5 + rng.next_double();
    std::vector<Tensor> in = {Tensor::from_values({etf.d}, h, true)};
    const double err = grad_check(
        [&](const std::vector<Tensor>& xs) { return fine_loss({xs[0]}, {2}, etf); },
        in);
    CHECK(err < 1e-5);
}

TEST_CASE("graph_reg_loss vanishes when angles mirror quality distances") {
    // two prototypes: the single off-diagonal pair normalizes to [1/2, 1/2]
    // on both sides
    RngStream rng(5);
    std::vector<double> p2(2 * 6);
    for (double& x : p2) x = rng.next_normal();
    CHECK(graph_reg_loss(Tensor::from_values({2, 6}, p2, true)).item() ==
          doctest::Approx(0.0).epsilon(1e-12));

    // unit vectors at angles 0, c, 2c have pairwise angles exactly c*|i-j|
    const Tensor prop = proto_from_angles({0.0, 0.5, 1.0}, 4);
    CHECK(graph_reg_loss(prop).item() == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("graph_reg_loss on mutually equiangular prototypes") {
    // three unit vectors 120 degrees apart; KL(uniform(6) || [1,2,1,1,2,1]/8)
    const double tau = 2.0 * 3.14159265358979323846 / 3.0;
    const Tensor equi = proto_from_angles({0.0, tau, 2.0 * tau}, 3);
    const double expected =
        4.0 * (1.0 / 6.0) * std::log((1.0 / 6.0) / (1.0 / 8.0)) +
        2.0 * (1.0 / 6.0) * std::log((1.0 / 6.0) / (2.0 / 8.0));
    CHECK(graph_reg_loss(equi).item() == doctest::Approx(expected).epsilon(1e-9));
    CHECK(graph_reg_loss(equi).item() > 0.0);
}

TEST_CASE("graph_reg_loss is invariant to uniform positive scaling") {
    RngStream rng(9);
    std::vector<double> p(5 * 7);
    for (double& x : p) x = rng.next_normal();
    const Tensor a = Tensor::from_values({5, 7}, p, true);
    std::vector<double> scaled = p;
    for (double& x : scaled) x *= 37.5;
    const Tensor b = Tensor::from_values({5, 7}, scaled, true);
    CHECK(std::abs(graph_reg_loss(a).item() - graph_reg_loss(b).item()) < 1e-10);
}

TEST_CASE("graph_reg_loss rejects zero prototype rows") {
    CHECK_THROWS_AS(graph_reg_loss(Tensor::zeros({3, 4}, true)),
                    DegeneratePrototypeError);
}

TEST_CASE("graph_reg_loss gradient stays finite at clamped cosines") {
    // two parallel rows drive the cosine to exactly 1
    std::vector<double> p = {1.0, 0.0, 1.0, 0.0, 0.0, 1.0};
    std::vector<Tensor> in = {Tensor::from_values({3, 2}, p, true)};
    const Tensor loss = graph_reg_loss(in[0]);
    in[0].zero_grad();
    loss.backward();
    for (double g : in[0].grad()) CHECK(std::isfinite(g));
}

TEST_CASE("total_loss composes the weighted sum") {
    const LossWeights unit;
    CHECK(total_loss(Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1),
                     Tensor::scalar(1), unit)
              .item() == doctest::Approx(4.0));

    LossWeights off;
    off.lambda_coarse = off.lambda_fine = off.lambda_reg = 0.0;
    CHECK(total_loss(Tensor::scalar(0.7), Tensor::scalar(9), Tensor::scalar(9),
                     Tensor::scalar(9), off)
              .item() == doctest::Approx(0.7));

    LossWeights w;
    w.lambda_coarse = 1;
    w.lambda_fine = 2;
    w.lambda_reg = 3;
    CHECK(total_loss(Tensor::scalar(0.5), Tensor::scalar(1.0), Tensor::scalar(0.25),
                     Tensor::scalar(0.1), w)
              .item() == doctest::Approx(0.5 + 1 * 1.0 + 2 * 0.25 + 3 * 0.1));

    LossWeights bad;
    bad.lambda_reg = -1.0;
    CHECK_THROWS_AS(total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0),
                               Tensor::scalar(0), bad),
                    ConfigError);
}

TEST_CASE("zero weights remove a term's gradient exactly") {
    RngStream rng(13);
    std::vector<double> p(3 * 4);
    for (double& x : p) x = rng.next_normal();

    auto grad_with = [&](double lambda_reg) {
        Tensor proto = Tensor::from_values({3, 4}, p, true);
        LossWeights w;
        w.lambda_reg = lambda_reg;
        const Tensor total =
            total_loss(Tensor::scalar(1.0), Tensor::scalar(1.0), Tensor::scalar(1.0),
                       graph_reg_loss(proto), w);
        proto.zero_grad();
        total.backward();
        return proto.grad();
    };

    for (double g : grad_with(0.0)) CHECK(g == 0.0);
    // sanity: with the weight on, the same prototypes do get gradient
    double mag = 0.0;
    for (double g : grad_with(1.0)) mag += std::abs(g);
    CHECK(mag > 0.0);
}

TEST_CASE("all loss parts are nonnegative") {
    RngStream rng(17);
    const EtfMatrix etf = build_etf(8, 4, rng);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor s = Tensor::scalar(rng.next_normal());
        CHECK(score_loss({s}, {rng.next_normal()}).item() >= 0.0);

        std::vector<double> l(6);
        for (double& x : l) x = rng.next_normal();
        CHECK(coarse_loss({Tensor::from_values({6}, l)}, {rng.next_below(6)}).item() >=
              0.0);

        std::vector<double> h(etf.d);
        for (double& x : h) x = rng.next_normal();
        CHECK(fine_loss({Tensor::from_values({etf.d}, h)}, {rng.next_below(4)}, etf)
                  .item() >= 0.0);

        std::vector<double> p(4 * 5);
        for (double& x : p) x = rng.next_normal();
        CHECK(graph_reg_loss(Tensor::from_values({4, 5}, p)).item() >= -1e-15);
    }
}
