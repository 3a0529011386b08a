#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "physio/losses.hpp"
#include "physio/rng.hpp"
#include "test_support.hpp"

using namespace physio;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("reconstruction loss is the mean of squared differences") {
  Rng rng(1);
  MatrixXd x = testsup::random_matrix(rng, 3, 2);
  CHECK(recon_loss(x, x) == 0.0);

  MatrixXd off = x.array() + 1.0;
  CHECK(recon_loss(x, off) == Catch::Approx(1.0).margin(1e-12));

  MatrixXd y = testsup::random_matrix(rng, 3, 2);
  double brute = 0.0;
  for (int t = 0; t < 3; ++t)
    for (int c = 0; c < 2; ++c) brute += (x(t, c) - y(t, c)) * (x(t, c) - y(t, c));
  CHECK(std::abs(recon_loss(x, y) - brute / 6.0) < 1e-12);

  CHECK_THROWS_AS(recon_loss(x, MatrixXd::Zero(2, 2)), std::invalid_argument);
}

TEST_CASE("posterior loss closed form and free bits") {
  PosteriorParams prior;
  prior.mu = VectorXd::Zero(4);
  prior.log_var = VectorXd::Zero(4);
  prior.std = VectorXd::Ones(4);
  CHECK(posterior_loss(prior) == 0.0);

  PosteriorParams unit1;
  unit1.mu = VectorXd::Ones(1);
  unit1.log_var = VectorXd::Zero(1);
  unit1.std = VectorXd::Ones(1);
  CHECK(posterior_loss(unit1, 0.1) == Catch::Approx(0.4).margin(1e-9));

  SECTION("dead zone around the prior") {
    PosteriorParams near;
    near.mu = VectorXd::Constant(4, 0.05);
    near.log_var = VectorXd::Constant(4, 0.01);
    near.std = (near.log_var.array() / 2).exp();
    CHECK(posterior_loss(near, 0.1) == 0.0);
  }

  SECTION("closed form matches a Monte-Carlo estimate within 2%") {
    PosteriorParams p;
    p.mu = VectorXd(2);
    p.mu << 0.7, -1.2;
    p.log_var = VectorXd(2);
    p.log_var << 0.5, -0.3;
    p.std = (p.log_var.array() / 2).exp();
    const double closed = posterior_loss(p, 0.0);  // delta 0 exposes raw KL

    Rng rng(99);
    const int n = 100000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        const double z = p.mu(d) + p.std(d) * rng.gaussian();
        const double zc = (z - p.mu(d)) / p.std(d);
        acc += -0.5 * (p.log_var(d) + zc * zc - z * z);
      }
    }
    const double mc = acc / n / 2.0;  // dimension-averaged
    CHECK(std::abs(mc - closed) <= 0.02 * closed);
  }
}

TEST_CASE("feature matching loss is the scaled euclidean norm") {
  VectorXd a = VectorXd::Ones(64);
  CHECK(feature_match_loss(a, a) == 0.0);
  VectorXd b = VectorXd::Zero(64);
  CHECK(feature_match_loss(a, b) == Catch::Approx(std::sqrt(64.0) / 64.0).margin(1e-12));

  SECTION("homogeneous in the difference") {
    Rng rng(2);
    VectorXd x = testsup::random_matrix(rng, 10, 1);
    VectorXd d = testsup::random_matrix(rng, 10, 1);
    const double base = feature_match_loss(x, x + d);
    for (double c : {2.0, -3.0, 0.25})
      CHECK(feature_match_loss(x, x + c * d) == Catch::Approx(std::abs(c) * base));
  }
  CHECK_THROWS_AS(feature_match_loss(a, VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("adversarial loss") {
  VectorXd probs(3);
  probs << 1.0, 0.0, 0.0;
  CHECK(adversarial_loss(probs, 1) == 0.0);
  probs << 0.5, 0.25, 0.25;
  CHECK(adversarial_loss(probs, 1) == Catch::Approx(std::log(2.0)).margin(1e-12));
  probs << 0.1, 0.8, 0.1;
  CHECK(adversarial_loss(probs, 1) == Catch::Approx(std::log(10.0)).margin(1e-9));
  // saturated discriminator: clamped, large but finite
  probs << 0.0, 1.0, 0.0;
  CHECK(adversarial_loss(probs, 1) == Catch::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(adversarial_loss(probs, 4), std::invalid_argument);
}

TEST_CASE("diversity loss") {
  VectorXd z(2), zb(2);
  z << 1, 0;
  zb << 0, 0;
  CHECK(diversity_loss(z, z) == 0.0);
  CHECK(diversity_loss(z, zb) == Catch::Approx(0.5).margin(1e-12));
  Rng rng(3);
  VectorXd a = testsup::random_matrix(rng, 6, 1);
  VectorXd b = testsup::random_matrix(rng, 6, 1);
  CHECK(diversity_loss(a, b) == Catch::Approx(diversity_loss(b, a)));
}

TEST_CASE("discriminator loss") {
  VectorXd perfect1(3), perfect2(3), fake(3);
  perfect1 << 1, 0, 0;
  perfect2 << 0, 1, 0;
  fake << 0, 0, 1;
  CHECK(discriminator_loss({perfect1, perfect2}, {1, 2}, {fake}) == 0.0);

  VectorXd uniform = VectorXd::Constant(3, 1.0 / 3.0);
  CHECK(discriminator_loss({uniform}, {1}, {uniform}) ==
        Catch::Approx(2.0 * std::log(3.0)).margin(1e-12));

  SECTION("single-sample batches reduce to plain cross-entropy terms") {
    VectorXd p(3);
    p << 0.6, 0.3, 0.1;
    CHECK(discriminator_loss({p}, {1}, {p}) ==
          Catch::Approx(-std::log(0.6) - std::log(0.1)).margin(1e-12));
  }

  SECTION("mass moving toward the true label lowers the loss") {
    VectorXd before(3), after(3);
    before << 0.4, 0.3, 0.3;
    after << 0.6, 0.2, 0.2;
    CHECK(discriminator_loss({after}, {1}, {uniform}) <
          discriminator_loss({before}, {1}, {uniform}));
  }

  CHECK_THROWS_AS(discriminator_loss({}, {}, {uniform}), std::invalid_argument);
}

TEST_CASE("annealing schedule") {
  CHECK(anneal_coefficient(1) ==
        Catch::Approx(200.0 / (200.0 + std::exp(1.0 / 200.0))).margin(1e-12));
  CHECK(anneal_coefficient(1) == Catch::Approx(0.99501).margin(1e-5));
  CHECK(anneal_coefficient(100000) == 0.1);

  SECTION("monotone non-increasing, bounded") {
    double prev = 1.0;
    for (int t = 1; t <= 3000; ++t) {
      const double eta = anneal_coefficient(t);
      CHECK(eta <= prev);
      CHECK(eta >= 0.1);
      CHECK(eta < 1.0);
      prev = eta;
    }
  }

  SECTION("first epoch at the floor is ceil(k*ln(9k))") {
    int first = 0;
    for (int t = 1; t <= 3000; ++t)
      if (anneal_coefficient(t) <= 0.1 + 1e-12) {
        first = t;
        break;
      }
    // k/(k+e^{t/k}) <= 0.1  <=>  t >= k ln(9k); 200*ln(1800) = 1499.108...
    CHECK(first == static_cast<int>(std::ceil(200.0 * std::log(1800.0))));
    CHECK(first == 1500);
    CHECK(anneal_coefficient(1499) > 0.1 + 1e-12);
  }
}

TEST_CASE("total generator loss recombination") {
  LossWeights w;
  CHECK(total_generator_loss(3.0, 9.0, 9.0, 9.0, 9.0, w, 1.0) == Catch::Approx(3.0));
  CHECK(total_generator_loss(1, 1, 1, 1, 1, w, 0.5) == Catch::Approx(1.7).margin(1e-12));
  CHECK(total_generator_loss(0, 0, 0, 0, 0, w, 0.3) == 0.0);

  SECTION("linear in each component") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      double c[5];
      for (double& v : c) v = rng.uniform(0.0, 3.0);
      const double eta = rng.uniform(0.1, 0.99);
      const double base = total_generator_loss(c[0], c[1], c[2], c[3], c[4], w, eta);
      // doubling one component shifts the total by exactly its weighted value
      const double bumped = total_generator_loss(2 * c[0], c[1], c[2], c[3], c[4], w, eta);
      CHECK(bumped - base == Catch::Approx(eta * c[0]).margin(1e-9));
      const double bumped_adv = total_generator_loss(c[0], c[1], c[2], 2 * c[3], c[4], w, eta);
      CHECK(bumped_adv - base == Catch::Approx((1 - eta) * w.lambda_a * c[3]).margin(1e-9));
    }
  }
}

TEST_CASE("graph builders match the scalar forms on batches") {
  Rng rng(5);
  const int t_len = 4, nd = 2, nz = 3, batch = 5, d_f = 6;

  // reconstruction
  std::vector<MatrixXd> x_steps, y_steps;
  for (int t = 0; t < t_len; ++t) {
    x_steps.push_back(testsup::random_matrix(rng, nd, batch));
    y_steps.push_back(testsup::random_matrix(rng, nd, batch));
  }
  ad::Tape tape;
  ad::TapeBackend tb(tape);
  std::vector<ad::Var> xl, yl;
  for (int t = 0; t < t_len; ++t) {
    xl.push_back(tb.leaf(x_steps[t]));
    yl.push_back(tb.leaf(y_steps[t]));
  }
  double expect = 0.0;
  for (int b = 0; b < batch; ++b) {
    MatrixXd xs(t_len, nd), ys(t_len, nd);
    for (int t = 0; t < t_len; ++t) {
      xs.row(t) = x_steps[t].col(b).transpose();
      ys.row(t) = y_steps[t].col(b).transpose();
    }
    expect += recon_loss(xs, ys);
  }
  CHECK(tape.value(recon_loss_graph(tb, xl, yl))(0, 0) ==
        Catch::Approx(expect / batch).margin(1e-12));

  // posterior
  MatrixXd mu = testsup::random_matrix(rng, nz, batch);
  MatrixXd lv = testsup::random_matrix(rng, nz, batch);
  double post_expect = 0.0;
  for (int b = 0; b < batch; ++b) {
    PosteriorParams p;
    p.mu = mu.col(b);
    p.log_var = lv.col(b);
    p.std = (p.log_var.array() / 2).exp();
    post_expect += posterior_loss(p, 0.1);
  }
  CHECK(tape.value(posterior_loss_graph(tb, tb.leaf(mu), tb.leaf(lv), 0.1))(0, 0) ==
        Catch::Approx(post_expect / batch).margin(1e-12));

  // feature matching
  MatrixXd fa = testsup::random_matrix(rng, d_f, batch);
  MatrixXd fb = testsup::random_matrix(rng, d_f, batch);
  double feat_expect = 0.0;
  for (int b = 0; b < batch; ++b) feat_expect += feature_match_loss(fa.col(b), fb.col(b));
  CHECK(tape.value(feature_match_loss_graph(tb, tb.leaf(fa), tb.leaf(fb)))(0, 0) ==
        Catch::Approx(feat_expect / batch).margin(1e-12));

  // diversity
  MatrixXd za = testsup::random_matrix(rng, nz, batch);
  MatrixXd zb = testsup::random_matrix(rng, nz, batch);
  double div_expect = 0.0;
  for (int b = 0; b < batch; ++b) div_expect += diversity_loss(za.col(b), zb.col(b));
  CHECK(tape.value(diversity_loss_graph(tb, tb.leaf(za), tb.leaf(zb)))(0, 0) ==
        Catch::Approx(div_expect / batch).margin(1e-12));
}
