#include <catch2/catch_amalgamated.hpp>

#include "physio/nets.hpp"
#include "test_support.hpp"

using namespace physio;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

NetConfig tiny_config() {
  NetConfig net;
  net.latent_dim = 3;
  net.enc_hidden = 4;
  net.dec_hidden = 4;
  net.oracle_hidden = 4;
  net.conv_filters = 4;
  net.num_classes = 2;
  net.channels = 2;
  net.seq_len = 10;
  return net;
}

}  // namespace

TEST_CASE("zero-parameter encoder maps everything to the prior") {
  auto net = tiny_config();
  auto enc = make_encoder(net);  // zero weights and biases
  Rng rng(1);
  const MatrixXd x = testsup::random_matrix(rng, net.seq_len, net.channels);
  const auto post = encode(enc, net, x);
  CHECK(post.mu.cwiseAbs().maxCoeff() == 0.0);
  CHECK(post.log_var.cwiseAbs().maxCoeff() == 0.0);
  CHECK((post.std.array() == 1.0).all());
}

TEST_CASE("encoder shape contract and determinism") {
  NetConfig net = tiny_config();
  net.latent_dim = 32;
  net.channels = 6;
  net.seq_len = 128;
  auto enc = make_encoder(net);
  Rng rng(2);
  init_params(enc, rng);
  const MatrixXd x = testsup::random_matrix(rng, 128, 6);
  const auto a = encode(enc, net, x);
  CHECK(a.mu.size() == 32);
  CHECK(a.log_var.size() == 32);
  const auto b = encode(enc, net, x);
  CHECK((a.mu - b.mu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.log_var - b.log_var).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reparameterized latent sampling") {
  PosteriorParams post;
  post.mu = VectorXd(2);
  post.mu << 1, 2;
  post.std = VectorXd(2);
  post.std << 1, 1;
  post.log_var = post.std.array().square().log();

  VectorXd eps = VectorXd::Zero(2);
  CHECK((sample_latent(post, eps) - post.mu).cwiseAbs().maxCoeff() == 0.0);

  post.std << 2, 3;
  eps << 1, -1;
  VectorXd z = sample_latent(post, eps);
  CHECK(z(0) == Catch::Approx(3.0));
  CHECK(z(1) == Catch::Approx(-1.0));

  VectorXd bad = VectorXd::Zero(3);
  CHECK_THROWS_AS(sample_latent(post, bad), std::invalid_argument);

  SECTION("Monte-Carlo mean approaches mu") {
    Rng rng(7);
    VectorXd acc = VectorXd::Zero(2);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      VectorXd e(2);
      e << rng.gaussian(), rng.gaussian();
      acc += sample_latent(post, e);
    }
    acc /= n;
    for (int i = 0; i < 2; ++i)
      CHECK(std::abs(acc(i) - post.mu(i)) <= 4.0 * post.std(i) / std::sqrt(double(n)));
  }
}

TEST_CASE("zero-parameter decoder emits the output bias") {
  auto net = tiny_config();
  auto dec = make_decoder(net);
  dec.out_b << 0.25, -0.5;  // nonzero bias makes the check meaningful
  const VectorXd z = VectorXd::Zero(net.latent_dim);
  const MatrixXd out = decode(dec, net, z, 1, 6);
  REQUIRE(out.rows() == 6);
  for (int t = 0; t < out.rows(); ++t) {
    CHECK(out(t, 0) == Catch::Approx(0.25));
    CHECK(out(t, 1) == Catch::Approx(-0.5));
  }
}

TEST_CASE("decoder runs past its training length") {
  auto net = tiny_config();
  net.seq_len = 40;
  auto dec = make_decoder(net);
  Rng rng(3);
  init_params(dec, rng);
  const VectorXd z = testsup::random_matrix(rng, net.latent_dim, 1);
  const MatrixXd out = decode(dec, net, z, 2, 120);
  CHECK(out.rows() == 120);
  CHECK(out.allFinite());
}

TEST_CASE("masked decoding pins observed frames") {
  auto net = tiny_config();
  auto dec = make_decoder(net);
  Rng rng(4);
  init_params(dec, rng);
  MaskedSample ms;
  ms.observed = testsup::random_matrix(rng, 8, net.channels);
  ms.mask.assign(8, 1);
  ms.label = 1;
  const VectorXd z = testsup::random_matrix(rng, net.latent_dim, 1);
  const MatrixXd out = decode(dec, net, z, ms.label, 8, &ms);
  CHECK((out - ms.observed).cwiseAbs().maxCoeff() == 0.0);  // bitwise
}

TEST_CASE("perturbing z changes every decoded step") {
  auto net = tiny_config();
  auto dec = make_decoder(net);
  Rng rng(5);
  init_params(dec, rng);
  const VectorXd z1 = testsup::random_matrix(rng, net.latent_dim, 1);
  VectorXd z2 = z1;
  z2(0) += 0.37;
  const MatrixXd a = decode(dec, net, z1, 1, 12);
  const MatrixXd b = decode(dec, net, z2, 1, 12);
  for (int t = 0; t < 12; ++t) CHECK((a.row(t) - b.row(t)).norm() > 0.0);
}

TEST_CASE("discriminator output contract") {
  NetConfig net = tiny_config();
  net.seq_len = 40;
  net.channels = 1;
  net.conv_filters = 32;
  CHECK(conv_out_len(40, 3) == 14);
  CHECK(conv_out_len(14, 3) == 5);
  CHECK(conv_out_len(5, 3) == 2);
  CHECK(discriminator_feature_dim(net, 40) == 64);

  auto disc = make_discriminator(net);
  Rng rng(6);
  init_params(disc, rng);
  const MatrixXd x = testsup::random_matrix(rng, 40, 1);
  const auto out = discriminate(disc, net, x);
  CHECK(out.probs.size() == net.num_classes + 1);  // L=2 -> 3
  CHECK(std::abs(out.probs.sum() - 1.0) < 1e-6);
  CHECK((out.probs.array() >= 0).all());
  CHECK(out.features.size() == 64);

  SECTION("feature width depends only on length and conv shape") {
    const auto out2 = discriminate(disc, net, testsup::random_matrix(rng, 40, 1, 7.0));
    CHECK(out2.features.size() == out.features.size());
  }
}

TEST_CASE("rcgan generator") {
  auto net = tiny_config();

  SECTION("zero weights give a constant sequence") {
    auto gen = make_decoder(net, ModelKind::rcgan);
    const VectorXd z = VectorXd::Zero(net.latent_dim);
    const MatrixXd out = baseline_generate(ModelKind::rcgan, gen, net, z, 1, 9);
    for (int t = 1; t < out.rows(); ++t)
      CHECK((out.row(t) - out.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("outputs are prefix-invariant in the requested length") {
    auto gen = make_decoder(net, ModelKind::rcgan);
    Rng rng(8);
    init_params(gen, rng);
    const VectorXd z = testsup::random_matrix(rng, net.latent_dim, 1);
    const MatrixXd long_run = baseline_generate(ModelKind::rcgan, gen, net, z, 2, 40);
    const MatrixXd short_run = baseline_generate(ModelKind::rcgan, gen, net, z, 2, 10);
    CHECK((long_run.topRows(10) - short_run).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("rcgan_ar with zero weights emits the output bias") {
  auto net = tiny_config();
  auto gen = make_decoder(net, ModelKind::rcgan_ar);
  gen.out_b << 0.125, 2.0;
  const VectorXd z = VectorXd::Zero(net.latent_dim);
  const MatrixXd out = baseline_generate(ModelKind::rcgan_ar, gen, net, z, 2, 5);
  for (int t = 0; t < out.rows(); ++t) {
    CHECK(out(t, 0) == Catch::Approx(0.125));
    CHECK(out(t, 1) == Catch::Approx(2.0));
  }
}

TEST_CASE("oracle classifier outputs a distribution; argmax prefers low index") {
  auto net = tiny_config();
  auto oracle = make_oracle(net);
  Rng rng(9);
  const MatrixXd x = testsup::random_matrix(rng, net.seq_len, net.channels);
  // zero parameters: uniform probabilities, tie resolves to class 1
  auto probs = classify_oracle(oracle, net, x);
  CHECK(std::abs(probs.sum() - 1.0) < 1e-6);
  CHECK(argmax_label(probs) == 1);

  init_params(oracle, rng);
  probs = classify_oracle(oracle, net, x);
  CHECK(std::abs(probs.sum() - 1.0) < 1e-6);
}

TEST_CASE("tape and eager forwards agree bitwise across the networks") {
  auto net = tiny_config();
  Rng rng(10);
  auto enc = make_encoder(net);
  auto dec = make_decoder(net);
  auto disc = make_discriminator(net);
  init_params(enc, rng);
  init_params(dec, rng);
  init_params(disc, rng);

  std::vector<const SequenceSample*> batch;
  std::vector<SequenceSample> storage(3);
  for (auto& s : storage) {
    s.values = testsup::random_matrix(rng, net.seq_len, net.channels);
    s.label = 1;
    batch.push_back(&s);
  }
  const auto steps = batch_steps(batch);
  const std::vector<int> labels{1, 2, 1};
  const MatrixXd z = testsup::random_matrix(rng, net.latent_dim, 3);

  ad::EagerBackend eb;
  auto enc_e = encoder_forward(eb, bind_params(eb, enc), net, steps);
  DecodeOptions opt;
  opt.t_out = net.seq_len;
  auto dec_e = decoder_forward(eb, bind_params(eb, dec), net, z, labels, opt);
  auto disc_e = discriminator_forward(eb, bind_params(eb, disc), net, steps);

  ad::Tape tape;
  ad::TapeBackend tb(tape);
  std::vector<ad::Var> leaves;
  for (const auto& s : steps) leaves.push_back(tb.leaf(s));
  auto enc_t = encoder_forward(tb, bind_params(tb, enc), net, leaves);
  auto dec_t = decoder_forward(tb, bind_params(tb, dec), net, tb.leaf(z), labels, opt);
  auto disc_t = discriminator_forward(tb, bind_params(tb, disc), net, leaves);

  CHECK((tape.value(enc_t.mu) - enc_e.mu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((tape.value(enc_t.logvar) - enc_e.logvar).cwiseAbs().maxCoeff() == 0.0);
  for (int t = 0; t < net.seq_len; ++t)
    CHECK((tape.value(dec_t.outputs[t]) - dec_e.outputs[t]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((tape.value(disc_t.logits) - disc_e.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK((tape.value(disc_t.features) - disc_e.features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shape and label validation") {
  auto net = tiny_config();
  auto enc = make_encoder(net);
  auto dec = make_decoder(net);
  Rng rng(11);
  CHECK_THROWS_AS(encode(enc, net, testsup::random_matrix(rng, 10, 5)),
                  std::invalid_argument);
  const VectorXd z = VectorXd::Zero(net.latent_dim);
  CHECK_THROWS_AS(decode(dec, net, z, 0, 5), std::invalid_argument);
  CHECK_THROWS_AS(decode(dec, net, z, 3, 5), std::invalid_argument);
  CHECK_THROWS_AS(decode(dec, net, VectorXd::Zero(9), 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(baseline_generate(ModelKind::oracle, dec, net, z, 1, 5),
                  std::invalid_argument);
}
