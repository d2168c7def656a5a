// Copyright 2026 the uth authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "uth/error.hpp"
#include "uth/rbm.hpp"

using namespace uth;

namespace {

// Eight distinct 6-bit patterns with some shared structure.
Matrix
eight_patterns() {
    Matrix m(8, 6);
    m << 1, 1, 1, 0, 0, 0,  //
        1, 1, 0, 0, 0, 0,   //
        1, 0, 1, 0, 0, 0,   //
        0, 1, 1, 0, 0, 0,   //
        0, 0, 0, 1, 1, 1,   //
        0, 0, 0, 1, 1, 0,   //
        0, 0, 0, 1, 0, 1,   //
        0, 0, 0, 0, 1, 1;
    return m;
}

}  // namespace

TEST_SUITE("rbm_srbm") {

TEST_CASE("hidden_activation examples") {
    RbmLayer zero(3, 2);
    const Vector v = Vector::Constant(3, 0.7);
    CHECK(hidden_activation(zero, v).isApprox(Vector::Constant(2, 0.5)));

    RbmLayer sat(3, 2);
    sat.bias_hid.setConstant(50.0);
    const Vector h = hidden_activation(sat, v);
    for (Eigen::Index j = 0; j < 2; ++j) CHECK(std::abs(h[j] - 1.0) < 1e-15);

    RbmLayer one(2, 1);
    one.weights << 1, -1;
    one.bias_hid << 1;
    CHECK(hidden_activation(one, Vector::Ones(2))[0] == doctest::Approx(0.7310585786300049).epsilon(1e-15));

    CHECK_THROWS_AS(hidden_activation(zero, Vector::Zero(4)), ArgumentError);
    CHECK_THROWS_AS(hidden_activation(zero, Vector::Constant(3, 1.5)), ArgumentError);
}

TEST_CASE("visible_activation examples") {
    RbmLayer zero(2, 3);
    CHECK(visible_activation(zero, Vector::Ones(3)).isApprox(Vector::Constant(2, 0.5)));

    RbmLayer bias(2, 3);
    bias.bias_vis << -1.0, 2.0;
    const Vector p = visible_activation(bias, Vector::Zero(3));
    CHECK(p[0] == doctest::Approx(sigmoid(-1.0)));
    CHECK(p[1] == doctest::Approx(sigmoid(2.0)));

    RbmLayer cancel(1, 2);
    cancel.weights << 2, 5;
    cancel.bias_vis << -2;
    Vector h(2);
    h << 1, 0;
    CHECK(visible_activation(cancel, h)[0] == 0.5);

    CHECK_THROWS_AS(visible_activation(zero, Vector::Zero(2)), ArgumentError);
}

TEST_CASE("conditional duality: hidden of (W, bv, bh) equals visible of (W^T, bh, bv)") {
    const auto s = test::random_stack({5, 3}, 9);
    const RbmLayer& l = s.layers()[0];
    RbmLayer t(3, 5);
    t.weights = l.weights.transpose();
    t.bias_vis = l.bias_hid;
    t.bias_hid = l.bias_vis;
    Rng rng(1);
    const Vector v = test::random_unit_vector(5, rng);
    CHECK((hidden_activation(l, v) - visible_activation(t, v)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sigmoid is stable and in (0,1) for moderate inputs") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) == 1.0);
    for (double x = -30; x <= 30; x += 0.5) {
        CHECK(sigmoid(x) > 0.0);
        CHECK(sigmoid(x) < 1.0);
        CHECK(sigmoid(x) + sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("sample_bernoulli examples") {
    Rng rng(3);
    CHECK(sample_bernoulli(Vector(Vector::Zero(16)), rng) == BitVector(16, 0));
    CHECK(sample_bernoulli(Vector(Vector::Ones(16)), rng) == BitVector(16, 1));

    const Vector p = Vector::Constant(100000, 0.3);
    const auto bits = sample_bernoulli(p, rng);
    double mean = 0.0;
    for (auto b : bits) mean += b;
    mean /= static_cast<double>(bits.size());
    CHECK(std::abs(mean - 0.3) < 0.01);

    Rng a(5), b(5);
    CHECK(sample_bernoulli(Vector(Vector::Constant(50, 0.5)), a) == sample_bernoulli(Vector(Vector::Constant(50, 0.5)), b));

    Vector bad = Vector::Constant(3, 0.5);
    bad[1] = 1.2;
    CHECK_THROWS_AS(sample_bernoulli(bad, rng), ArgumentError);
}

TEST_CASE("cd_update examples") {
    Rng init_rng(1);
    const RbmLayer start = init_rbm(6, 4, init_rng);
    const Matrix batch = eight_patterns();

    SUBCASE("null step leaves parameters unchanged") {
        RbmLayer l = start;
        RbmVelocity vel(l);
        RbmTrainConfig cfg;
        cfg.learning_rate = 1e-30;
        Rng rng(2);
        cd_update(l, batch, cfg, vel, rng);
        CHECK((l.weights - start.weights).cwiseAbs().maxCoeff() < 1e-20);
        CHECK((l.bias_vis - start.bias_vis).cwiseAbs().maxCoeff() < 1e-20);
        CHECK((l.bias_hid - start.bias_hid).cwiseAbs().maxCoeff() < 1e-20);
    }

    SUBCASE("repeated identical rows: reconstruction error falls") {
        Matrix same(10, 6);
        for (int r = 0; r < 10; ++r) same.row(r) << 1, 0, 1, 1, 0, 0;
        RbmLayer l = start;
        RbmVelocity vel(l);
        RbmTrainConfig cfg;
        cfg.learning_rate = 0.1;
        Rng rng(4);
        const double first = cd_update(l, same, cfg, vel, rng);
        double last = first;
        for (int k = 0; k < 200; ++k) last = cd_update(l, same, cfg, vel, rng);
        CHECK(last < first);
    }

    SUBCASE("first step is the same for momentum 0 and 0.9") {
        RbmLayer a = start, b = start;
        RbmVelocity va(a), vb(b);
        RbmTrainConfig ca, cb;
        ca.momentum = 0.0;
        cb.momentum = 0.9;
        Rng ra(8), rb(8);
        cd_update(a, batch, ca, va, ra);
        cd_update(b, batch, cb, vb, rb);
        CHECK(a == b);
        CHECK(va.weights == vb.weights);
    }

    SUBCASE("errors") {
        RbmLayer l = start;
        RbmVelocity vel(l);
        RbmTrainConfig cfg;
        Rng rng(1);
        CHECK_THROWS_AS(cd_update(l, Matrix::Zero(2, 5), cfg, vel, rng), ArgumentError);
        CHECK_THROWS_AS(cd_update(l, Matrix::Constant(2, 6, 2.0), cfg, vel, rng), ArgumentError);
        // a huge step overflows within a few updates
        cfg.learning_rate = 1e308;
        CHECK_THROWS_AS(
            {
                for (int k = 0; k < 200; ++k) cd_update(l, batch, cfg, vel, rng);
            },
            DivergenceError);
        RbmLayer nan_layer = start;
        nan_layer.weights(0, 0) = std::nan("");
        RbmVelocity nan_vel(nan_layer);
        CHECK_THROWS_AS(cd_update(nan_layer, batch, RbmTrainConfig{}, nan_vel, rng), DivergenceError);
    }
}

TEST_CASE("exact_log_likelihood examples") {
    SUBCASE("uniform model") {
        RbmLayer l(5, 3);
        CHECK(exact_log_likelihood(l, eight_patterns().leftCols(5)) == doctest::Approx(-5.0 * std::log(2.0)));
    }
    SUBCASE("single visible unit with bias log 3") {
        RbmLayer l(1, 1);
        l.bias_vis << std::log(3.0);
        CHECK(exact_log_likelihood(l, Matrix::Ones(1, 1)) == doctest::Approx(std::log(0.75)).epsilon(1e-14));
    }
    SUBCASE("negative entropy on the model's own distribution") {
        const auto s = test::random_stack({3, 2}, 21);
        const RbmLayer& l = s.layers()[0];
        // independent oracle: P(v) from the free energy, hidden units summed analytically
        std::vector<double> unnorm(8);
        Matrix v(1, 3);
        double z = 0.0;
        for (int code = 0; code < 8; ++code) {
            for (int i = 0; i < 3; ++i) v(0, i) = (code >> i) & 1;
            double lp = l.bias_vis.dot(v.row(0).transpose());
            for (int j = 0; j < 2; ++j) lp += std::log1p(std::exp(l.bias_hid[j] + l.weights.col(j).dot(v.row(0).transpose())));
            unnorm[code] = std::exp(lp);
            z += unnorm[code];
        }
        double neg_entropy = 0.0;
        double model_side = 0.0;
        for (int code = 0; code < 8; ++code) {
            const double p = unnorm[code] / z;
            neg_entropy += p * std::log(p);
            for (int i = 0; i < 3; ++i) v(0, i) = (code >> i) & 1;
            model_side += p * exact_log_likelihood(l, v);
        }
        CHECK(model_side == doctest::Approx(neg_entropy).epsilon(1e-12));
    }
    SUBCASE("enumeration cap") {
        RbmLayer big(12, 9);
        CHECK_THROWS_AS(exact_log_likelihood(big, Matrix::Zero(1, 12)), CapabilityError);
    }
}

TEST_CASE("train_rbm: determinism, likelihood gain, null training") {
    const Matrix data = eight_patterns();
    RbmTrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.9;
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.seed = 3;

    const RbmLayer a = train_rbm(data, 4, cfg);
    const RbmLayer b = train_rbm(data, 4, cfg);
    CHECK(a == b);

    Rng rng(cfg.seed);
    const RbmLayer init = init_rbm(6, 4, rng);
    CHECK(exact_log_likelihood(a, data) > exact_log_likelihood(init, data));

    RbmTrainConfig idle = cfg;
    idle.epochs = 1;
    idle.learning_rate = 1e-30;
    const RbmLayer c = train_rbm(data, 4, idle);
    CHECK((c.weights - init.weights).cwiseAbs().maxCoeff() < 1e-20);

    CHECK_THROWS_AS(train_rbm(data, 0, cfg), ArgumentError);
    RbmTrainConfig bad = cfg;
    bad.momentum = 1.0;
    CHECK_THROWS_AS(train_rbm(data, 4, bad), ArgumentError);
}

TEST_CASE("init_rbm draws small Gaussian weights and zero biases") {
    Rng rng(1);
    const RbmLayer l = init_rbm(100, 50, rng);
    CHECK(l.bias_vis.isZero());
    CHECK(l.bias_hid.isZero());
    const double sd = std::sqrt(l.weights.array().square().mean());
    CHECK(sd == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("train_stack") {
    const auto data = test::random_unit_dataset(40, 8, 2);
    RbmTrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 10;

    const std::vector<std::size_t> sizes{8, 6, 3};
    RbmTrainLog log;
    const auto s = train_stack(data, sizes, cfg, {}, &log);
    CHECK(s.depth() == 2);
    CHECK(s.layers()[0].n_vis() == 8);
    CHECK(s.layers()[0].n_hid() == 6);
    CHECK(s.layers()[1].n_hid() == 3);
    CHECK(s.layer_sizes() == sizes);
    CHECK(s.n_bits() == 3);
    CHECK(log.layer_epoch_error.size() == 2);
    CHECK(log.layer_epoch_error[0].size() == 3);

    CHECK(train_stack(data, sizes, cfg) == s);

    const std::vector<std::size_t> single{8, 4};
    CHECK(train_stack(data, single, cfg).layers()[0] == train_rbm(data, 4, cfg));

    const std::vector<std::size_t> widen{8, 10};
    CHECK_THROWS_AS(train_stack(data, widen, cfg), ArgumentError);
    CHECK(train_stack(data, widen, cfg, StackOptions{true}).n_bits() == 10);
    const std::vector<std::size_t> wrong_dim{7, 4};
    CHECK_THROWS_AS(train_stack(data, wrong_dim, cfg), ArgumentError);
    const std::vector<std::size_t> flat{8, 8};
    CHECK_THROWS_AS(train_stack(data, flat, cfg), ArgumentError);
}

TEST_CASE("paper layer shapes") {
    const std::vector<std::size_t> sizes{4096, 2048, 64};
    CHECK_NOTHROW(validate_layer_sizes(sizes, 4096));
    const auto s = random_unit_stack(sizes, 1);
    CHECK(s.layers()[0].weights.rows() == 4096);
    CHECK(s.layers()[0].weights.cols() == 2048);
    CHECK(s.layers()[1].weights.rows() == 2048);
    CHECK(s.layers()[1].weights.cols() == 64);
}

TEST_CASE("SrbmStack rejects non-chaining layers") {
    std::vector<RbmLayer> layers{RbmLayer(4, 3), RbmLayer(2, 1)};
    CHECK_THROWS_AS(SrbmStack{layers}, ArgumentError);
    CHECK_THROWS_AS(SrbmStack(std::vector<RbmLayer>{}), ArgumentError);
}

TEST_CASE("random_unit_stack has unit-norm columns and zero biases") {
    const std::vector<std::size_t> sizes{10, 6, 4};
    const auto s = random_unit_stack(sizes, 7);
    for (const auto& l : s.layers()) {
        for (Eigen::Index j = 0; j < l.n_hid(); ++j) CHECK(l.weights.col(j).norm() == doctest::Approx(1.0));
        CHECK(l.bias_hid.isZero());
        CHECK(l.bias_vis.isZero());
    }
    CHECK(random_unit_stack(sizes, 7) == s);
    CHECK_FALSE(random_unit_stack(sizes, 8) == s);
}

TEST_CASE("encode_real examples") {
    std::vector<RbmLayer> zero{RbmLayer(4, 3), RbmLayer(3, 2)};
    const SrbmStack z(zero);
    CHECK(encode_real(z, Vector(Vector::Constant(4, 0.3))).isApprox(Vector::Constant(2, 0.5)));

    const auto one = test::random_stack({5, 3}, 4);
    Rng rng(2);
    const Vector x = test::random_unit_vector(5, rng);
    CHECK(encode_real(one, x) == hidden_activation(one.layers()[0], x));

    const auto s = test::random_stack({8, 4, 2}, 5);
    const Vector y = test::random_unit_vector(8, rng);
    Vector manual(2);
    for (int k = 0; k < 2; ++k) {
        double acc2 = s.layers()[1].bias_hid[k];
        for (int j = 0; j < 4; ++j) {
            double acc1 = s.layers()[0].bias_hid[j];
            for (int i = 0; i < 8; ++i) acc1 += s.layers()[0].weights(i, j) * y[i];
            acc2 += s.layers()[1].weights(j, k) * (1.0 / (1.0 + std::exp(-acc1)));
        }
        manual[k] = 1.0 / (1.0 + std::exp(-acc2));
    }
    CHECK((encode_real(s, y) - manual).cwiseAbs().maxCoeff() < 1e-12);

    const Vector g = encode_real(s, y);
    CHECK(g.minCoeff() > 0.0);
    CHECK(g.maxCoeff() < 1.0);

    Matrix rows(2, 8);
    rows.row(0) = y.transpose();
    rows.row(1).setConstant(0.25);
    const Matrix batch = encode_real(s, rows);
    CHECK((batch.row(0).transpose() - g).cwiseAbs().maxCoeff() < 1e-15);

    CHECK_THROWS_AS(encode_real(s, Vector(Vector::Zero(7))), ArgumentError);
}

TEST_CASE("binarize examples") {
    Vector g(3);
    g << 0.6, 0.4, 0.9;
    CHECK(binarize(g) == BitVector{1, 0, 1});
    CHECK(binarize(Vector::Constant(1, 0.5)) == BitVector{0});
    CHECK(binarize(Vector::Zero(4)) == BitVector(4, 0));
}

TEST_CASE("encode_binary examples") {
    const auto s = test::random_stack({6, 4, 3}, 12);
    const auto empty = DescriptorDataset({}, FloatMatrix(0, 6));
    const auto none = encode_binary(s, empty);
    CHECK(none.count() == 0);
    CHECK(none.n_bits() == 3);

    FloatMatrix m(3, 6);
    m.row(0) << 0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f;
    m.row(1) = m.row(0);
    m.row(2) << 0.9f, 0.1f, 0.8f, 0.2f, 0.7f, 0.3f;
    const DescriptorDataset d({"x", "y", "z"}, m);
    const auto c = encode_binary(s, d, 2);
    CHECK(c.n_bits() == 3);
    CHECK(c.ids() == d.ids());
    CHECK(c.unpack(0) == c.unpack(1));
    CHECK(c.unpack(2) == binarize(encode_real(s, Vector(m.row(2).cast<double>().transpose()))));
    CHECK(encode_binary(s, d, 1) == c);

    CHECK_THROWS_AS(encode_binary(s, test::random_unit_dataset(2, 5, 1)), ArgumentError);
}

TEST_CASE("model file round trip") {
    // float-representable parameters survive exactly
    auto s = test::random_stack({9, 5, 3}, 30);
    for (auto& l : s.mutable_layers()) {
        l.weights = l.weights.cast<float>().cast<double>();
        l.bias_vis = l.bias_vis.cast<float>().cast<double>();
        l.bias_hid = l.bias_hid.cast<float>().cast<double>();
    }
    std::stringstream buf;
    write_model(s, buf);
    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 4) == "UTHM");
    const auto back = read_model(buf);
    CHECK(back == s);
    std::ostringstream again;
    write_model(back, again);
    CHECK(again.str() == bytes);

    SUBCASE("truncation and trailing data are format errors") {
        std::istringstream cut(bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_AS(read_model(cut), FormatError);
        std::istringstream extra(bytes + "x");
        CHECK_THROWS_AS(read_model(extra), FormatError);
        std::istringstream wrong("UTHB" + bytes.substr(4));
        CHECK_THROWS_AS(read_model(wrong), FormatError);
    }
}

}  // TEST_SUITE
