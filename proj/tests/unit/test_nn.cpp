#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "tsc/nn.hpp"

using namespace tsc;
using namespace tsc::nn;

namespace {

Mlp tiny_net() {
    Layer l1{1, 1, {1.0}, {0.0}};
    Layer l2{1, 1, {2.0}, {0.0}};
    return Mlp({l1, l2}, {0.0});
}

double loss(const Mlp& net, const std::vector<double>& x, const std::vector<double>& t) {
    const auto y = net.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - t[i]) * (y[i] - t[i]);
    return s;
}

// Central finite differences over every parameter; returns the max relative error.
double gradient_check(std::size_t input, Rng& rng) {
    Mlp net({input, 64, 32, 2}, {0.4, 0.0}, rng);
    std::vector<double> x(input);
    for (double& v : x) v = uniform01(rng);
    const std::vector<double> t{uniform01(rng), uniform01(rng)};
    ForwardCache cache;
    const auto y = net.forward_cached(x, cache);
    auto g = net.make_gradients();
    net.backward(cache, mse_gradient(y, t), g);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
        auto probe = [&](double& p, double analytic) {
            const double keep = p;
            p = keep + h;
            const double up = loss(net, x, t);
            p = keep - h;
            const double down = loss(net, x, t);
            p = keep;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        };
        auto& layer = net.layers()[k];
        for (std::size_t i = 0; i < layer.w.size(); ++i) probe(layer.w[i], g.dw[k][i]);
        for (std::size_t i = 0; i < layer.b.size(); ++i) probe(layer.b[i], g.db[k][i]);
    }
    return worst;
}

} // namespace

TEST_CASE("linear chain forward") {
    const auto net = tiny_net();
    CHECK(net.forward(std::vector<double>{3.0})[0] == 6.0);
    CHECK(net.forward(std::vector<double>{-3.0})[0] == 0.0);
}

TEST_CASE("default architecture output width") {
    Rng rng(1);
    Mlp net({11, 64, 32, 2}, {0.4, 0.0}, rng);
    CHECK(net.forward(std::vector<double>(11, 0.5)).size() == 2);
    CHECK(net.parameter_count() == 11 * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2);
    CHECK_THROWS_AS(net.forward(std::vector<double>(10, 0.5)), ShapeError);
}

TEST_CASE("init bounds") {
    Rng rng(2);
    Mlp net({55, 64, 32, 2}, {0.4, 0.0}, rng);
    for (const auto& l : net.layers()) {
        const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        for (double w : l.w) CHECK(std::abs(w) <= bound);
        for (double b : l.b) CHECK(b == 0.0);
    }
}

TEST_CASE("hand chain rule gradient") {
    const auto net = tiny_net();
    ForwardCache cache;
    const std::vector<double> x{3.0};
    const auto y = net.forward_cached(x, cache);
    auto g = net.make_gradients();
    net.backward(cache, mse_gradient(y, std::vector<double>{8.0}), g);
    CHECK(g.dw[1][0] == doctest::Approx(2.0 * (6.0 - 8.0) * 3.0));
    auto z = net.make_gradients();
    net.backward(cache, std::vector<double>{0.0}, z);
    CHECK(z.max_abs() == 0.0);
}

TEST_CASE("backward without a cache is a usage error") {
    const auto net = tiny_net();
    ForwardCache cache;
    auto g = net.make_gradients();
    CHECK_THROWS_AS(net.backward(cache, std::vector<double>{1.0}, g), UsageError);
}

TEST_CASE("finite-difference gradient check on every input width") {
    Rng rng(3);
    for (std::size_t w : {11u, 33u, 44u, 55u}) {
        CAPTURE(w);
        CHECK(gradient_check(w, rng) < 1e-5);
    }
}

TEST_CASE("train-mode output averages to eval output") {
    // Holds when the dropout junction feeds the linear output layer.
    Rng init(4);
    Mlp net({11, 64, 2}, {0.4}, init);
    // Positive weights keep the outputs well away from zero.
    for (auto& l : net.layers()) {
        for (double& w : l.w) w = std::abs(w);
    }
    std::vector<double> x(11);
    for (double& v : x) v = uniform01(init);
    const auto eval = net.forward(x);
    Rng drop(5);
    std::vector<double> mean(2, 0.0);
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
        ForwardCache cache;
        const auto y = net.forward_train(x, drop, cache);
        for (std::size_t i = 0; i < 2; ++i) mean[i] += y[i] / draws;
    }
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(mean[i] - eval[i]) <= 0.02 * std::abs(eval[i]));
}

TEST_CASE("eval forward is deterministic") {
    Rng rng(6);
    Mlp net({33, 64, 32, 2}, {0.4, 0.0}, rng);
    const std::vector<double> x(33, 0.3);
    CHECK(net.forward(x) == net.forward(x));
}

TEST_CASE("sgd step") {
    auto net = tiny_net();
    auto g = net.make_gradients();
    g.dw[0][0] = 2.0;
    net.sgd_step(g, 0.1);
    CHECK(net.layers()[0].w[0] == doctest::Approx(0.8));
    const auto before = net;
    net.sgd_step(g, 0.0);
    CHECK(net == before);
}

TEST_CASE("two sgd steps equal one step on the summed gradient") {
    Rng rng(7);
    Mlp a({11, 64, 32, 2}, {0.4, 0.0}, rng);
    Mlp b = a;
    auto g1 = a.make_gradients();
    auto g2 = a.make_gradients();
    for (std::size_t k = 0; k < g1.dw.size(); ++k) {
        for (double& v : g1.dw[k]) v = uniform01(rng) - 0.5;
        for (double& v : g2.dw[k]) v = uniform01(rng) - 0.5;
    }
    a.sgd_step(g1, 0.01);
    a.sgd_step(g2, 0.01);
    auto sum = g1;
    sum.add(g2);
    b.sgd_step(sum, 0.01);
    for (std::size_t k = 0; k < a.layers().size(); ++k) {
        for (std::size_t i = 0; i < a.layers()[k].w.size(); ++i) {
            CHECK(a.layers()[k].w[i] == doctest::Approx(b.layers()[k].w[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("parameter copies") {
    Rng rng(8);
    Mlp src({11, 64, 32, 2}, {0.4, 0.0}, rng);
    Mlp dst({11, 64, 32, 2}, {0.4, 0.0}, rng);
    CHECK(!(src == dst));
    src.copy_into(dst);
    CHECK(src == dst);
    for (int k = 0; k < 5; ++k) {
        std::vector<double> x(11);
        for (double& v : x) v = uniform01(rng);
        CHECK(src.forward(x) == dst.forward(x));
    }
    Mlp copy2 = dst;
    CHECK(copy2 == src);
    src.layers()[0].w[0] += 1.0;
    CHECK(!(src == dst));
    Mlp other({33, 64, 32, 2}, {0.4, 0.0}, rng);
    CHECK_THROWS_AS(src.copy_into(other), ShapeError);
}

TEST_CASE("checkpoint round trip and byte layout") {
    const auto net = tiny_net();
    std::ostringstream out;
    save_checkpoint(net, out);
    const std::string bytes = out.str();
    REQUIRE(bytes.size() > 4 + 1 + 4 + 16 + 32);
    CHECK(bytes.substr(0, 4) == "DQNW");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    const unsigned char count[4] = {2, 0, 0, 0};
    CHECK(std::memcmp(bytes.data() + 5, count, 4) == 0);
    // Layer dims (1,1),(1,1) then w1, b1, w2, b2 as little-endian doubles.
    const unsigned char dims[16] = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
    CHECK(std::memcmp(bytes.data() + 9, dims, 16) == 0);
    const unsigned char two[8] = {0, 0, 0, 0, 0, 0, 0, 0x40};
    CHECK(std::memcmp(bytes.data() + 25 + 16, two, 8) == 0);

    std::istringstream in(bytes);
    const auto back = load_checkpoint(in);
    CHECK(back == net);

    Rng rng(9);
    Mlp big({44, 64, 32, 2}, {0.4, 0.0}, rng);
    std::ostringstream o2;
    save_checkpoint(big, o2);
    std::istringstream i2(o2.str());
    const auto big_back = load_checkpoint(i2);
    CHECK(big_back == big);
    CHECK(big_back.dropout() == big.dropout());

    std::istringstream bad("XXXX");
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
}
