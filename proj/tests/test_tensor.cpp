#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "autodiff_suite.hpp"
#include "cast/nn.hpp"

using namespace cast;

namespace {

Tensor vec(Tape& t, std::vector<double> v, bool rg = false) {
    Shape s{static_cast<int64_t>(v.size())};
    return t.leaf(s, v, rg);
}

}  // namespace

TEST_CASE("matmul identity and dot product") {
    Tape t;
    Tensor eye = t.leaf(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}, false);
    Tensor a = t.leaf(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}, false);
    Tensor out = matmul(eye, a);
    CHECK(out.data() == std::vector<double>{1, 2, 3, 4});

    Tensor row = t.leaf(Shape{1, 2}, std::vector<double>{1, 2}, false);
    Tensor col = t.leaf(Shape{2, 1}, std::vector<double>{3, 4}, false);
    CHECK(matmul(row, col).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul gradient of sum equals ones * b^T") {
    std::mt19937_64 rng(3);
    Tape t;
    Tensor a = randn(t, Shape{3, 4}, rng);
    Tensor b = randn(t, Shape{4, 5}, rng);
    Tensor ag = t.leaf(a.shape(), a.data(), true);
    Tensor out = matmul(ag, b);
    t.backward(sum_all(out));

    // closed form: dA = ones(3,5) b^T
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t k = 0; k < 4; ++k) {
            double expect = 0.0;
            for (int64_t j = 0; j < 5; ++j) expect += b.data()[static_cast<size_t>(k * 5 + j)];
            CHECK(ag.grad()[static_cast<size_t>(i * 4 + k)] ==
                  doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("matmul shape error names both shapes") {
    Tape t;
    Tensor a = zeros(t, Shape{2, 3});
    Tensor b = zeros(t, Shape{4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("conv1d identity kernel passes input through") {
    Tape t;
    Tensor x = t.leaf(Shape{1, 1, 4}, std::vector<double>{1, -2, 3, 0.5}, false);
    Tensor w = t.leaf(Shape{1, 1, 1}, std::vector<double>{1}, false);
    CHECK(conv1d(x, w, 1).data() == x.data());
}

TEST_CASE("conv1d pairwise-sum kernel with causal padding") {
    Tape t;
    Tensor x = t.leaf(Shape{1, 1, 3}, std::vector<double>{1, 2, 3}, false);
    Tensor w = t.leaf(Shape{1, 1, 2}, std::vector<double>{1, 1}, false);
    Tensor out = conv1d(x, w, 1);
    CHECK(out.data() == std::vector<double>{1, 3, 5});
}

TEST_CASE("conv1d rejects kernels longer than the input") {
    Tape t;
    Tensor x = zeros(t, Shape{1, 1, 3});
    Tensor w = zeros(t, Shape{1, 1, 5});
    CHECK_THROWS_AS(conv1d(x, w, 1), ShapeError);
    Tensor w2 = zeros(t, Shape{1, 1, 2});
    CHECK_THROWS_AS(conv1d(x, w2, 3), ShapeError);  // dilated span 4 > 3
}

TEST_CASE("conv1d is causal: future steps never leak backward") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Tape t;
        Tensor x = randn(t, Shape{1, 2, 10}, rng);
        Tensor w = randn(t, Shape{3, 2, 3}, rng);
        Tensor base = conv1d(x, w, 2);
        int64_t hit = 6;
        Tensor bumped = t.leaf(x.shape(), x.data(), false);
        bumped.data()[static_cast<size_t>(hit)] += 1.0;  // channel 0, step `hit`
        Tensor after = conv1d(bumped, w, 2);
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t s = 0; s < 10; ++s) {
                double d = std::abs(after.data()[static_cast<size_t>(c * 10 + s)] -
                                    base.data()[static_cast<size_t>(c * 10 + s)]);
                if (s < hit) CHECK(d == 0.0);
            }
    }
}

TEST_CASE("softmax symmetry, stability, and frozen high-precision values") {
    Tape t;
    Tensor flat = softmax(vec(t, {0, 0, 0}), 0);
    for (double v : flat.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));

    Tensor spiked = softmax(vec(t, {1000, 0, 0}), 0);
    CHECK(spiked.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spiked.data()[1] == 0.0);

    // frozen from a 50-digit evaluation of exp(x_i)/sum exp
    Tensor probs = softmax(vec(t, {1, 2, 3}), 0);
    CHECK(probs.data()[0] == doctest::Approx(0.090030573170380458).epsilon(1e-15));
    CHECK(probs.data()[1] == doctest::Approx(0.24472847105479765).epsilon(1e-15));
    CHECK(probs.data()[2] == doctest::Approx(0.66524095577482189).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and stay non-negative") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tape t;
        Tensor x = randn(t, Shape{4, 6}, rng);
        Tensor y = softmax(scale(x, 100.0), -1);
        for (int64_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int64_t c = 0; c < 6; ++c) {
                double v = y.data()[static_cast<size_t>(r * 6 + c)];
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("dft of a constant series concentrates in bin zero") {
    Tape t;
    Tensor x = vec(t, {2.5, 2.5, 2.5, 2.5, 2.5, 2.5});
    auto [re, im] = dft(x);
    CHECK(re.data()[0] == doctest::Approx(15.0).epsilon(1e-12));
    for (int i = 1; i < 6; ++i) {
        CHECK(std::abs(re.data()[static_cast<size_t>(i)]) < 1e-12);
        CHECK(std::abs(im.data()[static_cast<size_t>(i)]) < 1e-12);
    }
}

TEST_CASE("dft impulse response is flat") {
    Tape t;
    auto [re, im] = dft(vec(t, {1, 0, 0, 0}));
    for (int i = 0; i < 4; ++i) {
        CHECK(re.data()[static_cast<size_t>(i)] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(std::abs(im.data()[static_cast<size_t>(i)]) < 1e-14);
    }
}

TEST_CASE("idft inverts dft for lengths 1..64") {
    std::mt19937_64 rng(7);
    for (int64_t len = 1; len <= 64; ++len) {
        Tape t;
        Tensor x = randn(t, Shape{len}, rng);
        auto [re, im] = dft(x);
        auto [back, imag_back] = idft(re, im);
        for (int64_t i = 0; i < len; ++i) {
            CHECK(std::abs(back.data()[static_cast<size_t>(i)] - x.data()[static_cast<size_t>(i)]) <
                  1e-9);
            CHECK(std::abs(imag_back.data()[static_cast<size_t>(i)]) < 1e-9);
        }
    }
}

TEST_CASE("attention with a single step reduces to the value projection") {
    std::mt19937_64 rng(13);
    nn::SelfAttention attn("attn", 5, rng);
    Tape t;
    Binder bind(t);
    Tensor x = randn(t, Shape{3, 1, 5}, rng);
    Tensor out = attn.forward(bind, x);
    Tensor v = matmul(x, bind(attn.Wv));
    for (size_t i = 0; i < out.data().size(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(v.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("attention over identical steps averages uniformly") {
    std::mt19937_64 rng(17);
    nn::SelfAttention attn("attn", 4, rng);
    Tape t;
    Binder bind(t);
    // every time step carries the same feature vector
    std::vector<double> row{0.3, -1.2, 0.8, 2.0};
    std::vector<double> buf;
    for (int s = 0; s < 6; ++s) buf.insert(buf.end(), row.begin(), row.end());
    Tensor x = t.leaf(Shape{1, 6, 4}, buf, false);
    Tensor out = attn.forward(bind, x);
    Tensor v = matmul(x, bind(attn.Wv));
    for (size_t i = 0; i < out.data().size(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(v.data()[i]).epsilon(1e-10));
    }
}

TEST_CASE("backward of sum gives ones; backward of sum of squares gives 2x") {
    Tape t;
    Tensor x = t.leaf(Shape{2, 3}, std::vector<double>{1, -2, 0.5, 3, -1, 4}, true);
    t.backward(sum_all(x));
    for (double g : x.grad()) CHECK(g == 1.0);

    Tape t2;
    Tensor y = t2.leaf(Shape{5}, std::vector<double>{1, -2, 0.5, 3, -1}, true);
    t2.backward(sum_all(mul(y, y)));
    for (size_t i = 0; i < 5; ++i) {
        CHECK(y.grad()[i] == doctest::Approx(2.0 * y.data()[i]).epsilon(1e-14));
    }
}

TEST_CASE("backward rejects non-scalar losses") {
    Tape t;
    Tensor x = t.leaf(Shape{3}, std::vector<double>{1, 2, 3}, true);
    CHECK_THROWS_AS(t.backward(mul(x, x)), ContractError);
}

TEST_CASE("detach truncates gradient flow") {
    Tape t;
    Tensor x = t.leaf(Shape{3}, std::vector<double>{1, 2, 3}, true);
    Tensor loss = sum_all(mul(detach(x), x));  // d/dx = detached values only
    t.backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 2, 3});
}

TEST_CASE("three-layer mlp matches finite differences") {
    std::mt19937_64 rng(23);
    nn::Mlp mlp("mlp", {4, 6, 5, 2}, rng);
    for (int trial = 0; trial < 3; ++trial) {
        auto res = testutil::check_gradients(
            {Shape{3, 4}}, {testutil::Domain::kReal},
            [&](Tape& t, const std::vector<Tensor>& in) {
                Binder bind(t);
                return mlp.forward(bind, in[0]);
            },
            rng);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("adam leaves parameters unchanged on zero gradients while moments decay") {
    Param p("p", Shape{3});
    p.value = {1.0, -2.0, 0.5};
    p.grad = {0.0, 0.0, 0.0};
    AdamState st;
    std::vector<Param*> ps{&p};
    adam_step(ps, st);
    adam_step(ps, st);
    CHECK(p.value == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(st.step == 2);
    for (double m : st.m[0]) CHECK(m == 0.0);
}

TEST_CASE("adam update magnitude approaches lr * sign(g) under constant gradients") {
    Param p("p", Shape{2});
    p.value = {0.0, 0.0};
    AdamState st;
    st.lr = 0.01;
    std::vector<Param*> ps{&p};
    double prev0 = 0.0, prev1 = 0.0;
    for (int i = 0; i < 200; ++i) {
        prev0 = p.value[0];
        prev1 = p.value[1];
        p.grad = {0.5, -2.0};
        adam_step(ps, st);
    }
    CHECK(prev0 - p.value[0] == doctest::Approx(st.lr).epsilon(1e-3));
    CHECK(p.value[1] - prev1 == doctest::Approx(st.lr).epsilon(1e-3));
}

TEST_CASE("adam matches a hand-computed recursion for three manual steps") {
    // oracle: the textbook recursion evaluated directly on scalars
    double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> grads{0.5, -0.3, 0.8};
    double w = 1.0, m = 0.0, v = 0.0;
    std::vector<double> expect;
    for (int s = 1; s <= 3; ++s) {
        double g = grads[static_cast<size_t>(s - 1)];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mh = m / (1 - std::pow(b1, s));
        double vh = v / (1 - std::pow(b2, s));
        w -= lr * mh / (std::sqrt(vh) + eps);
        expect.push_back(w);
    }

    Param p("w", Shape{1});
    p.value = {1.0};
    AdamState st;
    st.lr = lr;
    std::vector<Param*> ps{&p};
    for (int s = 0; s < 3; ++s) {
        p.grad = {grads[static_cast<size_t>(s)]};
        adam_step(ps, st);
        CHECK(p.value[0] == doctest::Approx(expect[static_cast<size_t>(s)]).epsilon(1e-15));
    }
}

TEST_CASE("adam aborts on NaN gradients naming the parameter") {
    Param p("theta.weird", Shape{1});
    p.value = {1.0};
    p.grad = {std::numeric_limits<double>::quiet_NaN()};
    AdamState st;
    std::vector<Param*> ps{&p};
    CHECK_THROWS_WITH_AS(adam_step(ps, st), doctest::Contains("theta.weird"), NumericError);
}

TEST_CASE("replaying a tape with identical seeds is bitwise deterministic") {
    auto build = [](uint64_t seed) {
        std::mt19937_64 rng(seed);
        Tape t;
        Tensor x = randn(t, Shape{4, 6}, rng);
        Tensor w = randn(t, Shape{6, 3}, rng);
        Tensor loss = sum_all(softmax(matmul(x, w), -1));
        return loss.item();
    };
    CHECK(build(42) == build(42));
    CHECK(build(42) != build(43));
}

TEST_CASE("finite differences agree with tape gradients for every op") {
    auto reports = testutil::run_autodiff_fd_suite(10, 1234);
    for (const auto& rep : reports) {
        INFO("op: " << rep.op);
        CHECK(rep.max_rel_err < 1e-4);
    }
}
