#include <cmath>
#include <sstream>

#include "doctest.h"
#include "flowdro/error.hpp"
#include "flowdro/mlp.hpp"
#include "flowdro/param_store.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/tape.hpp"
#include "flowdro/verify.hpp"

using namespace flowdro;
using namespace flowdro::ad;

TEST_CASE("tape forward values")
{
    Tape t;
    auto x = t.input(DenseArray::scalar(3.0));
    CHECK(t.value(mul(x, x)).item() == doctest::Approx(9.0));

    auto z = t.input(DenseArray::scalar(0.0));
    CHECK(t.value(softplus(z, 20.0)).item() == doctest::Approx(std::log(2.0) / 20.0).epsilon(1e-12));
}

TEST_CASE("tape gradients of simple functions")
{
    Tape t;
    auto x = t.input(DenseArray::scalar(3.0));
    auto y = mul(x, x);
    t.backward(y);
    CHECK(t.grad(x).item() == doctest::Approx(6.0));

    Tape s;
    auto z = s.input(DenseArray::scalar(0.0));
    auto sp = softplus(z, 20.0);
    s.backward(sp);
    CHECK(s.grad(z).item() == doctest::Approx(0.5));
}

TEST_CASE("zero-layer network is the identity")
{
    Mlp net(MlpSpec{{3}}, ParamStore{});
    DenseArray x = DenseArray::matrix(2, 3, {1, 2, 3, -4, 5, -6});
    CHECK(net.forward(x) == x);
}

TEST_CASE("eval replays the graph with new inputs")
{
    Tape t;
    auto x = t.input(DenseArray::scalar(1.0));
    auto y = add(mul(x, x), exp(x));
    DenseArray in[] = {DenseArray::scalar(2.0)};
    CHECK(t.eval(in, y).item() == doctest::Approx(4.0 + std::exp(2.0)));
    t.backward(y);
    CHECK(t.grad(x).item() == doctest::Approx(4.0 + std::exp(2.0)));
}

TEST_CASE("shape mismatch raises ValidationError")
{
    Tape t;
    auto a = t.input(DenseArray::matrix(2, 2, {1, 2, 3, 4}));
    auto b = t.input(DenseArray::matrix(3, 1, {1, 2, 3}));
    CHECK_THROWS_AS(add(a, b), ValidationError);
}

TEST_CASE("MLP gradients agree with central differences")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(verify::mlp_gradient_error(seed) < 1e-5);
}

TEST_CASE("adam step")
{
    ParamStore s;
    s.add("p", DenseArray::scalar(1.0));

    SUBCASE("zero gradient leaves parameters unchanged")
    {
        s.at(0).grad = DenseArray::scalar(0.0);
        s.mark_gradients_ready();
        adam_step(s, AdamConfig{0.1});
        CHECK(s.at(0).value.item() == 1.0);
        CHECK(s.step() == 1);
    }
    SUBCASE("first step moves by lr")
    {
        s.at(0).grad = DenseArray::scalar(1.0);
        s.mark_gradients_ready();
        adam_step(s, AdamConfig{0.1});
        CHECK(s.at(0).value.item() == doctest::Approx(0.9).epsilon(1e-6));
    }
    SUBCASE("step without gradients is rejected")
    {
        CHECK_THROWS_AS(adam_step(s, AdamConfig{0.1}), ValidationError);
    }
}

TEST_CASE("training is deterministic and checkpoints round-trip")
{
    auto run = [] {
        Rng rng(7);
        Mlp net = Mlp::initialize(MlpSpec{{2, 8, 1}}, rng);
        DenseArray x = DenseArray::matrix(4, 2, {0, 1, 1, 0, -1, 2, 0.5, 0.5});
        for (int i = 0; i < 20; ++i) {
            Tape t;
            auto leaves = net.bind_trainable(t);
            auto out = mean(squared_norm_rows(net.apply(leaves, t.input(x))));
            t.backward(out);
            adam_step(net.params(), AdamConfig{1e-2});
        }
        return net.params();
    };
    const ParamStore a = run();
    const ParamStore b = run();
    CHECK(a.flat_values() == b.flat_values());

    std::stringstream ss;
    save_checkpoint(a, ss);
    const ParamStore c = load_checkpoint(ss);
    CHECK(c.flat_values() == a.flat_values());
    CHECK(c.step() == a.step());
}

TEST_CASE("rng streams are reproducible and split independently")
{
    Rng a(42), b(42);
    for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(42).split(1), d = Rng(42).split(2);
    CHECK(c.next_u64() != d.next_u64());
}
