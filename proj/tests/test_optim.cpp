#include <doctest.h>

#include <cmath>

#include "vsr/optim.hpp"

using namespace vsr;

TEST_CASE("zero gradient, zero weight decay leaves parameters unchanged") {
    Tensor p = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
    p.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0f;
    AdamW opt(cfg);
    opt.add_param("p", p);
    const std::vector<float> before = p.values();
    opt.step();
    opt.step();
    CHECK(p.values() == before);
}

TEST_CASE("single scalar, unit gradient at step 1 moves by about lr") {
    Tensor p = Tensor::from({1}, {0.7f});
    p.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.0f;
    AdamW opt(cfg);
    opt.add_param("p", p);
    p.grad()[0] = 1.0f;
    opt.step();
    // bias-corrected m_hat/sqrt(v_hat) = 1, so the step is lr/(1+eps) ~ lr
    CHECK(p.values()[0] == doctest::Approx(0.7f - 0.1f).epsilon(1e-5));
}

TEST_CASE("weight decay alone shrinks parameters") {
    Tensor p = Tensor::from({2}, {2.0f, -3.0f});
    p.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.weight_decay = 0.1f;
    AdamW opt(cfg);
    opt.add_param("p", p);
    for (int i = 0; i < 5; ++i) {
        const std::vector<float> before = p.values();
        opt.step();
        for (size_t j = 0; j < 2; ++j) CHECK(std::fabs(p.values()[j]) < std::fabs(before[j]));
    }
}

TEST_CASE("non-finite gradient rejects the whole update") {
    Tensor a = Tensor::from({2}, {1.0f, 1.0f});
    Tensor b = Tensor::from({2}, {1.0f, 1.0f});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    AdamW opt;
    opt.add_param("a", a);
    opt.add_param("b", b);
    a.grad()[0] = 1.0f;  // healthy
    b.grad()[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("'b'"), NumericError);
    CHECK(a.values()[0] == 1.0f);  // no partial update happened
    CHECK(opt.step_count() == 0);
}

TEST_CASE("frozen or grad-less tensors cannot be registered") {
    Tensor p = Tensor::from({1}, {1.0f});
    AdamW opt;
    CHECK_THROWS_AS(opt.add_param("p", p), UsageError);
    p.set_requires_grad(true);
    p.set_frozen(true);
    CHECK_THROWS_AS(opt.add_param("p", p), UsageError);
}
