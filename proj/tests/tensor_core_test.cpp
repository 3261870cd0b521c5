#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "iadccn/error.hpp"
#include "iadccn/grad_check.hpp"
#include "iadccn/ops.hpp"
#include "iadccn/tensor.hpp"
#include "test_util.hpp"

using namespace iadccn;
using test_util::random_tensor;

namespace {

class TensorCore : public ::testing::Test {
protected:
    DTypeScope f64_{DType::f64};
};

// Direct six-loop cross-correlation with zero padding.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                                std::size_t pad) {
    const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const auto cout = w.dim(0), k = w.dim(2);
    const auto ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    std::vector<double> out(n * cout * ho * wo);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t r = 0; r < ho; ++r)
                for (std::size_t c = 0; c < wo; ++c) {
                    double s = b.at(o);
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t kr = 0; kr < k; ++kr)
                            for (std::size_t kc = 0; kc < k; ++kc) {
                                const auto rr = static_cast<std::ptrdiff_t>(r * stride + kr) -
                                                static_cast<std::ptrdiff_t>(pad);
                                const auto cc = static_cast<std::ptrdiff_t>(c * stride + kc) -
                                                static_cast<std::ptrdiff_t>(pad);
                                if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) ||
                                    cc >= static_cast<std::ptrdiff_t>(wd))
                                    continue;
                                s += x.at(((i * cin + ci) * h + rr) * wd + cc) *
                                     w.at(((o * cin + ci) * k + kr) * k + kc);
                            }
                    out[((i * cout + o) * ho + r) * wo + c] = s;
                }
    return out;
}

}  // namespace

TEST_F(TensorCore, ConvOfOnesSumsWindow) {
    const auto x = Tensor::full({1, 1, 3, 3}, 1.0);
    const auto w = Tensor::full({1, 1, 3, 3}, 1.0);
    const auto y = ops::conv2d(x, w, Tensor::zeros({1}));
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y.item(), 9.0);
}

TEST_F(TensorCore, IdentityKernel) {
    Rng rng(1);
    const auto x = random_tensor({2, 1, 4, 5}, rng);
    const auto y = ops::conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}));
    EXPECT_EQ(y.to_vector(), x.to_vector());
}

TEST_F(TensorCore, ConvMatchesLoopOracleBothAlgorithms) {
    Rng rng(2);
    const auto x = random_tensor({1, 2, 5, 5}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({3}, rng);
    const auto expected = conv_oracle(x, w, b, 1, 1);
    for (auto algo : {ops::ConvAlgorithm::direct, ops::ConvAlgorithm::im2col}) {
        ops::set_conv_algorithm(algo);
        const auto got = ops::conv2d(x, w, b, 1, 1).to_vector();
        ASSERT_EQ(got.size(), expected.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_NEAR(got[i], expected[i], 1e-12);
        }
    }
    ops::set_conv_algorithm(ops::ConvAlgorithm::im2col);
}

TEST_F(TensorCore, ConvShapePropertyAndAlgorithmAgreement) {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t k = 1 + 2 * static_cast<std::size_t>(rng.uniform_int(0, 2));
        const std::size_t stride = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const std::size_t pad = static_cast<std::size_t>(rng.uniform_int(0, 2));
        const std::size_t ho = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const std::size_t wo = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const std::size_t h = (ho - 1) * stride + k - 2 * pad;
        const std::size_t w = (wo - 1) * stride + k - 2 * pad;
        if ((ho - 1) * stride + k <= 2 * pad || (wo - 1) * stride + k <= 2 * pad) continue;
        const std::size_t cin = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const std::size_t cout = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const auto x = random_tensor({2, cin, h, w}, rng);
        const auto wt = random_tensor({cout, cin, k, k}, rng);
        const auto b = random_tensor({cout}, rng);
        ops::set_conv_algorithm(ops::ConvAlgorithm::direct);
        const auto direct = ops::conv2d(x, wt, b, stride, pad);
        ops::set_conv_algorithm(ops::ConvAlgorithm::im2col);
        const auto fast = ops::conv2d(x, wt, b, stride, pad);
        EXPECT_EQ(direct.shape(), (Shape{2, cout, ho, wo}));
        EXPECT_EQ(fast.shape(), direct.shape());
        const auto a = direct.to_vector(), c = fast.to_vector();
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_LE(std::abs(a[i] - c[i]), 1e-6 * std::max(1.0, std::abs(a[i])));
        }
    }
}

TEST_F(TensorCore, ConvErrors) {
    const auto x = Tensor::zeros({1, 2, 5, 5});
    EXPECT_THROW(ops::conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})), DimensionError);
    EXPECT_THROW(ops::conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1})), ConfigError);
    EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 6, 6}), Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({1}), 2, 0),
                 ConfigError);
    EXPECT_THROW(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({2})), DimensionError);
    try {
        ops::conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}));
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("axis"), std::string::npos);
    }
}

TEST_F(TensorCore, Relu) {
    const auto x = Tensor::from_vector({3}, std::vector<double>{-1, 0, 2});
    EXPECT_EQ(ops::relu(x).to_vector(), (std::vector<double>{0, 0, 2}));

    auto a = Tensor::from_vector({1}, std::vector<double>{3}, true);
    ops::reduce_sum(ops::relu(a)).backward();
    EXPECT_EQ(a.grad_vector()[0], 1.0);
    auto b = Tensor::from_vector({1}, std::vector<double>{-2}, true);
    ops::reduce_sum(ops::relu(b)).backward();
    EXPECT_EQ(b.grad_vector()[0], 0.0);
    auto z = Tensor::from_vector({1}, std::vector<double>{0}, true);
    ops::reduce_sum(ops::relu(z)).backward();
    EXPECT_EQ(z.grad_vector()[0], 0.0);
}

TEST_F(TensorCore, Sigmoid) {
    EXPECT_EQ(ops::sigmoid(Tensor::zeros({1})).item(), 0.5);
    Rng rng(4);
    const auto x = random_tensor({50}, rng, -30, 30);
    const auto p = ops::sigmoid(x).to_vector();
    const auto q = ops::sigmoid(ops::scale(x, -1.0)).to_vector();
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_NEAR(p[i], 1.0 - q[i], 1e-15);
    }
    const auto extreme = ops::sigmoid(Tensor::from_vector({2}, std::vector<double>{-500, 500})).to_vector();
    EXPECT_TRUE(std::isfinite(extreme[0]) && std::isfinite(extreme[1]));
    EXPECT_GE(extreme[0], 0.0);
    EXPECT_EQ(extreme[1], 1.0);

    const auto r = grad_check([](auto in) { return ops::reduce_sum(ops::sigmoid(in[0])); },
                              {random_tensor({2, 3}, rng, -3, 3)});
    EXPECT_LE(r.max_rel_err, 1e-6);
}

TEST_F(TensorCore, MaxPool) {
    const auto x = Tensor::from_vector({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_EQ(ops::maxpool2d(x).item(), 4.0);
    const auto c = ops::maxpool2d(Tensor::full({1, 2, 4, 6}, 1.5));
    EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 3}));
    for (double v : c.to_vector()) EXPECT_EQ(v, 1.5);

    Rng rng(5);
    const auto r = random_tensor({1, 1, 6, 6}, rng);
    const auto got = ops::maxpool2d(r).to_vector();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double m = -1e300;
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t b = 0; b < 2; ++b) m = std::max(m, r.at((2 * i + a) * 6 + 2 * j + b));
            EXPECT_EQ(got[i * 3 + j], m);
        }
    EXPECT_THROW(ops::maxpool2d(Tensor::zeros({1, 1, 3, 4})), ConfigError);
}

TEST_F(TensorCore, MaxPoolTieGoesToFirst) {
    auto x = Tensor::full({1, 1, 2, 2}, 7.0, true);
    ops::reduce_sum(ops::maxpool2d(x)).backward();
    EXPECT_EQ(x.grad_vector(), (std::vector<double>{1, 0, 0, 0}));
}

TEST_F(TensorCore, UpsampleConstantAndSingle) {
    for (std::size_t f : {1u, 2u, 3u, 4u}) {
        const auto y = ops::upsample_bilinear(Tensor::full({1, 2, 3, 2}, 0.3), f);
        EXPECT_EQ(y.shape(), (Shape{1, 2, 3 * f, 2 * f}));
        for (double v : y.to_vector()) EXPECT_EQ(v, 0.3);
    }
    const auto s = ops::upsample_bilinear(Tensor::full({1, 1, 1, 1}, -2.25), 4);
    EXPECT_EQ(s.shape(), (Shape{1, 1, 4, 4}));
    for (double v : s.to_vector()) EXPECT_EQ(v, -2.25);
    EXPECT_THROW(ops::upsample_bilinear(Tensor::zeros({1, 1, 2, 2}), 0), ConfigError);
}

TEST_F(TensorCore, UpsampleMatchesHalfPixelFormula) {
    Rng rng(6);
    const std::size_t h = 2, w = 3, f = 2;
    const auto x = Tensor::from_vector({1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1});
    const auto y = ops::upsample_bilinear(x, 2).to_vector();
    // Columns of source are 0 and 1; outputs are at source coords (j + 0.5)/2 - 0.5.
    const std::vector<double> row{0.0, 0.25, 0.75, 1.0};
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y[r * 4 + c], row[c], 1e-15);

    const auto g = random_tensor({1, 1, h, w}, rng);
    const auto out = ops::upsample_bilinear(g, f).to_vector();
    auto src = [&](std::size_t i, std::size_t n) {
        const double s = (static_cast<double>(i) + 0.5) / f - 0.5;
        const double cl = std::clamp(s, 0.0, static_cast<double>(n - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(cl));
        const auto i1 = std::min(i0 + 1, n - 1);
        return std::tuple{i0, i1, cl - static_cast<double>(i0)};
    };
    for (std::size_t r = 0; r < h * f; ++r)
        for (std::size_t c = 0; c < w * f; ++c) {
            const auto [r0, r1, fr] = src(r, h);
            const auto [c0, c1, fc] = src(c, w);
            const double v = (1 - fr) * ((1 - fc) * g.at(r0 * w + c0) + fc * g.at(r0 * w + c1)) +
                             fr * ((1 - fc) * g.at(r1 * w + c0) + fc * g.at(r1 * w + c1));
            EXPECT_NEAR(out[r * w * f + c], v, 1e-14);
        }
}

TEST_F(TensorCore, ElementwiseAndBroadcast) {
    Rng rng(7);
    const auto f = random_tensor({1, 3, 2, 2}, rng);
    for (double v : ops::mul(f, Tensor::zeros({1, 3, 2, 2})).to_vector()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(ops::sub(f, Tensor::zeros({1, 3, 2, 2})).to_vector(), f.to_vector());

    const auto ones = Tensor::full({1, 2, 2, 2}, 1.0);
    const auto m = Tensor::from_vector({1, 1, 2, 2}, std::vector<double>{0.5, 1, 2, 0});
    const auto y = ops::mul(ones, m).to_vector();
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(y[c * 4 + p], m.at(p));

    const auto a = random_tensor({2, 3, 2, 2}, rng);
    const auto b = random_tensor({2, 1, 2, 2}, rng);
    const auto s = ops::add(a, b).to_vector();
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < 4; ++p)
                EXPECT_EQ(s[(n * 3 + c) * 4 + p], a.at((n * 3 + c) * 4 + p) + b.at(n * 4 + p));

    EXPECT_THROW(ops::add(a, Tensor::zeros({2, 2, 2, 2})), DimensionError);
    EXPECT_THROW(ops::add(a, Tensor::zeros({1, 1, 2, 2})), DimensionError);
}

TEST_F(TensorCore, BroadcastGradientSumsOverChannels) {
    Rng rng(8);
    auto a = random_tensor({1, 3, 2, 2}, rng);
    auto b = random_tensor({1, 1, 2, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    ops::reduce_sum(ops::mul(a, b)).backward();
    const auto gb = b.grad_vector();
    for (std::size_t p = 0; p < 4; ++p) {
        EXPECT_NEAR(gb[p], a.at(p) + a.at(4 + p) + a.at(8 + p), 1e-15);
    }
}

TEST_F(TensorCore, Reductions) {
    const auto x = Tensor::from_vector({3}, std::vector<double>{1, 2, 3});
    EXPECT_EQ(ops::reduce_sum(x).item(), 6.0);
    EXPECT_EQ(ops::reduce_mean(Tensor::full({2, 5}, 1.25)).item(), 1.25);
    auto g = Tensor::full({2, 3}, 0.0, true);
    ops::reduce_sum(g).backward();
    for (double v : g.grad_vector()) EXPECT_EQ(v, 1.0);
    auto h = Tensor::full({4}, 0.0, true);
    ops::reduce_mean(h).backward();
    for (double v : h.grad_vector()) EXPECT_EQ(v, 0.25);
}

TEST_F(TensorCore, BackwardBasics) {
    Rng rng(9);
    const auto x = random_tensor({1, 2, 3, 3}, rng);
    auto w = random_tensor({1, 2, 3, 3}, rng);
    w.set_requires_grad(true);
    ops::reduce_sum(ops::mul(w, x)).backward();
    EXPECT_EQ(w.grad_vector(), x.to_vector());

    auto p = random_tensor({5}, rng, 0.1, 1.0);
    p.set_requires_grad(true);
    ops::reduce_sum(ops::relu(ops::scale(p, -1.0))).backward();
    for (double v : p.grad_vector()) EXPECT_EQ(v, 0.0);
}

TEST_F(TensorCore, BackwardErrors) {
    auto w = Tensor::full({2}, 1.0, true);
    EXPECT_THROW(ops::scale(w, 2.0).backward(), GraphError);
    const auto loss = ops::reduce_sum(w);
    loss.backward();
    EXPECT_THROW(loss.backward(), GraphError);
    EXPECT_THROW(ops::reduce_sum(Tensor::full({2}, 1.0)).backward(), GraphError);
}

TEST_F(TensorCore, FanOutAccumulates) {
    Rng rng(10);
    const auto x0 = random_tensor({1, 1, 2, 2}, rng);
    auto once = x0.clone();
    once.set_requires_grad(true);
    ops::reduce_sum(ops::sigmoid(once)).backward();
    auto twice = x0.clone();
    twice.set_requires_grad(true);
    const auto s = ops::sigmoid(twice);
    ops::add(ops::reduce_sum(s), ops::reduce_sum(ops::sigmoid(twice))).backward();
    const auto g1 = once.grad_vector(), g2 = twice.grad_vector();
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g2[i], 2.0 * g1[i], 1e-15);
}

TEST_F(TensorCore, NoGradGuardRecordsNothing) {
    auto w = Tensor::full({2}, 1.0, true);
    Tensor y;
    {
        NoGradGuard guard;
        EXPECT_FALSE(grad_enabled());
        y = ops::reduce_sum(w);
    }
    EXPECT_TRUE(grad_enabled());
    EXPECT_FALSE(y.requires_grad());
    EXPECT_THROW(y.backward(), GraphError);
}

TEST_F(TensorCore, GradCheckLinearIsExact) {
    Rng rng(11);
    const auto r = grad_check([](auto in) { return ops::reduce_sum(ops::scale(in[0], 3.0)); },
                              {random_tensor({4, 3}, rng)});
    EXPECT_LE(r.max_rel_err, 1e-9);
    EXPECT_EQ(r.coords_checked, 12u);
}

TEST_F(TensorCore, GradCheckRejectsF32) {
    DTypeScope f32(DType::f32);
    EXPECT_THROW(grad_check([](auto in) { return ops::reduce_sum(in[0]); }, {Tensor::zeros({2})}),
                 ContractError);
}

TEST_F(TensorCore, IabSubgraphGradient) {
    Rng rng(12);
    const auto f = random_tensor({1, 3, 4, 4}, rng);
    const auto w = random_tensor({1, 3, 3, 3}, rng, -0.5, 0.5);
    const auto b = random_tensor({1}, rng);
    const auto proj = random_tensor({1, 3, 4, 4}, rng);
    const auto r = grad_check(
        [&](auto in) {
            const auto a = ops::sigmoid(ops::conv2d(in[0], in[1], in[2], 1, 1));
            return ops::reduce_sum(ops::mul(ops::sub(in[0], ops::mul(in[0], a)), proj));
        },
        {f, w, b});
    EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST_F(TensorCore, PadCrop) {
    Rng rng(13);
    const auto x = random_tensor({1, 2, 3, 4}, rng);
    const auto p = ops::pad_bottom_right(x, 2, 1);
    EXPECT_EQ(p.shape(), (Shape{1, 2, 5, 5}));
    const auto c = ops::crop_top_left(p, 3, 4);
    EXPECT_EQ(c.to_vector(), x.to_vector());
    EXPECT_EQ(p.at(4 * 5 + 4), 0.0);
}

TEST(TensorPrecision, F32AndF64ForwardAgree) {
    Rng rng(14);
    std::vector<double> xv = test_util::random_values(2 * 3 * 8 * 8, rng);
    std::vector<double> wv = test_util::random_values(4 * 3 * 3 * 3, rng);
    std::vector<double> bv = test_util::random_values(4, rng);
    auto run = [&](DType d) {
        DTypeScope scope(d);
        const auto x = Tensor::from_vector({2, 3, 8, 8}, xv);
        const auto w = Tensor::from_vector({4, 3, 3, 3}, wv);
        const auto b = Tensor::from_vector({4}, bv);
        auto y = ops::sigmoid(ops::conv2d(ops::relu(x), w, b, 1, 1));
        y = ops::upsample_bilinear(ops::maxpool2d(y), 2);
        return y.to_vector();
    };
    const auto a = run(DType::f32), b = run(DType::f64);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_LE(std::abs(a[i] - b[i]), 1e-3 * std::max(std::abs(b[i]), 1e-3));
    }
}

TEST(TensorStorage, InvariantsAndDtype) {
    DTypeScope f32(DType::f32);
    const auto t = Tensor::zeros({2, 3, 4});
    EXPECT_EQ(t.numel(), 24u);
    EXPECT_EQ(t.storage().size(), 24u);
    EXPECT_EQ(t.dtype(), DType::f32);
    EXPECT_THROW(Tensor::from_vector({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}
