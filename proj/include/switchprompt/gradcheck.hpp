#pragma once

// Central finite-difference checks for every differentiable op. Shared by the
// `gradcheck` CLI subcommand and the test suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "switchprompt/random.hpp"
#include "switchprompt/tensor.hpp"

namespace switchprompt::gradcheck {

inline constexpr double kStep = 1e-4;
inline constexpr double kTolerance = 1e-4;
/// Denominator floor for the relative error, so that gradients that are
/// numerically zero are compared on an absolute scale of kTolerance * kFloor.
inline constexpr double kFloor = 1e-2;

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Largest relative error between analytic and central-difference gradients
/// over every element of every input. Inputs must be leaves with
/// requires_grad set; their values are restored on return.
inline double max_gradient_error(const LossFn& loss_fn, std::vector<Tensor>& inputs, double step = kStep) {
    for (auto& t : inputs) t.zero_grad();
    backward(loss_fn(inputs));
    double worst = 0.0;
    for (auto& t : inputs) {
        if (!t.requires_grad()) continue;
        const auto analytic = t.grad();
        auto values = t.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + step;
            const double up = loss_fn(inputs).item();
            values[i] = orig - step;
            const double down = loss_fn(inputs).item();
            values[i] = orig;
            worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * step)));
        }
        t.zero_grad();
    }
    return worst;
}

/// sum(x * w) for a fixed random weight tensor, turning any output into a
/// scalar with a generic gradient.
inline Tensor weighted_sum(const Tensor& x, const Tensor& weights) { return sum(mul(x, weights)); }

struct OpResult {
    std::string op;
    std::size_t trials = 0;
    std::size_t failures = 0;
    double worst_error = 0.0;

    bool passed() const { return failures == 0; }
};

namespace detail {

inline Tensor random_leaf(Rng& rng, Shape shape) { return Tensor::randn(std::move(shape), rng, 1.0, true); }

/// Entries bounded away from zero, for ops with a kink there.
inline Tensor kink_free_leaf(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.05 + rng.uniform());
    return Tensor::from_values(std::move(shape), std::move(v), true);
}

inline std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

struct Case {
    LossFn loss;
    std::vector<Tensor> inputs;
};

using CaseFactory = std::function<Case(Rng&)>;

inline std::vector<std::pair<std::string, CaseFactory>> op_cases() {
    using T = Tensor;
    auto weights_like = [](Rng& rng, const Shape& s) { return T::randn(s, rng, 1.0); };
    std::vector<std::pair<std::string, CaseFactory>> cases;

    cases.emplace_back("add", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(add(in[0], in[1]), w); },
                    {random_leaf(rng, s), random_leaf(rng, s)}};
    });
    cases.emplace_back("add_broadcast_row", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(add(in[0], in[1]), w); },
                    {random_leaf(rng, s), random_leaf(rng, {s[1]})}};
    });
    cases.emplace_back("mul", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(mul(in[0], in[1]), w); },
                    {random_leaf(rng, s), random_leaf(rng, s)}};
    });
    cases.emplace_back("mul_scalar", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(mul(in[0], in[1]), w); },
                    {random_leaf(rng, s), random_leaf(rng, {1})}};
    });
    cases.emplace_back("affine", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        const double a = rng.normal(), b = rng.normal();
        return Case{[w, a, b](const std::vector<T>& in) { return weighted_sum(affine(in[0], a, b), w); },
                    {random_leaf(rng, s)}};
    });
    cases.emplace_back("matmul", [=](Rng& rng) {
        const std::size_t p = dim_in(rng, 1, 5), q = dim_in(rng, 1, 5), r = dim_in(rng, 1, 5);
        auto w = weights_like(rng, {p, r});
        return Case{[w](const std::vector<T>& in) { return weighted_sum(matmul(in[0], in[1]), w); },
                    {random_leaf(rng, {p, q}), random_leaf(rng, {q, r})}};
    });
    cases.emplace_back("transpose", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, {s[1], s[0]});
        return Case{[w](const std::vector<T>& in) { return weighted_sum(transpose(in[0]), w); },
                    {random_leaf(rng, s)}};
    });
    cases.emplace_back("reshape", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, {s[0] * s[1]});
        return Case{[w](const std::vector<T>& in) { return weighted_sum(reshape(in[0], {in[0].size()}), w); },
                    {random_leaf(rng, s)}};
    });
    cases.emplace_back("concat_rows", [=](Rng& rng) {
        const std::size_t c = dim_in(rng, 1, 5), r1 = dim_in(rng, 1, 4), r2 = dim_in(rng, 1, 4);
        auto w = weights_like(rng, {r1 + r2, c});
        return Case{[w](const std::vector<T>& in) { return weighted_sum(concat_rows({in[0], in[1]}), w); },
                    {random_leaf(rng, {r1, c}), random_leaf(rng, {r2, c})}};
    });
    cases.emplace_back("concat_cols", [=](Rng& rng) {
        const std::size_t r = dim_in(rng, 1, 5), c1 = dim_in(rng, 1, 4), c2 = dim_in(rng, 1, 4);
        auto w = weights_like(rng, {r, c1 + c2});
        return Case{[w](const std::vector<T>& in) { return weighted_sum(concat_cols({in[0], in[1]}), w); },
                    {random_leaf(rng, {r, c1}), random_leaf(rng, {r, c2})}};
    });
    cases.emplace_back("slice_rows", [=](Rng& rng) {
        const std::size_t r = dim_in(rng, 2, 6), c = dim_in(rng, 1, 4);
        const std::size_t begin = rng.below(r), count = 1 + rng.below(r - begin);
        auto w = weights_like(rng, {count, c});
        return Case{[w, begin, count](const std::vector<T>& in) {
                        return weighted_sum(slice_rows(in[0], begin, count), w);
                    },
                    {random_leaf(rng, {r, c})}};
    });
    cases.emplace_back("slice_cols", [=](Rng& rng) {
        const std::size_t r = dim_in(rng, 1, 4), c = dim_in(rng, 2, 6);
        const std::size_t begin = rng.below(c), count = 1 + rng.below(c - begin);
        auto w = weights_like(rng, {r, count});
        return Case{[w, begin, count](const std::vector<T>& in) {
                        return weighted_sum(slice_cols(in[0], begin, count), w);
                    },
                    {random_leaf(rng, {r, c})}};
    });
    cases.emplace_back("sum", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        return Case{[](const std::vector<T>& in) { return scale(sum(in[0]), 0.7); }, {random_leaf(rng, s)}};
    });
    cases.emplace_back("mean", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        return Case{[](const std::vector<T>& in) { return mean(in[0]); }, {random_leaf(rng, s)}};
    });
    cases.emplace_back("sigmoid", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(sigmoid(in[0]), w); },
                    {random_leaf(rng, s)}};
    });
    cases.emplace_back("gelu", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(gelu(in[0]), w); }, {random_leaf(rng, s)}};
    });
    cases.emplace_back("relu", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(relu(in[0]), w); },
                    {kink_free_leaf(rng, s)}};
    });
    cases.emplace_back("softmax_rows", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 6)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(softmax_rows(in[0]), w); },
                    {random_leaf(rng, s)}};
    });
    cases.emplace_back("softmax_cross_entropy", [=](Rng& rng) {
        const std::size_t batch = dim_in(rng, 1, 5), classes = dim_in(rng, 2, 6);
        std::vector<std::size_t> labels(batch);
        for (auto& l : labels) l = rng.below(classes);
        return Case{[labels](const std::vector<T>& in) { return softmax_cross_entropy(in[0], labels); },
                    {random_leaf(rng, {batch, classes})}};
    });
    cases.emplace_back("layer_norm", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 4), dim_in(rng, 2, 6)};
        auto w = weights_like(rng, s);
        return Case{[w](const std::vector<T>& in) { return weighted_sum(layer_norm(in[0], in[1], in[2]), w); },
                    {random_leaf(rng, s), random_leaf(rng, {s[1]}), random_leaf(rng, {s[1]})}};
    });
    cases.emplace_back("embedding", [=](Rng& rng) {
        const std::size_t vocab = dim_in(rng, 2, 6), width = dim_in(rng, 1, 4), len = dim_in(rng, 1, 6);
        std::vector<std::size_t> ids(len);
        for (auto& id : ids) id = rng.below(vocab);
        auto w = weights_like(rng, {len, width});
        return Case{[w, ids](const std::vector<T>& in) { return weighted_sum(embedding(in[0], ids), w); },
                    {random_leaf(rng, {vocab, width})}};
    });
    cases.emplace_back("dropout", [=](Rng& rng) {
        Shape s{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
        auto w = weights_like(rng, s);
        const DropoutStream stream{rng.next(), rng.below(100), rng.below(10)};
        return Case{[w, stream](const std::vector<T>& in) {
                        return weighted_sum(dropout(in[0], 0.3, true, stream), w);
                    },
                    {random_leaf(rng, s)}};
    });
    return cases;
}

}  // namespace detail

/// Runs every op check for `trials` random shapes each.
inline std::vector<OpResult> run_suite(std::size_t trials = 100, std::uint64_t seed = 7) {
    std::vector<OpResult> results;
    for (const auto& [name, factory] : detail::op_cases()) {
        OpResult res{name, trials, 0, 0.0};
        Rng rng(seed, fnv1a(name));
        for (std::size_t t = 0; t < trials; ++t) {
            auto c = factory(rng);
            const double err = max_gradient_error(c.loss, c.inputs);
            res.worst_error = std::max(res.worst_error, err);
            if (!(err <= kTolerance)) ++res.failures;
        }
        results.push_back(res);
    }
    return results;
}

}  // namespace switchprompt::gradcheck
