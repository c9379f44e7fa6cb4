// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hawaii/autograd.hpp"
#include "hawaii/io.hpp"
#include "hawaii/losses.hpp"
#include "hawaii/model.hpp"
#include "hawaii/selftest.hpp"
#include "hawaii/trainer.hpp"
#include "helpers.hpp"

using namespace hawaii;
using hawaii::test::bit_identical;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

// Gradients of every model parameter after backward on `pick(terms)`.
std::map<std::string, std::vector<double>> model_grads(HawaiiModel& model, const SyntheticSample& sample,
                                                       const LossWeights& weights,
                                                       Tensor (*pick)(const ForwardResult&)) {
    model.params().zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        const auto r = model.forward(sample, weights);
        tape.backward(pick(r));
    }
    std::map<std::string, std::vector<double>> out;
    for (const auto& p : model.params().params()) out[p.name] = p.tensor.grad();
    model.params().zero_grad();
    return out;
}

}  // namespace

TEST_SUITE("importance") {
    TEST_CASE("a single teacher token always scores exactly one") {
        Rng rng(1);
        for (int k = 0; k < 20; ++k) {
            const auto s = token_importance(rng.normal_tensor({1, 3}, 5.0), rng.normal_tensor({4, 3}, 5.0));
            CHECK(s.shape() == Shape{1, 1});
            CHECK(s.item() == 1.0);
        }
    }

    TEST_CASE("identical teacher rows give uniform scores") {
        const Tensor teacher = Tensor::matrix({{0.3, -1.2}, {0.3, -1.2}, {0.3, -1.2}, {0.3, -1.2}});
        const auto s = token_importance(teacher, Tensor::matrix({{2, 5}, {-1, 0.5}})).to_vector();
        for (double v : s) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    }

    TEST_CASE("hand-built case agrees with the loop reference") {
        const std::vector<double> t{1.0, 0.0, 0.5, 2.0}, i{-1.0, 1.5};
        const auto fast = token_importance(Tensor::from({2, 2}, t), Tensor::from({1, 2}, i)).to_vector();
        const auto slow = token_importance_reference(t, 2, i, 1, 2);
        REQUIRE(fast.size() == 2);
        for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(fast[k] - slow[k]) <= 1e-12);
        CHECK(fast[0] + fast[1] == doctest::Approx(1.0).epsilon(1e-15));
    }

    TEST_CASE("invariant under permuting instruction rows") {
        Rng rng(2);
        const Tensor teacher = rng.normal_tensor({5, 4}, 1.0);
        const Tensor instr = rng.normal_tensor({3, 4}, 1.0);
        const std::vector<std::size_t> perm{2, 0, 1};
        const auto a = token_importance(teacher, instr).to_vector();
        const auto b = token_importance(teacher, gather_rows(instr, perm)).to_vector();
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-14));
    }

    TEST_CASE("width mismatch throws") {
        CHECK_THROWS_AS(token_importance(Tensor::zeros({2, 3}), Tensor::zeros({1, 4})), ShapeError);
    }

    TEST_CASE("scores carry gradient into both projections") {
        Rng rng(3);
        const Tensor teacher = rng.normal_tensor({3, 2}, 1.0, true);
        const Tensor instr = rng.normal_tensor({2, 2}, 1.0, true);
        const double err = hawaii::test::max_grad_error(
            [](const std::vector<Tensor>& in) { return token_importance(in[0], in[1]); }, {teacher, instr});
        CHECK(err < 1e-6);
    }
}

TEST_SUITE("distill") {
    TEST_CASE("fine loss hand computation gives 4") {
        const ImportanceScores s{{Tensor::matrix({{1.0}})}};
        CHECK(fine_loss({Tensor::matrix({{2.0}})}, {Tensor::matrix({{0.0}})}, s).item() == 4.0);
    }

    TEST_CASE("fine loss vanishes when student equals teacher") {
        Rng rng(4);
        const Tensor a = rng.normal_tensor({4, 3}, 1.0), b = rng.normal_tensor({4, 3}, 1.0);
        const ImportanceScores s{{Tensor::full({1, 4}, 0.25), Tensor::matrix({{0.1, 0.2, 0.3, 0.4}})}};
        CHECK(fine_loss({a, b}, {a, b}, s).item() == 0.0);
    }

    TEST_CASE("uniform scores reduce fine loss to mean squared error") {
        Rng rng(5);
        std::vector<Tensor> st, te;
        ImportanceScores s;
        double expected = 0.0;
        for (int i = 0; i < 3; ++i) {
            st.push_back(rng.normal_tensor({6, 4}, 1.0));
            te.push_back(rng.normal_tensor({6, 4}, 1.0));
            s.per_teacher.push_back(Tensor::full({1, 6}, 1.0 / 6.0));
            expected += mse(st.back(), te.back()).item() / 3.0;
        }
        CHECK(fine_loss(st, te, s).item() == doctest::Approx(expected).epsilon(1e-13));
    }

    TEST_CASE("fine loss validates its inputs") {
        const Tensor a = Tensor::zeros({2, 2});
        const ImportanceScores one{{Tensor::full({1, 2}, 0.5)}};
        CHECK_THROWS_AS(fine_loss({a, a}, {a}, one), ShapeError);
        CHECK_THROWS_AS(fine_loss({}, {}, ImportanceScores{}), ShapeError);
        CHECK_THROWS_AS(fine_loss({a}, {a}, ImportanceScores{{Tensor::full({1, 3}, 0.5)}}), ShapeError);
    }

    TEST_CASE("coarse loss is plain mean squared error") {
        Rng rng(6);
        const Tensor a = rng.normal_tensor({4, 3}, 1.0, true), b = rng.normal_tensor({4, 3}, 1.0);
        CHECK(coarse_loss(a, a).item() == 0.0);
        CHECK(coarse_loss(a, b).item() == mse(a, b).item());
        CHECK_THROWS_AS(coarse_loss(a, Tensor::zeros({3, 4})), ShapeError);
        const double err = hawaii::test::max_grad_error(
            [&](const std::vector<Tensor>& in) { return coarse_loss(in[0], b); }, {a});
        CHECK(err < 1e-6);
    }
}

TEST_SUITE("balance") {
    TEST_CASE("uniform routing gives one, collapse gives E") {
        for (std::size_t e : {2u, 3u, 5u}) {
            const std::size_t n = 2 * e;
            RouterObservation uniform{{}, Tensor::full({n, e}, 1.0 / static_cast<double>(e))};
            for (std::size_t t = 0; t < n; ++t) uniform.indices.push_back(t % e);
            CHECK(std::abs(router_balance(uniform).item() - 1.0) <= 1e-12);

            std::vector<double> onehot(n * e, 0.0);
            for (std::size_t t = 0; t < n; ++t) onehot[t * e + 1] = 1.0;
            const RouterObservation collapsed{std::vector<std::size_t>(n, 1), Tensor::from({n, e}, onehot)};
            CHECK(std::abs(router_balance(collapsed).item() - static_cast<double>(e)) <= 1e-12);
        }
    }

    TEST_CASE("balance loss averages over every router") {
        RouterObservation uniform{{0, 1}, Tensor::full({2, 2}, 0.5)};
        RouterObservation collapsed{{0, 0}, Tensor::matrix({{1, 0}, {1, 0}})};
        const std::vector<LayerRouting> routing{{uniform, collapsed}, {uniform, uniform}};
        CHECK(balance_loss(routing).item() == doctest::Approx((1.0 + 2.0 + 1.0 + 1.0) / 4.0));
        CHECK_THROWS_AS(balance_loss(std::vector<LayerRouting>{}), Error);
        CHECK_THROWS_AS(router_balance(RouterObservation{{}, Tensor::zeros({1, 2})}), Error);
    }

    TEST_CASE("optimizing a collapsed router lowers the balance loss") {
        Rng rng(7);
        Router router = Router::init(6, 4, rng);
        router.mlp.fc2.bias.mutable_data()[0] = 4.0;
        const Tensor h = rng.normal_tensor({32, 6}, 1.0);
        const auto params = [&] {
            std::vector<NamedParam> out;
            ParamRegistry reg;
            router.mlp.collect(reg, "router", ParamGroup::Routers);
            for (auto& p : reg.params()) {
                p.tensor.set_requires_grad(true);
                out.push_back(p);
            }
            return out;
        }();
        OptimizerState opt;
        opt.settings.lr = 0.05;
        std::vector<double> losses;
        for (int step = 0; step < 50; ++step) {
            Tape tape;
            TapeScope scope(tape);
            const Tensor loss = router_balance(route(router, h));
            losses.push_back(loss.item());
            tape.backward(loss);
            adam_update(opt, params);
            for (const auto& p : params) Tensor(p.tensor).zero_grad();
        }
        CHECK(losses.front() > 3.5);
        CHECK(losses.back() < 0.5 * losses.front());
    }
}

TEST_SUITE("generation") {
    TEST_CASE("uniform decoder gives ln V") {
        Rng rng(8);
        GenHead head = GenHead::init(8, 6, 10, rng);
        for (double& v : head.decoder.weight.mutable_data()) v = 0.0;
        for (double& v : head.decoder.bias.mutable_data()) v = 0.3;
        const std::vector<std::size_t> targets{1, 9, 0, 4};
        const Tensor instr = head.embed(std::vector<std::size_t>{2, 3});
        const double loss = gen_loss(head, rng.normal_tensor({4, 8}, 1.0), instr, targets).item();
        CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-14));
    }

    TEST_CASE("logits are L x V and bad targets throw") {
        Rng rng(9);
        const GenHead head = GenHead::init(8, 6, 10, rng);
        const Tensor s = rng.normal_tensor({4, 8}, 1.0);
        const Tensor instr = head.embed(std::vector<std::size_t>{1});
        CHECK(gen_logits(head, s, instr, std::vector<std::size_t>{1, 2, 3}).shape() == Shape{3, 10});
        CHECK_THROWS_AS(gen_loss(head, s, instr, std::vector<std::size_t>{10}), Error);
        CHECK_THROWS_AS(gen_loss(head, s, instr, std::vector<std::size_t>{}), Error);
        CHECK(head.bos() == 10);
    }

    TEST_CASE("head-only optimization on one sample decreases the loss every step") {
        Rng rng(10);
        GenHead head = GenHead::init(8, 8, 12, rng);
        ParamRegistry reg;
        head.collect(reg);
        for (auto& p : reg.params()) p.tensor.set_requires_grad(true);
        const Tensor student = rng.normal_tensor({4, 8}, 1.0);
        const std::vector<std::size_t> instr_ids{3, 7}, targets{5, 1, 11, 5};
        OptimizerState opt;
        opt.settings.lr = 1e-2;
        std::vector<double> losses;
        for (int step = 0; step < 100; ++step) {
            Tape tape;
            TapeScope scope(tape);
            const Tensor loss = gen_loss(head, student, head.embed(instr_ids), targets);
            losses.push_back(loss.item());
            tape.backward(loss);
            adam_update(opt, reg.params());
            reg.zero_grad();
        }
        for (std::size_t k = 1; k < losses.size(); ++k) CHECK(losses[k] < losses[k - 1]);
        CHECK(losses.back() < 0.2 * losses.front());
    }

    TEST_CASE("gradient reaches the projector") {
        Rng rng(11);
        const GenHead head = GenHead::init(8, 6, 10, rng);
        ParamRegistry reg;
        head.collect(reg);
        for (auto& p : reg.params()) p.tensor.set_requires_grad(true);
        Tape tape;
        TapeScope scope(tape);
        tape.backward(gen_loss(head, rng.normal_tensor({4, 8}, 1.0), head.embed(std::vector<std::size_t>{1}),
                               std::vector<std::size_t>{2, 3}));
        for (const auto& p : reg.params()) {
            if (p.group != ParamGroup::Projector) continue;
            const auto g = p.tensor.grad();
            CHECK_MESSAGE(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }), p.name);
        }
    }
}

TEST_SUITE("total") {
    TEST_CASE("weighted sum examples") {
        const LossTerms terms{Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(2), Tensor::scalar(4)};
        const auto r = total_loss(terms);
        CHECK(r.bundle.total == doctest::Approx(3.2).epsilon(1e-15));
        CHECK(std::abs(r.bundle.total - (r.bundle.gen + 0.5 * (r.bundle.fg + r.bundle.cg) + 0.05 * r.bundle.mb)) <= 1e-12);
        CHECK(r.bundle.lambda1 == 0.5);
        CHECK(r.bundle.lambda2 == 0.05);
        CHECK(total_loss(terms, {0.0, 0.0}).total.item() == 1.0);
    }

    TEST_CASE("non-finite component is named") {
        Tensor cg = Tensor::scalar(0.0);
        cg.mutable_data()[0] = NAN;
        const LossTerms terms{Tensor::scalar(1), cg, Tensor::scalar(2), Tensor::scalar(4)};
        try {
            total_loss(terms);
            FAIL("expected NonFiniteError");
        } catch (const NonFiniteError& e) {
            CHECK(std::string(e.what()).find("loss_cg") != std::string::npos);
        }
    }

    TEST_CASE("gradient is the weighted sum of component gradients") {
        const TrainConfig config = minimal_config();
        HawaiiModel model(config);
        randomize_adapters(model, 3, 0.5);
        const auto sample = SyntheticDataset(config).sample(1);
        const LossWeights w{0.7, 0.3};
        using R = const ForwardResult&;
        const auto total = model_grads(model, sample, w, [](R r) { return r.total.total; });
        const auto gen = model_grads(model, sample, w, [](R r) { return r.terms.gen; });
        const auto cg = model_grads(model, sample, w, [](R r) { return r.terms.cg; });
        const auto fg = model_grads(model, sample, w, [](R r) { return r.terms.fg; });
        const auto mb = model_grads(model, sample, w, [](R r) { return r.terms.mb; });
        double worst = 0.0;
        for (const auto& [name, g] : total) {
            for (std::size_t k = 0; k < g.size(); ++k) {
                const double expected =
                    gen.at(name)[k] + w.lambda1 * (cg.at(name)[k] + fg.at(name)[k]) + w.lambda2 * mb.at(name)[k];
                worst = std::max(worst, std::abs(g[k] - expected) / std::max(1.0, std::abs(expected)));
            }
        }
        CHECK(worst < 1e-12);
    }

    TEST_CASE("doubling lambda1 doubles the distillation contribution") {
        const TrainConfig config = minimal_config();
        HawaiiModel model(config);
        randomize_adapters(model, 4, 0.5);
        const auto sample = SyntheticDataset(config).sample(2);
        auto grads = [&](double l1) {
            return model_grads(model, sample, {l1, 0.05}, [](const ForwardResult& r) { return r.total.total; });
        };
        const auto g0 = grads(0.0), g1 = grads(0.5), g2 = grads(1.0);
        double worst = 0.0;
        for (const auto& [name, base] : g0) {
            for (std::size_t k = 0; k < base.size(); ++k) {
                const double once = g1.at(name)[k] - base[k], twice = g2.at(name)[k] - base[k];
                worst = std::max(worst, std::abs(twice - 2.0 * once) / std::max(1.0, std::abs(twice)));
            }
        }
        CHECK(worst < 1e-12);
    }
}

TEST_SUITE("routing_stats") {
    std::vector<LayerRouting> random_routing(Rng& rng, std::size_t layers, std::size_t n) {
        std::vector<LayerRouting> out;
        for (std::size_t l = 0; l < layers; ++l) {
            const Tensor pt = softmax_rows(rng.normal_tensor({n, 3}, 1.0));
            const Tensor pg = softmax_rows(rng.normal_tensor({n, 2}, 1.0));
            out.push_back({RouterObservation{argmax_rows(pt), pt}, RouterObservation{argmax_rows(pg), pg}});
        }
        return out;
    }

    TEST_CASE("counts, fractions and mean probabilities are normalized") {
        Rng rng(12);
        RoutingStats stats(2, 3, 2);
        for (int k = 0; k < 5; ++k) stats.observe(random_routing(rng, 2, 7));
        for (std::size_t l = 0; l < 2; ++l) {
            for (RouterKind kind : {RouterKind::Teacher, RouterKind::General}) {
                const auto& e = stats.entry(l, kind);
                CHECK(e.tokens == 35);
                std::uint64_t count = 0;
                for (auto c : e.counts) count += c;
                CHECK(count == 35);
                double f = 0.0, p = 0.0;
                for (double v : e.fractions()) f += v;
                for (double v : e.mean_probs()) p += v;
                CHECK(std::abs(f - 1.0) <= 1e-9);
                CHECK(std::abs(p - 1.0) <= 1e-9);
            }
        }
    }

    TEST_CASE("merge equals observing everything at once") {
        Rng rng(13);
        const auto a = random_routing(rng, 2, 5), b = random_routing(rng, 2, 9);
        RoutingStats all(2, 3, 2), first(2, 3, 2), second(2, 3, 2);
        all.observe(a);
        all.observe(b);
        first.observe(a);
        second.observe(b);
        RoutingStats left = first, right = second;
        left.merge(second);
        right.merge(first);
        for (std::size_t l = 0; l < 2; ++l) {
            for (RouterKind kind : {RouterKind::Teacher, RouterKind::General}) {
                CHECK(left.entry(l, kind).counts == all.entry(l, kind).counts);
                CHECK(right.entry(l, kind).counts == all.entry(l, kind).counts);
                CHECK(left.entry(l, kind).tokens == 14);
            }
        }
        RoutingStats empty;
        empty.merge(first);
        CHECK(empty.layers() == 2);
        CHECK_THROWS_AS(first.merge(RoutingStats(3, 3, 2)), ShapeError);
    }

    TEST_CASE("usage entropy") {
        RoutingStats stats(1, 2, 2);
        const Tensor p = Tensor::full({4, 2}, 0.5);
        stats.observe(std::vector<LayerRouting>{{RouterObservation{{0, 1, 0, 1}, p}, RouterObservation{{1, 1, 1, 1}, p}}});
        CHECK(stats.entry(0, RouterKind::Teacher).usage_entropy() == doctest::Approx(std::log(2.0)));
        CHECK(stats.entry(0, RouterKind::General).usage_entropy() == 0.0);
        CHECK(stats.mean_usage_entropy() == doctest::Approx(std::log(2.0) / 2.0));
    }

    TEST_CASE("csv exports") {
        const auto dir = hawaii::test::scratch_dir("routing_csv");
        RoutingStats stats(1, 2, 3);
        stats.observe(std::vector<LayerRouting>{{RouterObservation{{1, 1, 0, 1}, Tensor::full({4, 2}, 0.5)},
                                                 RouterObservation{{2, 2, 2, 2}, Tensor::full({4, 3}, 1.0 / 3.0)}}});
        stats.write_csv(dir / "routing.csv");
        const auto lines = read_lines(dir / "routing.csv");
        REQUIRE(lines.size() == 6);
        CHECK(lines[0] == "layer,router,expert,count,fraction");
        CHECK(lines[1] == "0,teacher,0,1,0.25");
        CHECK(lines[2] == "0,teacher,1,3,0.75");
        CHECK(lines[5] == "0,general,2,4,1");

        export_score_map(ImportanceScores{{Tensor::matrix({{0.25, 0.75}}), Tensor::matrix({{1, 0}})}},
                         dir / "scores.csv");
        const auto scores = read_lines(dir / "scores.csv");
        REQUIRE(scores.size() == 5);
        CHECK(scores[0] == "teacher_index,token_index,score");
        CHECK(scores[2] == "0,1,0.75");
        CHECK(scores[3] == "1,0,1");
    }
}
