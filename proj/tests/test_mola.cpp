// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "hawaii/autograd.hpp"
#include "hawaii/mola.hpp"
#include "hawaii/trainer.hpp"
#include "helpers.hpp"

using namespace hawaii;
using hawaii::test::bit_identical;
using hawaii::test::max_grad_error;

namespace {

EncoderShape small_shape() {
    EncoderShape s;
    s.tokens = 4;
    s.width = 8;
    s.depth = 2;
    s.num_teachers = 2;
    s.num_general = 2;
    s.rank = 2;
    s.image_side = 4;
    return s;
}

void fill(Tensor& t, Rng& rng, double stddev) {
    for (double& v : t.mutable_data()) v = rng.normal(0.0, stddev);
}

void randomize(MolaLayer& layer, Rng& rng) {
    for (auto* family : {&layer.teacher_adapters, &layer.general_adapters}) {
        for (auto& a : *family) {
            fill(a.down, rng, 0.5);
            fill(a.up, rng, 0.5);
        }
    }
}

void randomize(StudentEncoder& encoder, Rng& rng) {
    for (auto& block : encoder.blocks()) randomize(block.mola, rng);
}

// Router whose logits ignore the input and equal `logits`.
Router constant_router(std::size_t width, const std::vector<double>& logits) {
    Rng rng(5);
    Router r = Router::init(width, logits.size(), rng);
    for (double& v : r.mlp.fc2.weight.mutable_data()) v = 0.0;
    auto b = r.mlp.fc2.bias.mutable_data();
    for (std::size_t e = 0; e < logits.size(); ++e) b[e] = logits[e];
    return r;
}

Tensor image_for(const EncoderShape& s, std::uint64_t seed) {
    Rng rng(seed);
    return rng.normal_tensor({s.image_side, s.image_side, s.image_channels}, 1.0);
}

}  // namespace

TEST_SUITE("lora") {
    TEST_CASE("zero up-projection gives zero output") {
        Rng rng(1);
        const auto adapter = LoraAdapter::init(6, 2, rng);
        const Tensor h = rng.normal_tensor({5, 6}, 3.0);
        const Tensor out = lora_forward(adapter, h);
        for (double v : out.data()) CHECK(v == 0.0);
    }

    TEST_CASE("rank one hand computation maps [a, b] to [0, a]") {
        const LoraAdapter adapter{Tensor::matrix({{1}, {0}}), Tensor::matrix({{0, 1}})};
        const auto out = lora_forward(adapter, Tensor::matrix({{3, -2}, {0.5, 7}})).to_vector();
        CHECK(out == std::vector<double>{0, 3, 0, 0.5});
    }

    TEST_CASE("width mismatch and invalid rank throw") {
        Rng rng(2);
        const auto adapter = LoraAdapter::init(4, 1, rng);
        CHECK_THROWS_AS(lora_forward(adapter, Tensor::zeros({2, 5})), ShapeError);
        CHECK_THROWS_AS(LoraAdapter::init(4, 4, rng), ShapeError);
        CHECK_THROWS_AS(LoraAdapter::init(4, 0, rng), ShapeError);
    }

    TEST_CASE("adapter gradient matches finite differences") {
        Rng rng(3);
        auto adapter = LoraAdapter::init(5, 2, rng);
        fill(adapter.up, rng, 0.7);
        const Tensor h = rng.normal_tensor({3, 5}, 1.0, true);
        const double err = max_grad_error(
            [](const std::vector<Tensor>& in) { return lora_forward(LoraAdapter{in[1], in[2]}, in[0]); },
            {h, adapter.down, adapter.up});
        CHECK(err < 1e-6);
    }
}

TEST_SUITE("route") {
    TEST_CASE("logits [0.1, 0.9, 0.3] select expert 1") {
        const Router r = constant_router(4, {0.1, 0.9, 0.3});
        Rng rng(4);
        const auto obs = route(r, rng.normal_tensor({6, 4}, 1.0));
        CHECK(obs.indices == std::vector<std::size_t>(6, 1));
        CHECK(obs.probs.shape() == Shape{6, 3});
        double total = 0.0;
        for (std::size_t e = 0; e < 3; ++e) total += obs.probs.at(0, e);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
    }

    TEST_CASE("ties go to the lowest index") {
        const Router r = constant_router(3, {0.2, 0.5, 0.5, 0.1});
        const auto obs = route(r, Tensor::zeros({2, 3}));
        CHECK(obs.indices == std::vector<std::size_t>{1, 1});
        CHECK(argmax_rows(Tensor::matrix({{4, 4, 4}, {1, 3, 3}})) == std::vector<std::size_t>{0, 1});
    }

    TEST_CASE("selection is invariant under logit shifts and positive scaling") {
        Rng rng(6);
        Router r = Router::init(5, 4, rng);
        const Tensor h = rng.normal_tensor({32, 5}, 2.0);
        const auto reference = route(r, h).indices;

        for (double& v : r.mlp.fc2.bias.mutable_data()) v += 3.75;
        CHECK(route(r, h).indices == reference);

        for (double c : {0.01, 0.5, 40.0}) {
            Router scaled = r;
            scaled.mlp.fc2.weight = r.mlp.fc2.weight.clone();
            scaled.mlp.fc2.bias = r.mlp.fc2.bias.clone();
            for (double& v : scaled.mlp.fc2.weight.mutable_data()) v *= c;
            for (double& v : scaled.mlp.fc2.bias.mutable_data()) v *= c;
            CHECK(route(scaled, h).indices == reference);
        }
    }

    TEST_CASE("a single expert is always selected") {
        Rng rng(7);
        const auto layer = MolaLayer::init(8, 1, 2, 2, rng);
        const auto out = mola_forward(layer, rng.normal_tensor({20, 8}, 1.0), ForwardMode::full());
        REQUIRE(out.routing.has_value());
        CHECK(out.routing->teacher.indices == std::vector<std::size_t>(20, 0));
    }
}

TEST_SUITE("mola") {
    TEST_CASE("zero-initialized adapters leave every mode equal to the base") {
        Rng rng(8);
        const auto layer = MolaLayer::init(8, 3, 3, 2, rng);
        const Tensor h = rng.normal_tensor({10, 8}, 1.0);
        const Tensor base = mola_forward(layer, h, ForwardMode::base()).out;
        CHECK(bit_identical(base, layer.base.forward(h)));
        CHECK(bit_identical(mola_forward(layer, h, ForwardMode::full()).out, base));
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(bit_identical(mola_forward(layer, h, ForwardMode::teacher_only(i)).out, base));
    }

    TEST_CASE("routing record only in full mode") {
        Rng rng(9);
        const auto layer = MolaLayer::init(8, 2, 2, 2, rng);
        const Tensor h = rng.normal_tensor({3, 8}, 1.0);
        CHECK(mola_forward(layer, h, ForwardMode::full()).routing.has_value());
        CHECK_FALSE(mola_forward(layer, h, ForwardMode::base()).routing.has_value());
        CHECK_FALSE(mola_forward(layer, h, ForwardMode::teacher_only(1)).routing.has_value());
    }

    TEST_CASE("invalid teacher index throws") {
        Rng rng(10);
        const auto layer = MolaLayer::init(8, 2, 2, 2, rng);
        CHECK_THROWS_AS(mola_forward(layer, Tensor::zeros({1, 8}), ForwardMode::teacher_only(2)), Error);
    }

    TEST_CASE("full mode adds exactly one probability-scaled adapter per family") {
        Rng rng(11);
        auto layer = MolaLayer::init(8, 3, 2, 2, rng);
        randomize(layer, rng);
        const Tensor h = rng.normal_tensor({12, 8}, 1.0);
        const auto out = mola_forward(layer, h, ForwardMode::full());
        const auto& routing = *out.routing;
        const auto base = layer.base.forward(h).to_vector();
        const auto got = out.out.to_vector();
        for (std::size_t t = 0; t < 12; ++t) {
            const Tensor row = slice_rows(h, t, t + 1);
            const std::size_t i = routing.teacher.indices[t], j = routing.general.indices[t];
            const auto a = lora_forward(layer.teacher_adapters[i], row).to_vector();
            const auto b = lora_forward(layer.general_adapters[j], row).to_vector();
            const double pt = routing.teacher.probs.at(t, i), pg = routing.general.probs.at(t, j);
            for (std::size_t d = 0; d < 8; ++d) {
                const double expected = base[t * 8 + d] + pt * a[d] + pg * b[d];
                CHECK(got[t * 8 + d] == doctest::Approx(expected).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("router and selected adapters receive gradient, unselected ones none") {
        Rng rng(12);
        auto layer = MolaLayer::init(8, 4, 3, 2, rng);
        randomize(layer, rng);
        const Tensor h = rng.normal_tensor({2, 8}, 1.0);
        Tape tape;
        TapeScope scope(tape);
        const auto out = mola_forward(layer, h, ForwardMode::full());
        tape.backward(sum(mul(out.out, rng.normal_tensor({2, 8}, 1.0))));

        auto nonzero = [](const Tensor& t) {
            for (double g : t.grad())
                if (g != 0.0) return true;
            return false;
        };
        CHECK(nonzero(layer.teacher_router.mlp.fc1.weight));
        CHECK(nonzero(layer.general_router.mlp.fc2.weight));
        const auto& chosen = out.routing->teacher.indices;
        for (std::size_t e = 0; e < 4; ++e) {
            const bool selected = std::find(chosen.begin(), chosen.end(), e) != chosen.end();
            CHECK(nonzero(layer.teacher_adapters[e].up) == selected);
            CHECK(nonzero(layer.teacher_adapters[e].down) == selected);
        }
    }
}

TEST_SUITE("encoder") {
    TEST_CASE("output is m x D in every mode") {
        Rng rng(13);
        const EncoderShape shape;
        const StudentEncoder encoder(shape, rng);
        const Tensor image = image_for(shape, 1);
        for (const auto& mode : {ForwardMode::full(), ForwardMode::base(), ForwardMode::teacher_only(2)})
            CHECK(encoder.encode(image, mode).tokens.shape() == Shape{16, 32});
        CHECK(encoder.encode(image, ForwardMode::full()).routing.size() == shape.depth);
        CHECK(encoder.encode(image, ForwardMode::base()).routing.empty());
    }

    TEST_CASE("image shape mismatch throws") {
        Rng rng(14);
        const StudentEncoder encoder(small_shape(), rng);
        CHECK_THROWS_AS(encoder.encode(Tensor::zeros({4, 4, 2}), ForwardMode::base()), ShapeError);
    }

    TEST_CASE("invalid shapes are rejected") {
        Rng rng(15);
        EncoderShape s = small_shape();
        s.tokens = 5;
        CHECK_THROWS_AS(StudentEncoder(s, rng), Error);
        s = small_shape();
        s.rank = 8;
        CHECK_THROWS_AS(StudentEncoder(s, rng), Error);
        s = small_shape();
        s.image_side = 5;
        CHECK_THROWS_AS(StudentEncoder(s, rng), Error);
    }

    TEST_CASE("freshly built encoder: full equals base bit-exactly") {
        Rng rng(16);
        const EncoderShape shape;
        const StudentEncoder encoder(shape, rng);
        for (std::uint64_t k = 0; k < 5; ++k) {
            const Tensor image = image_for(shape, 100 + k);
            CHECK(bit_identical(encoder.encode(image, ForwardMode::full()).tokens,
                                encoder.encode(image, ForwardMode::base()).tokens));
        }
    }

    TEST_CASE("base mode ignores adapter values") {
        Rng rng(17);
        StudentEncoder encoder(small_shape(), rng);
        const Tensor image = image_for(small_shape(), 2);
        const Tensor before = encoder.encode(image, ForwardMode::base()).tokens;
        randomize(encoder, rng);
        CHECK(bit_identical(encoder.encode(image, ForwardMode::base()).tokens, before));
        CHECK_FALSE(bit_identical(encoder.encode(image, ForwardMode::full()).tokens, before));
    }

    TEST_CASE("teacher_only equals a hand-built stack without routers") {
        Rng rng(18);
        StudentEncoder encoder(small_shape(), rng);
        randomize(encoder, rng);
        // Routers must not be evaluated at all in this mode.
        for (auto& block : encoder.blocks())
            for (double& v : block.mola.teacher_router.mlp.fc1.weight.mutable_data())
                v = std::numeric_limits<double>::quiet_NaN();

        const EncoderShape s = small_shape();
        const Tensor image = image_for(s, 3);
        const std::size_t p = s.patch_factor();
        for (std::size_t i = 0; i < s.num_teachers; ++i) {
            Tensor x = encoder.patch_embed().forward(
                reshape(pixel_unshuffle(image, p), {s.tokens, s.image_channels * p * p}));
            for (const auto& b : encoder.blocks()) {
                const Tensor h = b.attn_norm.forward(x);
                const Tensor scores = matmul(b.query.forward(h), transpose(b.key.forward(h)));
                const Tensor attn = softmax_rows(scale(scores, 1.0 / std::sqrt(static_cast<double>(s.width))));
                x = add(x, b.out.forward(matmul(attn, b.value.forward(h))));
                const Tensor f = b.ffn_norm.forward(x);
                x = add(x, add(b.mola.base.forward(f), lora_forward(b.mola.teacher_adapters[i], f)));
            }
            CHECK(bit_identical(encoder.encode(image, ForwardMode::teacher_only(i)).tokens, x));
        }
    }

    TEST_CASE("teacher_only(i) ignores other adapters") {
        Rng rng(19);
        StudentEncoder encoder(small_shape(), rng);
        randomize(encoder, rng);
        const Tensor image = image_for(small_shape(), 4);
        const Tensor before = encoder.encode(image, ForwardMode::teacher_only(1)).tokens;
        for (auto& block : encoder.blocks()) {
            fill(block.mola.teacher_adapters[0].up, rng, 2.0);
            for (auto& a : block.mola.general_adapters) fill(a.down, rng, 2.0);
        }
        CHECK(bit_identical(encoder.encode(image, ForwardMode::teacher_only(1)).tokens, before));
    }

    TEST_CASE("full-mode gradients match finite differences on a two-block D=8 encoder") {
        Rng rng(20);
        StudentEncoder encoder(small_shape(), rng);
        randomize(encoder, rng);
        const Tensor image = image_for(small_shape(), 5);
        ParamRegistry reg;
        encoder.collect(reg);
        std::vector<Tensor> params;
        for (auto& p : reg.params()) {
            p.tensor.set_requires_grad(true);
            params.push_back(p.tensor);
        }
        const double err = max_grad_error(
            [&](const std::vector<Tensor>&) { return encoder.encode(image, ForwardMode::full()).tokens; }, params);
        CHECK(err < 1e-4);
    }

    TEST_CASE("parameter names are hierarchical") {
        Rng rng(21);
        const StudentEncoder encoder(small_shape(), rng);
        ParamRegistry reg;
        encoder.collect(reg);
        CHECK(reg.find("blocks.1.mola.teacher_adapters.1.down") != nullptr);
        CHECK(reg.find("blocks.0.mola.general_router.fc2.bias") != nullptr);
        CHECK(reg.find("patch_embed.weight")->group == ParamGroup::PatchEmbed);
        CHECK(reg.find("blocks.0.attn.key.bias") == nullptr);
    }

    TEST_CASE("full output departs from base after one training step") {
        Trainer trainer(minimal_config());
        const Tensor image = trainer.dataset().sample(0).image;
        const auto& encoder = trainer.model().encoder();
        CHECK(bit_identical(encoder.encode(image, ForwardMode::full()).tokens,
                            encoder.encode(image, ForwardMode::base()).tokens));
        trainer.step();
        CHECK_FALSE(bit_identical(encoder.encode(image, ForwardMode::full()).tokens,
                                  encoder.encode(image, ForwardMode::base()).tokens));
    }
}
