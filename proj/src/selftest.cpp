// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "hawaii/config.hpp"
#include "hawaii/losses.hpp"
#include "hawaii/model.hpp"
#include "hawaii/ops.hpp"
#include "hawaii/run.hpp"
#include "hawaii/trainer.hpp"

namespace hawaii {

namespace {

PropertyResult pass(std::string name) { return PropertyResult{std::move(name), true, ""}; }

PropertyResult fail(std::string name, std::string detail) {
    return PropertyResult{std::move(name), false, std::move(detail)};
}

bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const auto ad = a.data(), bd = b.data();
    return std::memcmp(ad.data(), bd.data(), ad.size() * sizeof(double)) == 0;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// Random values whose scale itself is random, so softmax sees both flat and
// sharply peaked rows.
std::vector<double> random_values(Rng& rng, std::size_t n) {
    const double spread = std::exp(rng.normal(0.0, 1.5));
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, spread);
    return v;
}

}  // namespace

std::string format_result(const PropertyResult& result) {
    if (result.passed) return "PASS " + result.name;
    return "FAIL " + result.name + ": " + result.detail;
}

std::vector<double> token_importance_reference(const std::vector<double>& teacher, std::size_t m,
                                               const std::vector<double>& instr, std::size_t l, std::size_t d) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> score(m, 0.0);
    for (std::size_t q = 0; q < m + l; ++q) {
        const double* query = q < m ? &teacher[q * d] : &instr[(q - m) * d];
        std::vector<double> logits(m);
        for (std::size_t k = 0; k < m; ++k) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += query[c] * teacher[k * d + c];
            logits[k] = dot * inv_sqrt_d;
        }
        double peak = logits[0];
        for (std::size_t k = 1; k < m; ++k) peak = std::max(peak, logits[k]);
        double z = 0.0;
        for (std::size_t k = 0; k < m; ++k) z += std::exp(logits[k] - peak);
        for (std::size_t k = 0; k < m; ++k) score[k] += std::exp(logits[k] - peak) / z;
    }
    for (double& s : score) s /= static_cast<double>(m + l);
    return score;
}

std::vector<double> adam_reference(double x0, const std::vector<double>& grads, double lr, double beta1,
                                   double beta2, double epsilon) {
    std::vector<double> trace;
    double x = x0, m = 0.0, v = 0.0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double m_hat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
        const double v_hat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
        x -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
        trace.push_back(x);
    }
    return trace;
}

PropertyResult check_zero_init_identity(std::size_t images) {
    const char* name = "zero_init_identity";
    const TrainConfig config;
    Rng init(config.seed);
    const StudentEncoder encoder(config.encoder_shape(), init);
    Rng rng({config.seed, 0x1d1d});
    const std::size_t side = config.image_side();
    for (std::size_t i = 0; i < images; ++i) {
        const Tensor image = rng.normal_tensor({side, side, config.image_channels}, 1.0);
        const Tensor full = encoder.encode(image, ForwardMode::full()).tokens;
        const Tensor base = encoder.encode(image, ForwardMode::base()).tokens;
        if (!bit_identical(full, base)) return fail(name, "full and base outputs differ on image " + std::to_string(i));
    }
    return pass(name);
}

PropertyResult check_score_normalization(std::size_t trials) {
    const char* name = "score_normalization";
    const std::size_t ms[] = {1, 2, 4, 16};
    const std::size_t d = 8;
    Rng rng(20260417);
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t m = ms[t % 4];
        const std::size_t l = 1 + rng.uniform_index(4);
        const Tensor teacher = Tensor::from({m, d}, random_values(rng, m * d));
        const Tensor instr = Tensor::from({l, d}, random_values(rng, l * d));
        const auto s = token_importance(teacher, instr).to_vector();
        double total = 0.0;
        for (double v : s) {
            if (!(v >= 0.0)) return fail(name, "negative score " + num(v) + " in trial " + std::to_string(t));
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-9) return fail(name, "scores sum to " + num(total) + " in trial " + std::to_string(t));
        if (m == 1 && s[0] != 1.0) return fail(name, "m=1 score is " + num(s[0]) + ", expected exactly 1");
    }
    return pass(name);
}

PropertyResult check_importance_oracle(std::size_t trials) {
    const char* name = "importance_oracle";
    Rng rng(4242);
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t m = 1 + rng.uniform_index(4);
        const std::size_t l = 1 + rng.uniform_index(4);
        const std::size_t d = 1 + rng.uniform_index(3);
        const auto tv = random_values(rng, m * d);
        const auto iv = random_values(rng, l * d);
        const auto fast = token_importance(Tensor::from({m, d}, tv), Tensor::from({l, d}, iv)).to_vector();
        const auto slow = token_importance_reference(tv, m, iv, l, d);
        for (std::size_t k = 0; k < m; ++k) worst = std::max(worst, std::abs(fast[k] - slow[k]));
    }
    if (worst > 1e-12) return fail(name, "max deviation " + num(worst) + " exceeds 1e-12");
    return pass(name);
}

PropertyResult check_unshuffle_roundtrip() {
    const char* name = "unshuffle_roundtrip";
    Rng rng(77);
    for (std::size_t g = 1; g <= 12; ++g) {
        for (std::size_t r = 1; r <= g; ++r) {
            if (g % r != 0) continue;
            for (std::size_t c = 1; c <= 8; ++c) {
                const Tensor x = rng.normal_tensor({g, g, c}, 1.0);
                const Tensor y = pixel_unshuffle(x, r);
                const std::string tag = "(g=" + std::to_string(g) + ", r=" + std::to_string(r) + ", C=" +
                                        std::to_string(c) + ")";
                if (y.shape() != Shape{g / r, g / r, c * r * r} || y.numel() != x.numel())
                    return fail(name, "wrong output shape " + shape_to_string(y.shape()) + " for " + tag);
                if (!bit_identical(pixel_shuffle(y, r), x)) return fail(name, "round trip not exact for " + tag);
            }
        }
    }
    return pass(name);
}

PropertyResult check_balance_endpoints() {
    const char* name = "balance_endpoints";
    for (std::size_t e : {2u, 3u, 4u, 8u}) {
        const std::size_t n = 4 * e;
        RouterObservation uniform{{}, Tensor::full({n, e}, 1.0 / static_cast<double>(e))};
        for (std::size_t t = 0; t < n; ++t) uniform.indices.push_back(t % e);
        const double u = router_balance(uniform).item();
        if (std::abs(u - 1.0) > 1e-12) return fail(name, "uniform routing gives " + num(u) + " for E=" + std::to_string(e));

        std::vector<double> onehot(n * e, 0.0);
        for (std::size_t t = 0; t < n; ++t) onehot[t * e] = 1.0;
        const RouterObservation collapsed{std::vector<std::size_t>(n, 0), Tensor::from({n, e}, onehot)};
        const double c = router_balance(collapsed).item();
        if (std::abs(c - static_cast<double>(e)) > 1e-12)
            return fail(name, "collapsed routing gives " + num(c) + " for E=" + std::to_string(e));
    }
    return pass(name);
}

PropertyResult check_adam_reference() {
    const char* name = "adam_reference";
    Rng rng(9);
    const std::size_t n = 5, steps = 10;
    Tensor p = rng.normal_tensor({n}, 1.0, true);
    const std::vector<double> start = p.to_vector();
    std::vector<std::vector<double>> grads(n);
    OptimizerState state;
    for (std::size_t s = 0; s < steps; ++s) {
        auto g = p.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = rng.normal(0.0, 1.0);
            grads[i].push_back(g[i]);
        }
        adam_update(state, {NamedParam{"p", ParamGroup::Adapters, p}});
    }
    const auto& cfg = state.settings;
    for (std::size_t i = 0; i < n; ++i) {
        const double expected = adam_reference(start[i], grads[i], cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon).back();
        const double got = p.data()[i];
        if (std::abs(expected - got) > 1e-12)
            return fail(name, "element " + std::to_string(i) + ": " + num(got) + " vs reference " + num(expected));
    }
    return pass(name);
}

PropertyResult check_teacher_only_isolation() {
    const char* name = "teacher_only_isolation";
    const TrainConfig config = minimal_config();
    HawaiiModel model(config);
    randomize_adapters(model, config.seed, 0.5);
    const Tensor image = SyntheticDataset(config).sample(0).image;
    const Tensor before = model.encoder().encode(image, ForwardMode::teacher_only(0)).tokens;
    Rng rng(31);
    for (auto& block : model.encoder().blocks()) {
        for (double& v : block.mola.teacher_adapters[1].up.mutable_data()) v += rng.normal(0.0, 1.0);
        for (auto& adapter : block.mola.general_adapters)
            for (double& v : adapter.up.mutable_data()) v += rng.normal(0.0, 1.0);
    }
    const Tensor after = model.encoder().encode(image, ForwardMode::teacher_only(0)).tokens;
    if (!bit_identical(before, after)) return fail(name, "teacher_only(0) output moved when other adapters changed");
    return pass(name);
}

PropertyResult check_minimal_gradcheck() {
    const char* name = "minimal_gradcheck";
    const GradcheckReport report = run_gradcheck(minimal_config());
    if (report.passed) return pass(name);
    std::string worst;
    for (const auto& g : report.groups)
        if (g.max_rel_error == report.max_rel_error) worst = g.worst_param;
    return fail(name, "max relative error " + num(report.max_rel_error) + " at " + worst);
}

std::vector<PropertyResult> run_selftest() {
    using Check = PropertyResult (*)();
    const std::pair<const char*, Check> checks[] = {
        {"zero_init_identity", [] { return check_zero_init_identity(); }},
        {"score_normalization", [] { return check_score_normalization(); }},
        {"importance_oracle", [] { return check_importance_oracle(); }},
        {"unshuffle_roundtrip", check_unshuffle_roundtrip},
        {"balance_endpoints", check_balance_endpoints},
        {"adam_reference", check_adam_reference},
        {"teacher_only_isolation", check_teacher_only_isolation},
        {"minimal_gradcheck", check_minimal_gradcheck},
    };
    std::vector<PropertyResult> results;
    for (const auto& [name, check] : checks) {
        try {
            results.push_back(check());
        } catch (const std::exception& e) {
            results.push_back(fail(name, std::string("threw: ") + e.what()));
        }
    }
    return results;
}

}  // namespace hawaii
