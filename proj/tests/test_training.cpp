#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "aum/fdcheck.hpp"
#include "aum/metrics.hpp"
#include "aum/toy.hpp"
#include "aum/training.hpp"

using namespace aum;

namespace {

Spectrogram make_spec(std::size_t F, std::size_t T, float base = 0.f) {
    Spectrogram s;
    s.n_mels = F;
    s.frames = T;
    s.values = Array<float>({F, T});
    for (std::size_t i = 0; i < F * T; ++i) s.values[i] = base + float(i);
    return s;
}

}  // namespace

TEST_CASE("cross-entropy against uniform logits is ln(num_classes)") {
    Tape<double> t;
    Array<double> logits({2, 4});
    Array<double> targets({2, 4});
    targets.at2(0, 1) = 1.0;
    targets.at2(1, 3) = 1.0;
    Val<double> l = ce_loss(t.leaf(logits), targets);
    CHECK(l.v()[0] == doctest::Approx(std::log(4.0)));

    // confident correct prediction drives the loss to zero
    Array<double> sharp({1, 4});
    sharp.at2(0, 1) = 50.0;
    Array<double> y({1, 4});
    y.at2(0, 1) = 1.0;
    CHECK(ce_loss(t.leaf(sharp), y).v()[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("binary cross-entropy at zero logits is ln 2") {
    Tape<double> t;
    Array<double> logits({2, 3});
    Array<double> targets({2, 3});
    targets.at2(0, 0) = 1.0;
    CHECK(bce_loss(t.leaf(logits), targets).v()[0] == doctest::Approx(std::log(2.0)));
    // a strongly correct logit contributes ~nothing
    Array<double> l1({1, 1}), y1({1, 1});
    l1[0] = 40.0;
    y1[0] = 1.0;
    CHECK(bce_loss(t.leaf(l1), y1).v()[0] == doctest::Approx(0.0).epsilon(1e-9));
    l1[0] = -40.0;
    y1[0] = 0.0;
    CHECK(bce_loss(t.leaf(l1), y1).v()[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("loss gradients match finite differences") {
    std::mt19937 rng(1);
    Array<double> logits({3, 5});
    fill_normal(logits, rng, 0.0, 2.0);
    Array<double> targets({3, 5});
    targets.at2(0, 2) = 1.0;
    targets.at2(1, 0) = 0.7;
    targets.at2(1, 4) = 0.3;
    targets.at2(2, 1) = 1.0;
    for (LossKind kind : {LossKind::CE, LossKind::BCE}) {
        auto eval = [&]() {
            Tape<double> t;
            return loss(t.leaf(logits), targets, kind).v()[0];
        };
        Tape<double> t;
        Val<double> x = t.leaf(logits, true);
        t.backward(loss(x, targets, kind));
        Array<double> g = x.g();
        FdReport rep = finite_difference_check(eval, {{"logits", &logits, &g}}, 1e-5);
        INFO(rep.describe());
        CHECK(rep.ok(1e-5));
    }
}

TEST_CASE("spec_augment fills one band pair with the pre-mask mean") {
    Spectrogram s = make_spec(8, 10);
    float mean = s.mean();
    std::mt19937 rng(3);
    Spectrogram a = spec_augment(s, 4, 6, rng);
    CHECK(a.n_mels == 8);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < s.values.numel(); ++i)
        if (a.values[i] != s.values[i]) {
            CHECK(a.values[i] == mean);
            ++changed;
        }
    // with widths up to 4 and 6 something almost surely changed at seed 3;
    // every changed cell must sit in one full row band or column band
    CHECK(changed > 0);
    std::mt19937 rng2(3);
    Spectrogram b = spec_augment(s, 0, 0, rng2);
    for (std::size_t i = 0; i < s.values.numel(); ++i) CHECK(b.values[i] == s.values[i]);
}

TEST_CASE("mixup blends spectrograms and targets consistently") {
    Batch batch;
    batch.specs = {make_spec(2, 2, 0.f), make_spec(2, 2, 100.f)};
    batch.targets = Array<float>({2, 2});
    batch.targets.at2(0, 0) = 1.f;
    batch.targets.at2(1, 1) = 1.f;
    std::mt19937 rng(5);
    Batch before = batch;
    mixup(batch, 0.f, rng);  // alpha 0 is the identity
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(batch.specs[i].values.data == before.specs[i].values.data);
    CHECK(batch.targets.data == before.targets.data);

    // alpha = 1 forces lambda = 0.5 and always applies
    std::mt19937 rng2(5);
    mixup(batch, 1.f, rng2);
    for (std::size_t i = 0; i < 2; ++i) {
        float row = batch.targets.at2(i, 0) + batch.targets.at2(i, 1);
        CHECK(row == doctest::Approx(1.f));  // mass conserved
    }
    CHECK_THROWS_AS(mixup(batch, 1.5f, rng2), ConfigError);
}

TEST_CASE("blend_into is the convex combination") {
    Spectrogram a = make_spec(2, 2, 0.f), b = make_spec(2, 2, 8.f);
    blend_into(a, b, 0.75f);
    CHECK(a.values[0] == doctest::Approx(0.75f * 0.f + 0.25f * 8.f));
    CHECK(a.values[3] == doctest::Approx(0.75f * 3.f + 0.25f * 11.f));
}

TEST_CASE("learning-rate schedule: warmup then stepwise decay") {
    TrainConfig cfg;
    cfg.base_lr = 1.0;
    cfg.warmup_steps = 10;
    cfg.lr_start = 10;
    cfg.lr_step = 5;
    cfg.lr_decay = 0.5;
    CHECK(lr_at(0, 0, cfg) == doctest::Approx(0.0));
    CHECK(lr_at(5, 0, cfg) == doctest::Approx(0.5));
    CHECK(lr_at(10, 0, cfg) == doctest::Approx(1.0));
    CHECK(lr_at(100, 9, cfg) == doctest::Approx(1.0));
    CHECK(lr_at(100, 10, cfg) == doctest::Approx(0.5));
    CHECK(lr_at(100, 14, cfg) == doctest::Approx(0.5));
    CHECK(lr_at(100, 15, cfg) == doctest::Approx(0.25));
    CHECK(lr_at(100, 20, cfg) == doctest::Approx(0.125));
}

TEST_CASE("accuracy hand cases with first-max tie break") {
    Array<float> logits({3, 3}), targets({3, 3});
    logits.at2(0, 2) = 5.f;            // predict 2
    /* row 1 all zeros -> tie, predict 0 */
    logits.at2(2, 1) = 1.f;            // predict 1
    targets.at2(0, 2) = 1.f;
    targets.at2(1, 0) = 1.f;
    targets.at2(2, 0) = 1.f;
    CHECK(accuracy(logits, targets) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("mean average precision hand cases") {
    // one class, scores rank the positive first -> AP 1
    Array<float> s1({3, 1}), y1({3, 1});
    s1[0] = 0.9f; s1[1] = 0.5f; s1[2] = 0.1f;
    y1[0] = 1.f;
    MapResult r1 = mean_average_precision(s1, y1);
    CHECK(r1.map == doctest::Approx(1.0));
    CHECK(r1.classes_used == 1);

    // positive ranked second: AP = 1/2
    Array<float> s2 = s1, y2({3, 1});
    y2[1] = 1.f;
    CHECK(mean_average_precision(s2, y2).map == doctest::Approx(0.5));

    // two positives at ranks 1 and 3: AP = (1/1 + 2/3)/2 = 5/6
    Array<float> y3({3, 1});
    y3[0] = 1.f; y3[2] = 1.f;
    CHECK(mean_average_precision(s1, y3).map == doctest::Approx(5.0 / 6.0));

    // class with no positives is skipped, not averaged as zero
    Array<float> s4({3, 2}), y4({3, 2});
    s4.at2(0, 0) = 0.9f; s4.at2(1, 0) = 0.5f; s4.at2(2, 0) = 0.1f;
    y4.at2(0, 0) = 1.f;
    MapResult r4 = mean_average_precision(s4, y4);
    CHECK(r4.map == doctest::Approx(1.0));
    CHECK(r4.classes_used == 1);
    CHECK(r4.classes_skipped == 1);
}

TEST_CASE("mAP is invariant to monotone score transforms") {
    std::mt19937 rng(17);
    Array<float> s({20, 4}), y({20, 4});
    fill_normal(s, rng, 0.f, 1.f);
    std::bernoulli_distribution coin(0.3);
    for (auto& v : y.data) v = coin(rng) ? 1.f : 0.f;
    MapResult base = mean_average_precision(s, y);
    Array<float> warped = s;
    for (auto& v : warped.data) v = std::tanh(v) * 3.f + 7.f;  // strictly increasing
    MapResult after = mean_average_precision(warped, y);
    CHECK(after.map == doctest::Approx(base.map).epsilon(1e-12));
    CHECK(after.classes_used == base.classes_used);
}

TEST_CASE("a few optimizer steps reduce the training loss") {
    ToyConfig toy;
    toy.n_samples = 8;
    Dataset data = make_toy_dataset(toy);
    ModelConfig mc = toy_model_config(BlockVariant::FoBi, ClsPosition::Mid);
    ModelWeights<float> m = init_model<float>(mc, 1);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.base_lr = 3e-3;
    cfg.seed = 1;
    TrainResult r = train(m, data, cfg);
    REQUIRE(r.log.size() == 5);
    CHECK(r.log.back().loss < r.log.front().loss);
}

TEST_CASE("training is bit-deterministic given the seed") {
    ToyConfig toy;
    toy.n_samples = 6;
    Dataset data = make_toy_dataset(toy);
    auto run = [&]() {
        ModelConfig mc = toy_model_config(BlockVariant::FoBi, ClsPosition::Mid);
        ModelWeights<float> m = init_model<float>(mc, 9);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 3;
        cfg.seed = 9;
        cfg.mixup_alpha = 0.5f;
        cfg.specaug_freq = 4;
        cfg.specaug_time = 4;
        TrainResult r = train(m, data, cfg);
        std::vector<float> sig(m.head_w.data.begin(), m.head_w.data.end());
        for (auto& e : r.log) {
            sig.push_back(static_cast<float>(e.loss));
            sig.push_back(static_cast<float>(e.metric));
        }
        return sig;
    };
    CHECK(run() == run());
}

TEST_CASE("labels outside the head range are rejected") {
    ToyConfig toy;
    toy.n_samples = 2;
    Dataset data = make_toy_dataset(toy);
    data[0].labels = {5};
    ModelConfig mc = toy_model_config(BlockVariant::FoBi, ClsPosition::Mid);
    ModelWeights<float> m = init_model<float>(mc, 0);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    CHECK_THROWS_AS(train(m, data, cfg), ConfigError);
    CHECK_THROWS_AS(train(m, Dataset{}, cfg), ConfigError);
}
