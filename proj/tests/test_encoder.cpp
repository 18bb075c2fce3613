#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "aum/encoder.hpp"
#include "aum/fdcheck.hpp"

using namespace aum;

namespace {

ModelConfig tiny_config(BlockVariant v, ClsPosition p) {
    ModelConfig c;
    c.embed_dim = 8;
    c.depth = 2;
    c.state_dim = 16;
    c.patch = 16;
    c.n_mels = 32;
    c.target_frames = 32;
    c.num_classes = 2;
    c.variant = v;
    c.cls_position = p;
    return c;
}

Spectrogram random_spec(std::size_t F, std::size_t T, std::uint32_t seed) {
    std::mt19937 rng(seed);
    Spectrogram s;
    s.n_mels = F;
    s.frames = T;
    s.values = Array<float>({F, T});
    fill_normal(s.values, rng, 0.f, 1.f);
    return s;
}

}  // namespace

TEST_CASE("cls token index per position") {
    CHECK(ModelConfig::cls_index_for(ClsPosition::Head, 512) == 0);
    CHECK(ModelConfig::cls_index_for(ClsPosition::Mid, 512) == 256);
    CHECK(ModelConfig::cls_index_for(ClsPosition::End, 512) == 512);
    ModelConfig full = aum_small();
    CHECK(full.num_patches() == 512);
    CHECK(full.num_tokens() == 513);
    full.cls_position = ClsPosition::Mid;
    CHECK(full.cls_index() == 256);
}

TEST_CASE("insert_cls_token grows the sequence and lands where asked") {
    Tape<double> t;
    Array<double> emb({4, 3});
    for (std::size_t i = 0; i < 12; ++i) emb[i] = double(i);
    Array<double> cls({3});
    cls[0] = -1.0; cls[1] = -2.0; cls[2] = -3.0;
    auto ts = insert_cls_token(t.leaf(emb), t.leaf(cls), ClsPosition::Mid);
    CHECK(ts.cls_index == 2);
    REQUIRE(ts.tokens.v().rows() == 5);
    CHECK(ts.tokens.v().at2(2, 0) == -1.0);
    CHECK(ts.tokens.v().at2(1, 0) == 3.0);   // old row 1 stays put
    CHECK(ts.tokens.v().at2(3, 0) == 6.0);   // old row 2 shifted down
    auto head = insert_cls_token(t.leaf(emb), t.leaf(cls), ClsPosition::Head);
    CHECK(head.cls_index == 0);
    auto tail = insert_cls_token(t.leaf(emb), t.leaf(cls), ClsPosition::End);
    CHECK(tail.cls_index == 4);
    CHECK(tail.tokens.v().at2(4, 2) == -3.0);
}

TEST_CASE("block with a zero output projection is the identity") {
    ModelConfig cfg = tiny_config(BlockVariant::FoBi, ClsPosition::Mid);
    std::mt19937 rng(4);
    AumBlockWeights<double> b = init_block<double>(cfg, rng);
    for (auto& v : b.w_out.data) v = 0.0;
    for (auto& v : b.b_out.data) v = 0.0;
    Tape<double> t;
    Array<double> x({5, cfg.embed_dim});
    fill_normal(x, rng, 0.0, 1.0);
    Val<double> out = block_forward(t.leaf(x), bind(t, b, false), cfg.variant);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out.v()[i] == doctest::Approx(x[i]));
}

TEST_CASE("FoFo information flows strictly forward, FoBi/BiBi both ways") {
    std::mt19937 rng(21);
    std::size_t L = 7, probe = 3;
    Array<double> x({L, 8});
    fill_normal(x, rng, 0.0, 1.0);
    for (BlockVariant variant : {BlockVariant::FoFo, BlockVariant::FoBi, BlockVariant::BiBi}) {
        ModelConfig cfg = tiny_config(variant, ClsPosition::Mid);
        std::mt19937 wrng(17);
        AumBlockWeights<double> b = init_block<double>(cfg, wrng);
        Tape<double> t;
        Val<double> in = t.leaf(x, true);
        Val<double> out = block_forward(in, bind(t, b, false), variant);
        t.backward(sum_all(select_row(out, probe)));
        bool later_nonzero = false;
        for (std::size_t s = probe + 1; s < L; ++s)
            for (std::size_t d = 0; d < 8; ++d) {
                if (variant == BlockVariant::FoFo)
                    CHECK(in.g().at2(s, d) == 0.0);
                else
                    later_nonzero = later_nonzero || in.g().at2(s, d) != 0.0;
            }
        if (variant != BlockVariant::FoFo) CHECK(later_nonzero);
        // earlier tokens always reachable through the forward scan
        bool earlier_nonzero = false;
        for (std::size_t s = 0; s < probe; ++s)
            for (std::size_t d = 0; d < 8; ++d)
                earlier_nonzero = earlier_nonzero || in.g().at2(s, d) != 0.0;
        CHECK(earlier_nonzero);
    }
}

TEST_CASE("FoBi block equals the hand-composed two-scan formula") {
    ModelConfig cfg = tiny_config(BlockVariant::FoBi, ClsPosition::Mid);
    std::mt19937 rng(8);
    AumBlockWeights<double> b = init_block<double>(cfg, rng);
    Array<double> x({6, cfg.embed_dim});
    fill_normal(x, rng, 0.0, 1.0);

    Tape<double> t;
    BlockVals<double> w = bind(t, b, false);
    Val<double> got = block_forward(t.leaf(x), w, BlockVariant::FoBi);

    // independent composition out of the public primitives
    Val<double> xn = layer_norm(t.leaf(x), w.ln_gamma, w.ln_beta);
    Val<double> u = silu(depthwise_conv1d(linear(xn, w.w_main, w.b_main), w.conv_fwd));
    Val<double> merged = add(ssm_branch(u, w.ssm_fwd, ScanDirection::Forward),
                             ssm_branch(u, w.ssm_bwd, ScanDirection::Backward));
    Val<double> want = add(t.leaf(x), linear(mul(merged, silu(linear(xn, w.w_gate, w.b_gate))),
                                             w.w_out, w.b_out));
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(got.v()[i] == doctest::Approx(want.v()[i]).epsilon(1e-12));
}

TEST_CASE("variant and parameter shape must agree") {
    std::mt19937 rng(2);
    Tape<double> t;
    Array<double> x({4, 8});
    AumBlockWeights<double> fofo =
        init_block<double>(tiny_config(BlockVariant::FoFo, ClsPosition::Head), rng);
    AumBlockWeights<double> fobi =
        init_block<double>(tiny_config(BlockVariant::FoBi, ClsPosition::Head), rng);
    AumBlockWeights<double> bibi =
        init_block<double>(tiny_config(BlockVariant::BiBi, ClsPosition::Head), rng);
    CHECK_THROWS_AS(block_forward(t.leaf(x), bind(t, fobi, false), BlockVariant::FoFo),
                    ConfigError);
    CHECK_THROWS_AS(block_forward(t.leaf(x), bind(t, fofo, false), BlockVariant::FoBi),
                    ConfigError);
    CHECK_THROWS_AS(block_forward(t.leaf(x), bind(t, fobi, false), BlockVariant::BiBi),
                    ConfigError);
    CHECK_THROWS_AS(block_forward(t.leaf(x), bind(t, bibi, false), BlockVariant::FoBi),
                    ConfigError);
}

TEST_CASE("encoder applies every block then a final norm") {
    ModelConfig cfg = tiny_config(BlockVariant::FoBi, ClsPosition::Mid);
    ModelWeights<double> m = init_model<double>(cfg, 3);
    Tape<double> t;
    ModelVals<double> v = bind(t, m, false);
    Array<double> x({cfg.num_patches(), cfg.embed_dim});
    std::mt19937 rng(6);
    fill_normal(x, rng, 0.0, 1.0);
    TokenSequence<double> ts = insert_cls_token(t.leaf(x), v.cls, cfg.cls_position);
    ts = add_positional(ts, v.pos);
    TokenSequence<double> enc =
        encoder_forward(ts, v.blocks, cfg.variant, v.final_gamma, v.final_beta);
    // manual composition
    Val<double> h = add(insert_row(t.leaf(x), v.cls, cfg.cls_index()), v.pos);
    for (auto& bl : v.blocks) h = block_forward(h, bl, cfg.variant);
    h = layer_norm(h, v.final_gamma, v.final_beta);
    for (std::size_t i = 0; i < h.v().numel(); ++i)
        CHECK(enc.tokens.v()[i] == doctest::Approx(h.v()[i]).epsilon(1e-12));
    CHECK_THROWS_AS(encoder_forward(ts, {}, cfg.variant, v.final_gamma, v.final_beta),
                    ConfigError);
}

TEST_CASE("classify reads exactly the cls row") {
    Tape<double> t;
    Array<double> tok({3, 2});
    for (std::size_t i = 0; i < 6; ++i) tok[i] = double(i);
    Array<double> hw({2, 2}), hb({2});
    hw.at2(0, 0) = 1.0; hw.at2(1, 1) = 1.0;
    hb[0] = 0.5;
    TokenSequence<double> ts{t.leaf(tok), 1};
    Val<double> logits = classify(ts, t.leaf(hw), t.leaf(hb));
    CHECK(logits.v()[0] == doctest::Approx(2.5));  // tok[1,0] + 0.5
    CHECK(logits.v()[1] == doctest::Approx(3.0));  // tok[1,1]
}

TEST_CASE("model_forward is deterministic and patch-permutation sensitive") {
    ModelConfig cfg = tiny_config(BlockVariant::FoBi, ClsPosition::Mid);
    ModelWeights<float> m = init_model<float>(cfg, 11);
    Spectrogram s = random_spec(32, 32, 13);
    auto logits = [&](const Spectrogram& spec) {
        Tape<float> t;
        ModelVals<float> v = bind(t, m, false);
        return model_forward(t, spec, v, cfg).v().data;
    };
    CHECK(logits(s) == logits(s));
    // swap the two time-halves: different patch content must move the logits
    Spectrogram swapped = s;
    for (std::size_t f = 0; f < 32; ++f)
        for (std::size_t c = 0; c < 16; ++c)
            std::swap(swapped.values.at2(f, c), swapped.values.at2(f, c + 16));
    CHECK(logits(s) != logits(swapped));
    Spectrogram wrong = random_spec(32, 48, 1);
    Tape<float> t;
    ModelVals<float> v = bind(t, m, false);
    CHECK_THROWS_AS(model_forward(t, wrong, v, cfg), ShapeError);
}

TEST_CASE("parameter registry and bound values stay aligned") {
    for (BlockVariant variant : {BlockVariant::FoFo, BlockVariant::FoBi, BlockVariant::BiBi}) {
        ModelConfig cfg = tiny_config(variant, ClsPosition::Mid);
        ModelWeights<float> m = init_model<float>(cfg, 5);
        auto refs = model_params(m);
        Tape<float> t;
        ModelVals<float> v = bind(t, m);
        auto vals = model_param_vals(v);
        REQUIRE(refs.size() == vals.size());
        for (std::size_t i = 0; i < refs.size(); ++i) {
            REQUIRE(refs[i].array->numel() == vals[i].v().numel());
            CHECK(refs[i].array->data == vals[i].v().data);
        }
    }
}

TEST_CASE("whole-model gradients match finite differences for every variant") {
    for (BlockVariant variant : {BlockVariant::FoFo, BlockVariant::FoBi, BlockVariant::BiBi}) {
        ModelConfig cfg = tiny_config(variant, ClsPosition::Mid);
        cfg.depth = 1;
        cfg.state_dim = 4;
        ModelWeights<double> m = init_model<double>(cfg, 7);
        Spectrogram s = random_spec(32, 32, 7);
        auto eval = [&]() {
            Tape<double> t;
            ModelVals<double> v = bind(t, m, true);
            Val<double> logits = model_forward(t, s, v, cfg);
            return sum_all(mul(logits, logits)).v()[0];
        };
        Tape<double> t;
        ModelVals<double> v = bind(t, m, true);
        Val<double> logits = model_forward(t, s, v, cfg);
        t.backward(sum_all(mul(logits, logits)));
        auto refs = model_params(m);
        auto vals = model_param_vals(v);
        std::vector<Array<double>> grads;
        for (auto& val : vals) grads.push_back(val.g());
        std::vector<FdParam> fps;
        for (std::size_t i = 0; i < refs.size(); ++i)
            fps.push_back({refs[i].name, refs[i].array, &grads[i]});
        FdReport rep = finite_difference_check(eval, fps, 1e-5);
        INFO(to_string(variant) << ": " << rep.describe());
        CHECK(rep.ok(1e-3));
    }
}
