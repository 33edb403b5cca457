#include "doctest.h"

#include <algorithm>
#include <map>
#include <set>

#include "ce/customize.hpp"
#include "ce/toy_data.hpp"

using namespace ce;

namespace {

DiffusionModel make_model(uint64_t seed = 1234) {
    return DiffusionModel(ModelConfig{}, Vocabulary::standard(), seed);
}

// conv_out is zero-initialized, which blocks gradients upstream of it until
// the first optimizer step. Tests that need gradients everywhere from step
// one randomize it first.
void wake_output_head(DiffusionModel& m, uint64_t seed = 9) {
    Rng rng(seed);
    m.unet.conv_out.w.mutable_val() = Tensor::randn(m.unet.conv_out.w.val().shape, rng, 0.05f);
}

CustomizationPolicy teapot_policy(PolicyKind kind) {
    CustomizationPolicy p;
    p.kind = kind;
    p.rare_slot = 0;
    p.modifier = "striped";
    p.class_noun = "teapot";
    return p;
}

ConceptSpec teapot_spec() {
    ConceptSpec s;
    s.class_noun = "teapot";
    s.modifier = "striped";
    s.color = "red";
    s.background = "gray";
    return s;
}

std::vector<Tensor> reference_fixture(int k = 3) {
    return generate_reference_set(teapot_spec(), k, 501);
}

std::vector<TrainExample> prior_fixture(const Vocabulary& vocab, int n = 4) {
    std::vector<TrainExample> out;
    for (const auto& ci : generate_prior_set("teapot", "striped", n, 733))
        out.push_back({image_to_latent(ci.image), tokenize(ci.caption, vocab)});
    return out;
}

std::map<std::string, Tensor> snapshot(const DiffusionModel& m) {
    std::map<std::string, Tensor> s;
    for (const auto& e : m.params.entries) s[e.name] = e.var.val();
    return s;
}

}  // namespace

TEST_CASE("select_trainable partitions the parameter store per policy") {
    DiffusionModel m = make_model();
    const size_t total = m.params.entries.size();

    auto check_partition = [&](const TrainableSelection& sel) {
        std::set<std::string> seen;
        for (const auto& n : sel.full) CHECK(seen.insert(n).second);
        for (const auto& n : sel.frozen) CHECK(seen.insert(n).second);
        if (!sel.row_tensor.empty()) CHECK(seen.insert(sel.row_tensor).second);
        CHECK(seen.size() == total);
        for (const auto& e : m.params.entries) CHECK(seen.count(e.name) == 1);
    };

    // custom_diffusion: exactly the cross-attention K/V tensors plus the V*
    // embedding row.
    TrainableSelection cd =
        select_trainable(m.params, teapot_policy(PolicyKind::custom_diffusion));
    check_partition(cd);
    std::set<std::string> cd_full(cd.full.begin(), cd.full.end());
    std::set<std::string> expect_kv = {"unet.attn1.wk", "unet.attn1.wv",
                                       "unet.attn3.wk", "unet.attn3.wv",
                                       "unet.attn5.wk", "unet.attn5.wv"};
    CHECK(cd_full == expect_kv);
    CHECK(cd.row_tensor == "text.token_embedding");
    CHECK(cd.row == Vocabulary::kRareBase);

    // textual_inversion: one embedding row, nothing else.
    CustomizationPolicy ti = teapot_policy(PolicyKind::textual_inversion);
    ti.rare_slot = 2;
    TrainableSelection ts = select_trainable(m.params, ti);
    check_partition(ts);
    CHECK(ts.full.empty());
    CHECK(ts.row_tensor == "text.token_embedding");
    CHECK(ts.row == Vocabulary::kRareBase + 2);

    // dreambooth: every U-Net group, text encoder fully frozen.
    TrainableSelection db =
        select_trainable(m.params, teapot_policy(PolicyKind::dreambooth));
    check_partition(db);
    CHECK(db.row_tensor.empty());
    std::set<std::string> db_full(db.full.begin(), db.full.end());
    for (const auto& e : m.params.entries) {
        bool is_text = e.group == groups::text_embedding_table ||
                       e.group == groups::text_encoder_body;
        CHECK(db_full.count(e.name) == (is_text ? 0u : 1u));
    }
    CHECK(std::find(db.frozen.begin(), db.frozen.end(), "text.token_embedding") !=
          db.frozen.end());

    // Out-of-range slot and forged policy values are rejected.
    CustomizationPolicy bad = teapot_policy(PolicyKind::custom_diffusion);
    bad.rare_slot = Vocabulary::kRareCount;
    CHECK_THROWS_AS(select_trainable(m.params, bad), std::invalid_argument);
    CustomizationPolicy forged = teapot_policy(static_cast<PolicyKind>(42));
    CHECK_THROWS_AS(select_trainable(m.params, forged), std::invalid_argument);
}

TEST_CASE("describe_selection is canonical and distinguishes policies") {
    DiffusionModel m = make_model();
    auto cd = describe_selection(
        select_trainable(m.params, teapot_policy(PolicyKind::custom_diffusion)));
    auto ti = describe_selection(
        select_trainable(m.params, teapot_policy(PolicyKind::textual_inversion)));
    auto db = describe_selection(
        select_trainable(m.params, teapot_policy(PolicyKind::dreambooth)));
    CHECK(cd != ti);
    CHECK(cd != db);
    CHECK(ti != db);
    CHECK(cd.find("full unet.attn1.wk\n") != std::string::npos);
    CHECK(cd.find("row text.token_embedding 4\n") != std::string::npos);
    // Lines are sorted, so the description is independent of store order.
    std::vector<std::string> lines;
    size_t pos = 0;
    while (pos < cd.size()) {
        size_t nl = cd.find('\n', pos);
        lines.push_back(cd.substr(pos, nl - pos));
        pos = nl + 1;
    }
    CHECK(std::is_sorted(lines.begin(), lines.end()));
}

TEST_CASE("augment_prompt draws uniformly from the documented templates") {
    CustomizationPolicy pol = teapot_policy(PolicyKind::custom_diffusion);
    const Vocabulary& vocab = Vocabulary::standard();
    const std::string phrase = "V1* striped teapot";
    CHECK(pol.concept_phrase() == phrase);

    std::set<std::string> expect_standard, expect_crop;
    for (const char* p : {"photo of a", "rendering of a", "illustration of a",
                          "depiction of a", "rendition of a"})
        expect_standard.insert(std::string(p) + " " + phrase);
    for (const char* p :
         {"zoomed in photo of a", "close up in photo of a", "cropped in photo of a"})
        expect_crop.insert(std::string(p) + " " + phrase);

    Rng rng(4242);
    std::map<std::string, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; i++) {
        std::string s = augment_prompt(pol, rng, false);
        CHECK(expect_standard.count(s) == 1);
        CHECK(s.find(phrase) != std::string::npos);
        counts[s]++;
    }
    // Every template present, each frequency within 1/5 +- 2% (counting oracle).
    CHECK(counts.size() == 5);
    for (const auto& [s, c] : counts) {
        INFO(s << " count " << c);
        CHECK(c > n / 5 - n / 50);
        CHECK(c < n / 5 + n / 50);
    }

    std::set<std::string> crop_seen;
    for (int i = 0; i < 300; i++) {
        std::string s = augment_prompt(pol, rng, true);
        CHECK(expect_crop.count(s) == 1);
        crop_seen.insert(s);
        // Every augmented prompt tokenizes with zero unknown tokens.
        TokenSequence seq = tokenize(s, vocab);
        CHECK(seq.length >= 2);
    }
    CHECK(crop_seen.size() == 3);

    // Without a modifier the phrase is "[rare] [class]" and still tokenizes.
    CustomizationPolicy no_mod = pol;
    no_mod.modifier.clear();
    no_mod.rare_slot = 1;
    std::string s = augment_prompt(no_mod, rng, false);
    CHECK(s.find("V2* teapot") != std::string::npos);
    CHECK(s.find("striped") == std::string::npos);
    tokenize(s, vocab);
}

TEST_CASE("random_crop_resize reproduces linear ramps at replayed offsets") {
    // A bilinear resample is exact on functions linear in x (or y), so the
    // output of cropping a coordinate ramp is known in closed form.
    const int C = 3, H = 32, W = 32;
    Tensor rx({C, H, W}), ry({C, H, W});
    for (int c = 0; c < C; c++)
        for (int y = 0; y < H; y++)
            for (int x = 0; x < W; x++) {
                rx.data[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<float>(x);
                ry.data[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<float>(y);
            }

    // Replay the documented draw order (x offset then y offset over the valid
    // corners; crop side = round(0.75 * 32) = 24).
    Rng replay(321);
    int ox = replay.uniform_int(0, 8);
    int oy = replay.uniform_int(0, 8);

    Rng rng(321);
    Tensor cx = random_crop_resize(rx, rng);
    CHECK(cx.shape == rx.shape);
    Rng rng2(321);
    Tensor cy = random_crop_resize(ry, rng2);

    double max_err = 0.0;
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            double ex = ox + static_cast<double>(x) * 23.0 / 31.0;
            double ey = oy + static_cast<double>(y) * 23.0 / 31.0;
            max_err = std::max(max_err,
                               std::abs(cx.data[static_cast<size_t>(y) * W + x] - ex));
            max_err = std::max(max_err,
                               std::abs(cy.data[static_cast<size_t>(y) * W + x] - ey));
        }
    CHECK(max_err < 1e-4);

    // Exactly two RNG draws are consumed.
    Rng a(321), b(321);
    random_crop_resize(rx, a);
    b.uniform_int(0, 8);
    b.uniform_int(0, 8);
    CHECK(a.uniform() == b.uniform());

    // Convexity: outputs stay within the input range; constants map to
    // themselves.
    Rng r3(77);
    Tensor img = Tensor::randn({3, 32, 32}, r3, 1.0f);
    float lo = *std::min_element(img.data.begin(), img.data.end());
    float hi = *std::max_element(img.data.begin(), img.data.end());
    Tensor out = random_crop_resize(img, r3);
    for (float v : out.data) {
        CHECK(v >= lo - 1e-5f);
        CHECK(v <= hi + 1e-5f);
    }
    Tensor flat({1, 8, 8});
    flat.fill(0.625f);
    Rng r4(5);
    Tensor fout = random_crop_resize(flat, r4);
    for (float v : fout.data) CHECK(v == doctest::Approx(0.625f).epsilon(1e-6));

    Rng r5(1);
    Tensor bad({4});
    CHECK_THROWS_AS(random_crop_resize(bad, r5), std::invalid_argument);
}

TEST_CASE("init_rare_row copies the class-noun row only for textual inversion") {
    DiffusionModel m = make_model(31);
    const Vocabulary& vocab = m.vocab;
    int noun = vocab.id("teapot");
    int d = m.cfg.d_text;

    CustomizationPolicy ti = teapot_policy(PolicyKind::textual_inversion);
    ti.rare_slot = 1;
    Tensor before = m.text.token_table.val();
    init_rare_row(m, ti);
    const Tensor& after = m.text.token_table.val();
    for (int j = 0; j < d; j++)
        CHECK(after.at(ti.rare_id(), j) == after.at(noun, j));
    // Every other row untouched bitwise.
    for (int r = 0; r < after.rows(); r++) {
        if (r == ti.rare_id()) continue;
        for (int j = 0; j < d; j++) CHECK(after.at(r, j) == before.at(r, j));
    }
    // The pretrained rare row was not already the class row by chance.
    bool differed = false;
    for (int j = 0; j < d; j++)
        differed = differed || before.at(ti.rare_id(), j) != before.at(noun, j);
    CHECK(differed);

    // custom_diffusion / dreambooth keep the table bitwise as is.
    DiffusionModel m2 = make_model(31);
    Tensor b2 = m2.text.token_table.val();
    init_rare_row(m2, teapot_policy(PolicyKind::custom_diffusion));
    CHECK(m2.text.token_table.val().max_abs_diff(b2) == 0.0f);
    init_rare_row(m2, teapot_policy(PolicyKind::dreambooth));
    CHECK(m2.text.token_table.val().max_abs_diff(b2) == 0.0f);
}

TEST_CASE("customization_loss composes the two terms as documented") {
    const Vocabulary& vocab = Vocabulary::standard();
    auto refs = reference_fixture(2);
    std::vector<TrainExample> ref_batch;
    CustomizationPolicy pol = teapot_policy(PolicyKind::custom_diffusion);
    for (size_t i = 0; i < refs.size(); i++)
        ref_batch.push_back({image_to_latent(refs[i]),
                             tokenize("photo of a " + pol.concept_phrase(), vocab)});
    auto prior_batch = prior_fixture(vocab, 2);

    const uint64_t ms = 88, rs = 1717;

    // Two-term recomputation oracle: a fresh model + rng replays the reference
    // term, then the prior term, off the same stream.
    DiffusionModel m1 = make_model(ms);
    wake_output_head(m1);
    Rng r1(rs);
    float combined =
        customization_loss(m1, ref_batch, prior_batch, 1.0f, r1).val().data[0];

    DiffusionModel m2 = make_model(ms);
    wake_output_head(m2);
    Rng r2(rs);
    float a = m2.training_loss(ref_batch, r2).val().data[0];
    float b = m2.training_loss(prior_batch, r2).val().data[0];
    CHECK(combined == doctest::Approx(a + b).epsilon(1e-6));

    // prior_weight = 0 skips the prior term entirely: bitwise equal to the
    // reference-only loss, and the rng stream advances identically.
    DiffusionModel m3 = make_model(ms);
    wake_output_head(m3);
    Rng r3(rs);
    float lam0 = customization_loss(m3, ref_batch, prior_batch, 0.0f, r3).val().data[0];
    CHECK(lam0 == a);
    DiffusionModel m3b = make_model(ms);
    wake_output_head(m3b);
    Rng r3b(rs);
    m3b.training_loss(ref_batch, r3b);
    CHECK(r3.uniform() == r3b.uniform());

    // Affine in lambda for fixed batches and stream.
    DiffusionModel m4 = make_model(ms);
    wake_output_head(m4);
    Rng r4(rs);
    float lam25 =
        customization_loss(m4, ref_batch, prior_batch, 2.5f, r4).val().data[0];
    CHECK(lam25 == doctest::Approx(a + 2.5f * b).epsilon(1e-5));

    // detach_prior keeps the value and the gradient of the reference term.
    DiffusionModel m5 = make_model(ms);
    wake_output_head(m5);
    Rng r5(rs);
    VarT<float> det =
        customization_loss(m5, ref_batch, prior_batch, 1.0f, r5, /*detach=*/true);
    CHECK(det.val().data[0] == doctest::Approx(a + b).epsilon(1e-6));
    m5.params.zero_grads();
    ag::backward(det);
    Tensor det_table_grad = m5.text.token_table.grad();

    DiffusionModel m6 = make_model(ms);
    wake_output_head(m6);
    Rng r6(rs);
    VarT<float> ref_only = m6.training_loss(ref_batch, r6);
    m6.params.zero_grads();
    ag::backward(ref_only);
    CHECK(det_table_grad.max_abs_diff(m6.text.token_table.grad()) == 0.0f);

    // Without detaching, the prior term adds gradient on its caption tokens
    // but contributes exactly nothing to the rare row (no rare token in prior
    // captions).
    DiffusionModel m7 = make_model(ms);
    wake_output_head(m7);
    Rng r7(rs);
    VarT<float> full =
        customization_loss(m7, ref_batch, prior_batch, 1.0f, r7, /*detach=*/false);
    m7.params.zero_grads();
    ag::backward(full);
    const Tensor& g7 = m7.text.token_table.grad();
    int d = m7.cfg.d_text;
    for (int j = 0; j < d; j++)
        CHECK(g7.at(pol.rare_id(), j) == det_table_grad.at(pol.rare_id(), j));
    CHECK(g7.max_abs_diff(det_table_grad) > 0.0f);

    DiffusionModel m8 = make_model(ms);
    Rng r8(rs);
    std::vector<TrainExample> empty;
    CHECK_THROWS_AS(customization_loss(m8, empty, prior_batch, 1.0f, r8),
                    std::invalid_argument);
    CHECK_THROWS_AS(customization_loss(m8, ref_batch, prior_batch, -0.5f, r8),
                    std::invalid_argument);
}

TEST_CASE("one customize step matches a manual replay of the documented draws") {
    auto refs = reference_fixture(3);
    CustomizationPolicy pol = teapot_policy(PolicyKind::custom_diffusion);
    CustomizationConfig cc;
    cc.steps = 1;
    cc.batch_size = 2;
    cc.lr = 1e-4;
    cc.seed = 77;

    DiffusionModel a = make_model(55);
    wake_output_head(a);
    auto prior = prior_fixture(a.vocab);
    CustomizationResult res = customize(a, refs, prior, pol, cc);
    REQUIRE(res.losses.size() == 1);

    // Manual replay on an identical model, written from the draw-order
    // contract in the header.
    DiffusionModel b = make_model(55);
    wake_output_head(b);
    TrainableSelection sel = select_trainable(b.params, pol);
    init_rare_row(b, pol);
    AdamT<float> opt;
    b.params.set_all_requires_grad(false);
    for (const auto& n : sel.full) {
        b.params.find(n).set_requires_grad(true);
        opt.add(b.params.find(n));
    }
    b.params.find(sel.row_tensor).set_requires_grad(true);
    opt.add(b.params.find(sel.row_tensor), {sel.row});

    Rng rng(derive_seed(cc.seed, "customize"));
    bool cropped = rng.uniform() < cc.crop_ratio;
    std::vector<TrainExample> ref_batch;
    for (int i = 0; i < cc.batch_size; i++) {
        size_t idx = static_cast<size_t>(rng.uniform_int(0, 2));
        std::string prompt = augment_prompt(pol, rng, cropped);
        Tensor img = refs[idx];
        if (cropped) img = random_crop_resize(img, rng);
        ref_batch.push_back({image_to_latent(img), tokenize(prompt, b.vocab)});
    }
    std::vector<TrainExample> prior_batch;
    for (int i = 0; i < cc.batch_size; i++)
        prior_batch.push_back(prior[static_cast<size_t>(rng.uniform_int(0, 3))]);
    b.params.zero_grads();
    VarT<float> loss = customization_loss(b, ref_batch, prior_batch, 1.0f, rng);
    ag::backward(loss);
    Tensor& g = b.params.find(sel.row_tensor).grad_buf();
    for (int r = 0; r < g.rows(); r++) {
        if (r == sel.row) continue;
        for (int c = 0; c < g.cols(); c++) g.at(r, c) = 0.0f;
    }
    opt.step(1e-4f);
    b.params.set_all_requires_grad(true);

    CHECK(static_cast<float>(res.losses[0]) == loss.val().data[0]);
    for (const auto& e : a.params.entries)
        CHECK(e.var.val().max_abs_diff(b.params.find(e.name).val()) == 0.0f);
}

TEST_CASE("freezing is bitwise and frozen gradients stay empty") {
    auto run = [&](PolicyKind kind) {
        CustomizationPolicy pol = teapot_policy(kind);
        CustomizationConfig cc = default_customization_config(kind);
        cc.steps = 3;
        cc.batch_size = 1;
        cc.seed = 99;
        DiffusionModel m = make_model(404);
        wake_output_head(m);
        auto refs = reference_fixture(2);
        auto prior = prior_fixture(m.vocab, 2);
        auto before = snapshot(m);
        CustomizationResult res = customize(m, refs, prior, pol, cc);
        REQUIRE(res.losses.size() == 3);

        std::set<std::string> full(res.selection.full.begin(), res.selection.full.end());
        for (const auto& e : m.params.entries) {
            const Tensor& now = e.var.val();
            const Tensor& was = before.at(e.name);
            INFO(policy_name(kind) << " " << e.name);
            if (full.count(e.name)) {
                CHECK(now.max_abs_diff(was) > 0.0f);
                CHECK_FALSE(e.var.grad().empty());
            } else if (e.name == res.selection.row_tensor) {
                bool row_changed = false;
                for (int j = 0; j < now.cols(); j++)
                    row_changed = row_changed ||
                                  now.at(res.selection.row, j) != was.at(res.selection.row, j);
                CHECK(row_changed);
                for (int r = 0; r < now.rows(); r++) {
                    if (r == res.selection.row) continue;
                    for (int j = 0; j < now.cols(); j++)
                        CHECK(now.at(r, j) == was.at(r, j));
                }
                // Gradient surgery: the last step's gradient is zero outside
                // the trained row.
                const Tensor& g = e.var.grad();
                REQUIRE_FALSE(g.empty());
                for (int r = 0; r < g.rows(); r++) {
                    if (r == res.selection.row) continue;
                    for (int j = 0; j < g.cols(); j++) CHECK(g.at(r, j) == 0.0f);
                }
            } else {
                // Frozen: bitwise identical and no gradient was ever built.
                CHECK(now.max_abs_diff(was) == 0.0f);
                CHECK(e.var.grad().empty());
            }
            // customize restores trainability afterwards.
            CHECK(e.var.requires_grad());
        }
    };
    run(PolicyKind::custom_diffusion);
    run(PolicyKind::textual_inversion);
    run(PolicyKind::dreambooth);
}

TEST_CASE("customize is deterministic in the seed") {
    CustomizationPolicy pol = teapot_policy(PolicyKind::custom_diffusion);
    CustomizationConfig cc;
    cc.steps = 3;
    cc.batch_size = 2;
    cc.lr = 1e-4;
    cc.seed = 11;

    auto run = [&](uint64_t seed) {
        DiffusionModel m = make_model(606);
        wake_output_head(m);
        auto refs = reference_fixture(2);
        auto prior = prior_fixture(m.vocab, 2);
        CustomizationConfig c2 = cc;
        c2.seed = seed;
        CustomizationResult r = customize(m, refs, prior, pol, c2);
        return std::make_pair(r.losses, snapshot(m));
    };
    auto [l1, p1] = run(11);
    auto [l2, p2] = run(11);
    auto [l3, p3] = run(12);
    CHECK(l1 == l2);
    bool params_eq = true;
    for (const auto& [n, t] : p1) params_eq = params_eq && t.max_abs_diff(p2.at(n)) == 0.0f;
    CHECK(params_eq);
    CHECK(l1 != l3);
}

TEST_CASE("a short dreambooth run decreases the training loss") {
    DiffusionModel m = make_model(2024);
    auto refs = reference_fixture(3);
    auto prior = prior_fixture(m.vocab, 4);
    CustomizationPolicy pol = teapot_policy(PolicyKind::dreambooth);
    CustomizationConfig cc;
    cc.steps = 40;
    cc.batch_size = 2;
    cc.lr = 1e-3;
    cc.seed = 7;
    CustomizationResult res = customize(m, refs, prior, pol, cc);
    double head = 0, tail = 0;
    for (int i = 0; i < 10; i++) {
        head += res.losses[static_cast<size_t>(i)];
        tail += res.losses[res.losses.size() - 10 + static_cast<size_t>(i)];
    }
    INFO("head " << head / 10 << " tail " << tail / 10);
    CHECK(tail < head);
}

TEST_CASE("customize validates its inputs") {
    DiffusionModel m = make_model();
    auto refs = reference_fixture(2);
    auto prior = prior_fixture(m.vocab, 2);
    CustomizationConfig cc;
    cc.steps = 1;

    CustomizationPolicy pol = teapot_policy(PolicyKind::custom_diffusion);
    std::vector<Tensor> no_refs;
    CHECK_THROWS_AS(customize(m, no_refs, prior, pol, cc), std::invalid_argument);

    CustomizationPolicy oov = pol;
    oov.class_noun = "zebra";
    CHECK_THROWS_AS(customize(m, refs, prior, oov, cc), std::invalid_argument);
    CustomizationPolicy oovm = pol;
    oovm.modifier = "sparkly";
    CHECK_THROWS_AS(customize(m, refs, prior, oovm, cc), std::invalid_argument);
    CustomizationPolicy slot = pol;
    slot.rare_slot = -1;
    CHECK_THROWS_AS(customize(m, refs, prior, slot, cc), std::invalid_argument);

    std::vector<Tensor> bad_shape = {Tensor::zeros({3, 16, 16})};
    CHECK_THROWS_AS(customize(m, bad_shape, prior, pol, cc), std::invalid_argument);

    CustomizationConfig bad_cfg = cc;
    bad_cfg.steps = 0;
    CHECK_THROWS_AS(customize(m, refs, prior, pol, bad_cfg), std::invalid_argument);
    bad_cfg = cc;
    bad_cfg.lr = 0.0;
    CHECK_THROWS_AS(customize(m, refs, prior, pol, bad_cfg), std::invalid_argument);
    bad_cfg = cc;
    bad_cfg.crop_ratio = 1.5;
    CHECK_THROWS_AS(customize(m, refs, prior, pol, bad_cfg), std::invalid_argument);
}
