#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "ce/eval.hpp"

using namespace ce;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() /
               ("ce_eval_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

const std::vector<CaptionedImage>& train_items() {
    static std::vector<CaptionedImage> items = generate_corpus(48, {}, 2024);
    return items;
}

const std::vector<CaptionedImage>& heldout_items() {
    static std::vector<CaptionedImage> items = generate_corpus(32, {}, 4077);
    return items;
}

DualEncoder& trained_encoder() {
    static DualEncoder enc = [] {
        DualEncoderConfig cfg;
        cfg.steps = 800;
        return train_dual_encoder(train_items(), cfg);
    }();
    return enc;
}

// Independent double-precision cosine for the scalar oracles.
double cos_oracle(const Tensor& a, const Tensor& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.data.size(); i++) {
        dot += static_cast<double>(a.data[i]) * b.data[i];
        na += static_cast<double>(a.data[i]) * a.data[i];
        nb += static_cast<double>(b.data[i]) * b.data[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Tensor probe_image(uint64_t seed = 7001) {
    ConceptSpec spec;
    spec.class_noun = "cup";
    spec.modifier = "dotted";
    spec.color = "blue";
    spec.background = "white";
    Rng rng(seed);
    return render(spec, rng);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

std::vector<std::string> csv_lines(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("cosine matches the double-precision oracle and clamps") {
    Tensor ex = Tensor::from({2}, {1.0f, 0.0f});
    Tensor ey = Tensor::from({2}, {0.0f, 1.0f});
    CHECK(cosine(ex, ey) == 0.0);
    CHECK(cosine(ex, ex) == 1.0);

    Rng rng(404);
    Tensor a = Tensor::randn({64}, rng, 1.0f);
    Tensor b = Tensor::randn({64}, rng, 1.0f);
    CHECK(cosine(a, b) == doctest::Approx(cos_oracle(a, b)).epsilon(1e-12));
    CHECK(cosine(a, b) >= -1.0);
    CHECK(cosine(a, b) <= 1.0);
    // Symmetry is exact (every accumulation is symmetric in the operands).
    CHECK(cosine(a, b) == cosine(b, a));
    // Invariance under positive scaling of either argument.
    Tensor a3 = a;
    for (auto& v : a3.data) v *= 3.0f;
    CHECK(cosine(a3, b) == doctest::Approx(cosine(a, b)).epsilon(1e-12));
    // Anti-parallel clamps to exactly -1.
    Tensor neg = a;
    for (auto& v : neg.data) v = -v;
    CHECK(cosine(a, neg) == -1.0);

    CHECK_THROWS_AS(cosine(a, ex), std::invalid_argument);
    CHECK_THROWS_AS(cosine(Tensor(), Tensor()), std::invalid_argument);
}

TEST_CASE("dual encoder embeddings are deterministic, finite, and shaped") {
    DualEncoder& enc = trained_encoder();
    Tensor img = probe_image();
    Tensor e1 = enc.embed_image(img);
    Tensor e2 = enc.embed_image(img);
    REQUIRE(e1.shape == std::vector<int>({64}));
    CHECK(e1.all_finite());
    CHECK(e1.max_abs_diff(e2) == 0.0f);

    Tensor t1 = enc.embed_text("photo of a dotted cup on white background");
    Tensor t2 = enc.embed_text("photo of a dotted cup on white background");
    REQUIRE(t1.shape == std::vector<int>({64}));
    CHECK(t1.all_finite());
    CHECK(t1.max_abs_diff(t2) == 0.0f);

    CHECK_THROWS_AS(enc.embed_text("photo of a zebra"), UnknownTokenError);
    Tensor bad({3, 16, 16});
    CHECK_THROWS_AS(enc.embed_image(bad), std::invalid_argument);
}

TEST_CASE("train_dual_encoder validates inputs and is seed-deterministic") {
    DualEncoderConfig cfg;
    cfg.steps = 3;
    std::vector<CaptionedImage> empty;
    CHECK_THROWS_AS(train_dual_encoder(empty, cfg), std::invalid_argument);

    DualEncoderConfig bad = cfg;
    bad.steps = 0;
    CHECK_THROWS_AS(train_dual_encoder(train_items(), bad), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 1;
    CHECK_THROWS_AS(train_dual_encoder(train_items(), bad), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 1000;  // larger than the corpus
    CHECK_THROWS_AS(train_dual_encoder(train_items(), bad), std::invalid_argument);
    bad = cfg;
    bad.lr = 0.0f;
    CHECK_THROWS_AS(train_dual_encoder(train_items(), bad), std::invalid_argument);
    bad = cfg;
    bad.d_embed = 0;
    CHECK_THROWS_AS(train_dual_encoder(train_items(), bad), std::invalid_argument);
    bad = cfg;
    bad.logit_scale = -1.0f;
    CHECK_THROWS_AS(train_dual_encoder(train_items(), bad), std::invalid_argument);

    cfg.steps = 30;
    std::vector<double> la, lb, lc;
    DualEncoder a = train_dual_encoder(train_items(), cfg, &la);
    DualEncoder b = train_dual_encoder(train_items(), cfg, &lb);
    DualEncoderConfig other = cfg;
    other.seed = 99;
    DualEncoder c = train_dual_encoder(train_items(), other, &lc);
    REQUIRE(la.size() == 30);
    CHECK(la == lb);
    CHECK(la != lc);
    Tensor img = probe_image();
    CHECK(a.embed_image(img).max_abs_diff(b.embed_image(img)) == 0.0f);
    CHECK(a.embed_image(img).max_abs_diff(c.embed_image(img)) > 0.0f);
    // Training losses decrease overall.
    CHECK(la.back() < la.front());
    // Frozen after training: every parameter stops requiring gradients.
    for (const auto& e : a.params.entries) CHECK_FALSE(e.var.requires_grad());
}

TEST_CASE("source similarity is a cosine of image embeddings") {
    DualEncoder& enc = trained_encoder();
    Tensor img = probe_image();
    CHECK(source_similarity(img, img, enc) == doctest::Approx(1.0).epsilon(1e-9));

    Tensor other = heldout_items()[0].image;
    double s = source_similarity(img, other, enc);
    CHECK(s == doctest::Approx(cos_oracle(enc.embed_image(img), enc.embed_image(other)))
                   .epsilon(1e-12));
    CHECK(s == source_similarity(other, img, enc));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
}

TEST_CASE("reference similarity is the mean of cosines") {
    DualEncoder& enc = trained_encoder();
    Tensor img = probe_image();
    std::vector<Tensor> refs = {heldout_items()[0].image, heldout_items()[1].image,
                                heldout_items()[2].image};

    double expect = 0;
    for (const auto& r : refs) expect += cos_oracle(enc.embed_image(img), enc.embed_image(r));
    expect /= 3.0;
    CHECK(reference_similarity(img, refs, enc) == doctest::Approx(expect).epsilon(1e-12));

    // Single identical reference.
    CHECK(reference_similarity(img, {img}, enc) == doctest::Approx(1.0).epsilon(1e-9));
    // Duplicating the set leaves the mean unchanged.
    std::vector<Tensor> doubled = {refs[0], refs[1], refs[2], refs[0], refs[1], refs[2]};
    CHECK(reference_similarity(img, doubled, enc) ==
          doctest::Approx(reference_similarity(img, refs, enc)).epsilon(1e-12));
    // Permutation invariance.
    std::vector<Tensor> shuffled = {refs[2], refs[0], refs[1]};
    CHECK(reference_similarity(img, shuffled, enc) ==
          doctest::Approx(reference_similarity(img, refs, enc)).epsilon(1e-12));

    CHECK_THROWS_AS(reference_similarity(img, {}, enc), std::invalid_argument);
}

TEST_CASE("text similarity strips rare tokens before embedding") {
    DualEncoder& enc = trained_encoder();
    Tensor img = probe_image();

    double direct = text_similarity(img, "photo of a dotted cup", enc);
    CHECK(direct == doctest::Approx(cos_oracle(
                        enc.embed_image(img),
                        enc.embed_text("photo of a dotted cup")))
                        .epsilon(1e-12));

    // V* tokens are ignored: same value as the stripped prompt, exactly.
    CHECK(text_similarity(img, "photo of a V1* dotted cup", enc) == direct);
    CHECK(text_similarity(img, "V2* photo of a dotted cup V1*", enc) == direct);
    // Stripping is idempotent.
    std::string stripped = strip_rare_tokens("photo of a V1* dotted cup",
                                             Vocabulary::standard());
    CHECK(text_similarity(img, stripped, enc) == direct);

    CHECK_THROWS_AS(text_similarity(img, "V1* V2*", enc), std::invalid_argument);
    CHECK_THROWS_AS(text_similarity(img, "photo of a zebra", enc), UnknownTokenError);
}

TEST_CASE("trained encoder retrieves held-out captions far above chance") {
    DualEncoder& enc = trained_encoder();
    const auto& held = heldout_items();
    double acc = retrieval_top1(enc, held);
    double chance = 1.0 / static_cast<double>(held.size());
    INFO("held-out top-1 retrieval " << acc << " (chance " << chance << ")");
    CHECK(acc > 10.0 * chance);

    // An untrained encoder sits near chance, far below the trained one.
    DualEncoderConfig cfg;
    DualEncoder raw(cfg, Vocabulary::standard(), 5150);
    double raw_acc = retrieval_top1(raw, held);
    INFO("untrained top-1 retrieval " << raw_acc);
    CHECK(acc > raw_acc + 0.3);

    // Matched pairs align better than mismatched ones after training.
    double diag = 0, off = 0;
    int n = 8, offn = 0;
    for (int i = 0; i < n; i++) {
        Tensor u = enc.embed_image(held[static_cast<size_t>(i)].image);
        for (int j = 0; j < n; j++) {
            Tensor v = enc.embed_text(held[static_cast<size_t>(j)].caption);
            if (i == j) diag += cosine(u, v);
            else { off += cosine(u, v); offn++; }
        }
    }
    diag /= n;
    off /= offn;
    INFO("mean matched cos " << diag << " vs mismatched " << off);
    CHECK(diag > off + 0.2);

    CHECK_THROWS_AS(retrieval_top1(enc, {}), std::invalid_argument);
}

TEST_CASE("dual encoder save/load round-trips bitwise") {
    TmpDir tmp;
    DualEncoder& enc = trained_encoder();
    save_dual_encoder(tmp.file("enc.bin"), enc);
    DualEncoder back = load_dual_encoder(tmp.file("enc.bin"));

    Tensor img = probe_image();
    CHECK(back.embed_image(img).max_abs_diff(enc.embed_image(img)) == 0.0f);
    CHECK(back.embed_text("photo of a plain teapot")
              .max_abs_diff(enc.embed_text("photo of a plain teapot")) == 0.0f);
    CHECK(back.cfg.d_embed == enc.cfg.d_embed);
    CHECK(back.cfg.logit_scale == enc.cfg.logit_scale);

    // A non-encoder checkpoint is rejected.
    ParamStoreT<float> junk;
    junk.create("x", "dual_encoder", Tensor::zeros({2, 2}));
    save_checkpoint(tmp.file("junk.bin"), junk, json{{"kind", "model"}});
    CHECK_THROWS_AS(load_dual_encoder(tmp.file("junk.bin")), IoError);
}

// ---------------------------------------------------------------------------
// Sweep protocol
// ---------------------------------------------------------------------------

namespace {

DiffusionModel& sweep_model() {
    static DiffusionModel model = [] {
        DiffusionModel m(ModelConfig{}, Vocabulary::standard(), 71);
        auto items = generate_corpus(24, {}, 909);
        std::vector<TrainExample> corpus;
        for (const auto& ci : items)
            corpus.push_back({image_to_latent(ci.image), tokenize(ci.caption, m.vocab)});
        pretrain_model(m, corpus, 200, 2, 1e-3f, 5);
        return m;
    }();
    return model;
}

SweepPair teapot_pair() {
    ConceptSpec spec;
    spec.class_noun = "teapot";
    spec.modifier = "plain";
    spec.color = "red";
    spec.background = "gray";
    Rng rng(derive_seed(33, "source"));
    SweepPair pair;
    pair.source_image = render(spec, rng);
    pair.source_prompt = "photo of a teapot on gray background";
    pair.target_prompt = "photo of a V1* striped teapot on gray background";
    return pair;
}

std::vector<Tensor> teapot_references() {
    ConceptSpec spec;
    spec.class_noun = "teapot";
    spec.modifier = "striped";
    spec.color = "red";
    spec.background = "gray";
    return generate_reference_set(spec, 2, 881);
}

SweepConfig quick_sweep_config() {
    SweepConfig cfg;
    cfg.steps = 12;
    cfg.nulltext_inner_steps = 4;
    return cfg;
}

}  // namespace

TEST_CASE("sweep_tradeoff emits the paper grid: 8 p2p + 12 sdedit points per pair") {
    DiffusionModel& m = sweep_model();
    DualEncoder& enc = trained_encoder();
    std::vector<TradeoffPoint> pts = sweep_tradeoff(
        m, "custom_diffusion", {teapot_pair()}, teapot_references(), enc,
        quick_sweep_config());
    REQUIRE(pts.size() == 20);

    std::set<std::pair<double, double>> p2p_grid;
    std::set<std::pair<double, int>> sd_grid;
    for (const auto& p : pts) {
        CHECK(p.policy == "custom_diffusion");
        CHECK(p.source_sim >= -1.0);
        CHECK(p.source_sim <= 1.0);
        CHECK(p.reference_sim >= -1.0);
        CHECK(p.reference_sim <= 1.0);
        CHECK(p.text_sim >= -1.0);
        CHECK(p.text_sim <= 1.0);
        if (p.method == "p2p") {
            p2p_grid.insert({p.self_strength, p.cross_strength});
            CHECK(p.seed == 0);
        } else {
            CHECK(p.method == "sdedit");
            CHECK(p.cross_strength == 0.0);
            sd_grid.insert({p.self_strength, static_cast<int>(p.seed)});
        }
    }
    std::set<std::pair<double, double>> want_p2p;
    for (double a : {0.2, 0.4, 0.6, 0.8})
        for (double c : {0.2, 0.6}) want_p2p.insert({a, c});
    CHECK(p2p_grid == want_p2p);
    std::set<std::pair<double, int>> want_sd;
    for (double s : {0.5, 0.6, 0.7, 0.8})
        for (int k : {0, 1, 2}) want_sd.insert({s, k});
    CHECK(sd_grid == want_sd);
}

TEST_CASE("sweep reruns are byte-identical and CSVs follow the schema") {
    DiffusionModel& m = sweep_model();
    DualEncoder& enc = trained_encoder();
    auto pts1 = sweep_tradeoff(m, "textual_inversion", {teapot_pair()},
                               teapot_references(), enc, quick_sweep_config());
    auto pts2 = sweep_tradeoff(m, "textual_inversion", {teapot_pair()},
                               teapot_references(), enc, quick_sweep_config());
    std::string csv1 = tradeoff_csv(pts1), csv2 = tradeoff_csv(pts2);
    std::string cur1 = curve_csv(pts1), cur2 = curve_csv(pts2);
    CHECK(csv1 == csv2);
    CHECK(cur1 == cur2);

    auto lines = csv_lines(csv1);
    REQUIRE(lines.size() == 21);  // header + 20 points
    CHECK(lines[0] ==
          "method,policy,self_strength,cross_strength,seed,source_sim,reference_sim,text_sim");
    for (size_t i = 1; i < lines.size(); i++)
        CHECK(split_csv_line(lines[i]).size() == 8);

    auto clines = csv_lines(cur1);
    REQUIRE(clines.size() == 9);  // header + 4 p2p strengths + 4 sdedit strengths
    CHECK(clines[0] == "method,policy,strength,mean_source_sim,mean_reference_sim");

    // Aggregation oracle: the curve rows are the per-(method,strength) means.
    std::map<std::pair<std::string, double>, std::pair<double, double>> sums;
    std::map<std::pair<std::string, double>, int> counts;
    for (const auto& p : pts1) {
        auto key = std::make_pair(p.method, p.self_strength);
        sums[key].first += p.source_sim;
        sums[key].second += p.reference_sim;
        counts[key]++;
    }
    CHECK(counts[{"p2p", 0.2}] == 2);
    CHECK(counts[{"sdedit", 0.5}] == 3);
    for (size_t i = 1; i < clines.size(); i++) {
        auto cells = split_csv_line(clines[i]);
        REQUIRE(cells.size() == 5);
        auto key = std::make_pair(cells[0], std::stod(cells[2]));
        REQUIRE(counts.count(key));
        double mean_src = sums[key].first / counts[key];
        double mean_ref = sums[key].second / counts[key];
        CHECK(std::stod(cells[3]) == doctest::Approx(mean_src).epsilon(1e-6));
        CHECK(std::stod(cells[4]) == doctest::Approx(mean_ref).epsilon(1e-6));
        CHECK(cells[1] == "textual_inversion");
    }

    // Rows are ordered: all p2p strengths ascending, then sdedit ascending.
    CHECK(split_csv_line(clines[1])[0] == "p2p");
    CHECK(split_csv_line(clines[8])[0] == "sdedit");
    double prev = -1;
    for (int i = 1; i <= 4; i++) {
        double s = std::stod(split_csv_line(clines[static_cast<size_t>(i)])[2]);
        CHECK(s > prev);
        prev = s;
    }
}

TEST_CASE("sweep_tradeoff validates its inputs") {
    DiffusionModel& m = sweep_model();
    DualEncoder& enc = trained_encoder();
    SweepConfig cfg = quick_sweep_config();

    CHECK_THROWS_AS(sweep_tradeoff(m, "p", {}, teapot_references(), enc, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(sweep_tradeoff(m, "p", {teapot_pair()}, {}, enc, cfg),
                    std::invalid_argument);
    SweepConfig bad = cfg;
    bad.p2p_self = {1.5};
    CHECK_THROWS_AS(sweep_tradeoff(m, "p", {teapot_pair()}, teapot_references(), enc, bad),
                    std::invalid_argument);
    bad = cfg;
    bad.sdedit_strengths = {-0.1};
    CHECK_THROWS_AS(sweep_tradeoff(m, "p", {teapot_pair()}, teapot_references(), enc, bad),
                    std::invalid_argument);
    bad = cfg;
    bad.sdedit_seeds = 0;
    CHECK_THROWS_AS(sweep_tradeoff(m, "p", {teapot_pair()}, teapot_references(), enc, bad),
                    std::invalid_argument);
    bad = cfg;
    bad.steps = 0;
    CHECK_THROWS_AS(sweep_tradeoff(m, "p", {teapot_pair()}, teapot_references(), enc, bad),
                    std::invalid_argument);
}
