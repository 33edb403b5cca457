#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "ce/editing.hpp"
#include "ce/io.hpp"
#include "ce/toy_data.hpp"

namespace ce {

// Quantitative harness: a small contrastive image/text dual encoder standing
// in for CLIP, the three similarity metrics built on it, and the
// strength-sweep trade-off protocol with its CSV outputs.

// ---------------------------------------------------------------------------
// Dual encoder
// ---------------------------------------------------------------------------

struct DualEncoderConfig {
    int d_embed = 64;
    int steps = 2000;
    int batch_size = 8;
    float lr = 1e-3f;
    float logit_scale = 10.0f;  // fixed temperature, not learned
    uint64_t seed = 0;
};

// Image tower: three stride-2 convolutions to (64, 4, 4), global average
// pool, linear projection. Text tower: token embedding table, mean pool over
// the real tokens, linear projection. Both towers live in one parameter store
// under the dual_encoder group and are frozen once training finishes.
template <class S>
struct DualEncoderT {
    DualEncoderConfig cfg;
    Vocabulary vocab;
    ParamStoreT<S> params;
    Conv2dT<S> conv1, conv2, conv3;
    LinearT<S> img_proj;
    VarT<S> token_table;
    LinearT<S> txt_proj;

    static constexpr int kImageSize = 32;
    static constexpr int kTowerCh = 64;

    DualEncoderT(const DualEncoderConfig& cfg_, Vocabulary vocab_, uint64_t init_seed)
        : cfg(cfg_), vocab(std::move(vocab_)) {
        check_arg(cfg.d_embed >= 1, "dual encoder: d_embed must be positive");
        Rng rng(derive_seed(init_seed, "dual_encoder_init"));
        conv1 = Conv2dT<S>(params, "dual.img.conv1", groups::dual_encoder, 3, 16, 3, 2, 1, rng);
        conv2 = Conv2dT<S>(params, "dual.img.conv2", groups::dual_encoder, 16, 32, 3, 2, 1, rng);
        conv3 = Conv2dT<S>(params, "dual.img.conv3", groups::dual_encoder, 32, kTowerCh, 3, 2, 1, rng);
        img_proj = LinearT<S>(params, "dual.img.proj", groups::dual_encoder, kTowerCh,
                              cfg.d_embed, rng);
        token_table = params.create(
            "dual.txt.table", groups::dual_encoder,
            init_normal<S>({vocab.size(), cfg.d_embed}, rng, cfg.d_embed));
        txt_proj = LinearT<S>(params, "dual.txt.proj", groups::dual_encoder, cfg.d_embed,
                              cfg.d_embed, rng);
    }

    // Taped (1, d) embedding of one image.
    VarT<S> embed_image_var(const TensorT<S>& img) {
        check_arg(img.ndim() == 3 && img.shape[0] == 3 && img.shape[1] == kImageSize &&
                      img.shape[2] == kImageSize,
                  "dual encoder: expected a 3x32x32 image");
        VarT<S> x = VarT<S>::constant(img);
        x = ag::silu(conv1.forward(x));  // (16, 16, 16)
        x = ag::silu(conv2.forward(x));  // (32, 8, 8)
        x = ag::silu(conv3.forward(x));  // (64, 4, 4)
        int hw = x.val().shape[1] * x.val().shape[2];
        VarT<S> flat = ag::reshape(x, {kTowerCh, hw});
        TensorT<S> pool({hw, 1});
        pool.fill(S(1) / static_cast<S>(hw));
        VarT<S> pooled =
            ag::transpose2d(ag::matmul(flat, VarT<S>::constant(std::move(pool))));
        return img_proj.forward(pooled);  // (1, d)
    }

    // Taped (1, d) embedding of one token sequence (mean over real tokens).
    VarT<S> embed_text_var(const TokenSequence& seq) {
        VarT<S> emb = ag::embedding_gather(token_table, seq.ids);  // (max_len, d)
        TensorT<S> sel({1, TokenSequence::kMaxLen});
        for (int j = 0; j < seq.length; j++)
            sel.at(0, j) = S(1) / static_cast<S>(seq.length);
        VarT<S> pooled = ag::matmul(VarT<S>::constant(std::move(sel)), emb);
        return txt_proj.forward(pooled);  // (1, d)
    }

    // Value-only flat embeddings for evaluation.
    TensorT<S> embed_image(const TensorT<S>& img) {
        NoGradGuard ng;
        return embed_image_var(img).val().reshaped({cfg.d_embed});
    }

    TensorT<S> embed_text(const TokenSequence& seq) {
        NoGradGuard ng;
        return embed_text_var(seq).val().reshaped({cfg.d_embed});
    }

    TensorT<S> embed_text(const std::string& text) {
        return embed_text(tokenize(text, vocab));
    }
};

using DualEncoder = DualEncoderT<float>;

// Cosine similarity in double precision, clamped to [-1, 1] so float rounding
// can never push a similarity outside its invariant range.
template <class S>
double cosine(const TensorT<S>& a, const TensorT<S>& b) {
    check_arg(!a.empty() && a.same_shape(b), "cosine: want same-shaped non-empty tensors");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.data.size(); i++) {
        double x = static_cast<double>(a.data[i]), y = static_cast<double>(b.data[i]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    // Exactly (anti-)parallel inputs must give exactly +/-1 even when the
    // rounded quotient falls a few ulps short of the clamp.
    if (dot * dot >= na * nb) return dot > 0.0 ? 1.0 : -1.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// Symmetric InfoNCE training over (image, caption) batches.
//
// RNG draw order per optimization step (after derive_seed(seed,
// "dual_encoder_train")): batch indices by partial Fisher-Yates — for slot
// j = 0..batch_size-1 one uniform_int(0, n-1-j) draw — so indices within a
// batch are distinct. No other draws occur during training.
inline DualEncoder train_dual_encoder(const std::vector<CaptionedImage>& corpus,
                                      const DualEncoderConfig& cfg,
                                      std::vector<double>* losses = nullptr,
                                      bool quiet = true) {
    using S = float;
    check_arg(!corpus.empty(), "train_dual_encoder: empty corpus");
    check_arg(cfg.d_embed >= 1, "train_dual_encoder: d_embed must be positive");
    check_arg(cfg.steps >= 1, "train_dual_encoder: steps must be positive");
    check_arg(cfg.batch_size >= 2, "train_dual_encoder: batch_size must be at least 2");
    check_arg(cfg.batch_size <= static_cast<int>(corpus.size()),
              "train_dual_encoder: batch_size exceeds the corpus");
    check_arg(cfg.lr > 0, "train_dual_encoder: lr must be positive");
    check_arg(cfg.logit_scale > 0, "train_dual_encoder: logit_scale must be positive");

    DualEncoderT<S> enc(cfg, Vocabulary::standard(), cfg.seed);
    std::vector<TokenSequence> seqs;
    seqs.reserve(corpus.size());
    std::vector<TensorT<S>> images;
    images.reserve(corpus.size());
    for (const auto& item : corpus) {
        seqs.push_back(tokenize(item.caption, enc.vocab));
        images.push_back(item.image.template cast<S>());
    }

    Rng rng(derive_seed(cfg.seed, "dual_encoder_train"));
    AdamT<S> opt;
    for (auto& e : enc.params.entries) opt.add(e.var);
    const int B = cfg.batch_size;
    const int n = static_cast<int>(corpus.size());
    std::vector<int> targets(static_cast<size_t>(B));
    std::iota(targets.begin(), targets.end(), 0);

    for (int step = 0; step < cfg.steps; step++) {
        std::vector<int> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        for (int j = 0; j < B; j++)
            std::swap(idx[static_cast<size_t>(j)],
                      idx[static_cast<size_t>(j + rng.uniform_int(0, n - 1 - j))]);

        // Stack the per-example (1, d) embeddings into (B, d) via one-hot
        // outer products (keeps everything on the existing op set).
        VarT<S> U, V;
        for (int j = 0; j < B; j++) {
            int i = idx[static_cast<size_t>(j)];
            TensorT<S> e({B, 1});
            e.at(j, 0) = S(1);
            VarT<S> onehot = VarT<S>::constant(std::move(e));
            VarT<S> u = ag::matmul(onehot, enc.embed_image_var(images[static_cast<size_t>(i)]));
            VarT<S> v = ag::matmul(onehot, enc.embed_text_var(seqs[static_cast<size_t>(i)]));
            U = U.defined() ? U + u : u;
            V = V.defined() ? V + v : v;
        }
        VarT<S> logits = ag::scale(
            ag::matmul(ag::l2_normalize_rows(U), ag::l2_normalize_rows(V), false, true),
            static_cast<S>(cfg.logit_scale));
        VarT<S> loss = ag::scale(ag::cross_entropy_rows(logits, targets) +
                                     ag::cross_entropy_rows(ag::transpose2d(logits), targets),
                                 S(0.5));
        enc.params.zero_grads();
        ag::backward(loss);
        opt.step(static_cast<S>(cfg.lr));
        if (losses) losses->push_back(static_cast<double>(loss.val().data[0]));
        if (!quiet && (step % 100 == 0 || step + 1 == cfg.steps))
            std::fprintf(stderr, "dual encoder step %d/%d loss %.4f\n", step + 1,
                         cfg.steps, static_cast<double>(loss.val().data[0]));
    }
    enc.params.set_all_requires_grad(false);  // frozen after training
    return enc;
}

// Fraction of items whose image retrieves its own caption (top-1 by cosine)
// among the item set. Ties and duplicate captions resolve by caption string,
// not index, so a duplicated caption cannot count as a miss.
template <class S>
double retrieval_top1(DualEncoderT<S>& enc, const std::vector<CaptionedImage>& items) {
    check_arg(!items.empty(), "retrieval_top1: empty item set");
    std::vector<TensorT<S>> txt;
    txt.reserve(items.size());
    for (const auto& it : items) txt.push_back(enc.embed_text(it.caption));
    int correct = 0;
    for (size_t i = 0; i < items.size(); i++) {
        TensorT<S> u = enc.embed_image(items[i].image.template cast<S>());
        size_t best = 0;
        double best_sim = -2.0;
        for (size_t j = 0; j < items.size(); j++) {
            double s = cosine(u, txt[j]);
            if (s > best_sim) {
                best_sim = s;
                best = j;
            }
        }
        if (items[best].caption == items[i].caption) correct++;
    }
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

// ---------------------------------------------------------------------------
// Similarity metrics
// ---------------------------------------------------------------------------

template <class S>
double source_similarity(const TensorT<S>& edited, const TensorT<S>& source,
                         DualEncoderT<S>& enc) {
    return cosine(enc.embed_image(edited), enc.embed_image(source));
}

// Mean over references of cosine(f(edited), f(ref_i)).
template <class S>
double reference_similarity(const TensorT<S>& edited,
                            const std::vector<TensorT<S>>& references,
                            DualEncoderT<S>& enc) {
    check_arg(!references.empty(), "reference_similarity: empty reference set");
    TensorT<S> e = enc.embed_image(edited);
    double acc = 0;
    for (const auto& r : references) acc += cosine(e, enc.embed_image(r));
    return acc / static_cast<double>(references.size());
}

// Cosine between the edited image and the target text with every rare token
// (V1*..V8*) removed. A prompt that is nothing but rare tokens is an error.
template <class S>
double text_similarity(const TensorT<S>& edited, const std::string& target_prompt,
                       DualEncoderT<S>& enc) {
    std::string stripped = strip_rare_tokens(target_prompt, enc.vocab);
    return cosine(enc.embed_image(edited), enc.embed_text(stripped));
}

// ---------------------------------------------------------------------------
// Dual-encoder persistence (float)
// ---------------------------------------------------------------------------

inline void save_dual_encoder(const std::string& path, const DualEncoderT<float>& enc) {
    json meta;
    meta["kind"] = "dual_encoder";
    meta["d_embed"] = enc.cfg.d_embed;
    meta["logit_scale"] = enc.cfg.logit_scale;
    meta["vocab_size"] = enc.vocab.size();
    save_checkpoint(path, enc.params, meta);
}

inline DualEncoderT<float> load_dual_encoder(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (!ck.meta.contains("kind") || ck.meta["kind"] != "dual_encoder")
        throw IoError("not a dual-encoder checkpoint: " + path);
    DualEncoderConfig cfg;
    cfg.d_embed = ck.meta.at("d_embed").get<int>();
    cfg.logit_scale = ck.meta.at("logit_scale").get<float>();
    DualEncoderT<float> enc(cfg, Vocabulary::standard(), 0);
    if (ck.meta.at("vocab_size").get<int>() != enc.vocab.size())
        throw IoError("dual-encoder checkpoint has a different vocabulary size");
    fill_params(enc.params, ck);
    enc.params.set_all_requires_grad(false);
    return enc;
}

// ---------------------------------------------------------------------------
// Strength-sweep trade-off protocol
// ---------------------------------------------------------------------------

struct TradeoffPoint {
    std::string method;  // "p2p" | "sdedit"
    std::string policy;
    double self_strength = 0.0;
    double cross_strength = 0.0;  // 0 for sdedit rows
    uint64_t seed = 0;            // sample index for sdedit, 0 for p2p
    double source_sim = 0.0;
    double reference_sim = 0.0;
    double text_sim = 0.0;
};

struct SweepPair {
    Tensor source_image;
    std::string source_prompt;
    std::string target_prompt;
};

struct SweepConfig {
    std::vector<double> p2p_self = {0.2, 0.4, 0.6, 0.8};
    std::vector<double> p2p_cross = {0.2, 0.6};
    std::vector<double> sdedit_strengths = {0.5, 0.6, 0.7, 0.8};
    int sdedit_seeds = 3;
    EditOp op = EditOp::refine;
    double guidance = 7.5;
    int steps = 50;
    int nulltext_inner_steps = 10;
    float nulltext_lr = 1e-2f;
    uint64_t seed = 0;
};

// Full grid for one customized model: per source pair, every (self, cross)
// P2P point and every (strength, sample) SDEdit point, scored against the
// source image, the reference set, and the V*-stripped target prompt. The
// inversion trajectory and null-text schedule are computed once per pair and
// shared across the P2P points. SDEdit sample s of pair p runs with seed
// derive_seed(cfg.seed, "sweep_sdedit_<p>_<s>"). Deterministic end to end.
inline std::vector<TradeoffPoint> sweep_tradeoff(
    DiffusionModel& model, const std::string& policy,
    const std::vector<SweepPair>& pairs, const std::vector<Tensor>& references,
    DualEncoderT<float>& enc, const SweepConfig& cfg, bool quiet = true) {
    check_arg(!pairs.empty(), "sweep_tradeoff: no source pairs");
    check_arg(!references.empty(), "sweep_tradeoff: no reference images");
    check_arg(!cfg.p2p_self.empty() && !cfg.p2p_cross.empty() &&
                  !cfg.sdedit_strengths.empty(),
              "sweep_tradeoff: empty strength grid");
    check_arg(cfg.sdedit_seeds >= 1, "sweep_tradeoff: need at least one sdedit sample");
    check_arg(cfg.steps >= 1, "sweep_tradeoff: steps must be positive");
    auto in_unit = [](const std::vector<double>& v) {
        for (double s : v)
            if (s < 0.0 || s > 1.0) return false;
        return true;
    };
    check_arg(in_unit(cfg.p2p_self) && in_unit(cfg.p2p_cross) &&
                  in_unit(cfg.sdedit_strengths),
              "sweep_tradeoff: strengths must lie in [0, 1]");

    std::vector<TradeoffPoint> points;
    for (size_t pi = 0; pi < pairs.size(); pi++) {
        const SweepPair& pair = pairs[pi];
        Trajectory traj = ddim_invert(model, pair.source_image, pair.source_prompt,
                                      cfg.steps);
        NullTextResult nt =
            null_text_invert(model, traj, static_cast<float>(cfg.guidance),
                             cfg.nulltext_inner_steps, cfg.nulltext_lr);

        auto emit = [&](const char* method, double self_s, double cross_s,
                        uint64_t sample, const Tensor& image) {
            TradeoffPoint p;
            p.method = method;
            p.policy = policy;
            p.self_strength = self_s;
            p.cross_strength = cross_s;
            p.seed = sample;
            p.source_sim = source_similarity(image, pair.source_image, enc);
            p.reference_sim = reference_similarity(image, references, enc);
            p.text_sim = text_similarity(image, pair.target_prompt, enc);
            points.push_back(std::move(p));
        };

        for (double ss : cfg.p2p_self)
            for (double cs : cfg.p2p_cross) {
                EditSpec es;
                es.source_prompt = pair.source_prompt;
                es.target_prompt = pair.target_prompt;
                es.op = cfg.op;
                es.self_strength = ss;
                es.cross_strength = cs;
                es.guidance = cfg.guidance;
                es.steps = cfg.steps;
                EditResult r = p2p_edit(model, traj, nt.schedule, es);
                emit("p2p", ss, cs, 0, r.image);
            }
        for (double st : cfg.sdedit_strengths)
            for (int s = 0; s < cfg.sdedit_seeds; s++) {
                uint64_t run_seed = derive_seed(
                    cfg.seed, "sweep_sdedit_" + std::to_string(pi) + "_" +
                                  std::to_string(s));
                EditResult r = sdedit_edit(model, pair.source_image,
                                           pair.target_prompt, st, run_seed,
                                           static_cast<float>(cfg.guidance), cfg.steps);
                emit("sdedit", st, 0.0, static_cast<uint64_t>(s), r.image);
            }
        if (!quiet)
            std::fprintf(stderr, "sweep: pair %zu/%zu done (%zu points)\n", pi + 1,
                         pairs.size(), points.size());
    }
    return points;
}

// Raw per-point CSV. Strengths print with %g (so 0.2 stays "0.2"),
// similarities with six decimals; output bytes are a pure function of the
// points.
inline std::string tradeoff_csv(const std::vector<TradeoffPoint>& points) {
    std::string out =
        "method,policy,self_strength,cross_strength,seed,source_sim,reference_sim,text_sim\n";
    char buf[320];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%g,%g,%llu,%.6f,%.6f,%.6f\n",
                      p.method.c_str(), p.policy.c_str(), p.self_strength,
                      p.cross_strength, static_cast<unsigned long long>(p.seed),
                      p.source_sim, p.reference_sim, p.text_sim);
        out += buf;
    }
    return out;
}

// Curve summary: mean source/reference similarity per (method, policy,
// strength), where a point's strength is its self_strength (P2P points
// average over the cross strengths, SDEdit points over their samples). Rows
// come out sorted by (method, policy, strength).
inline std::string curve_csv(const std::vector<TradeoffPoint>& points) {
    std::map<std::tuple<std::string, std::string, double>, std::array<double, 3>> agg;
    for (const auto& p : points) {
        auto& a = agg[{p.method, p.policy, p.self_strength}];
        a[0] += p.source_sim;
        a[1] += p.reference_sim;
        a[2] += 1.0;
    }
    std::string out = "method,policy,strength,mean_source_sim,mean_reference_sim\n";
    char buf[256];
    for (const auto& [key, a] : agg) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%g,%.6f,%.6f\n",
                      std::get<0>(key).c_str(), std::get<1>(key).c_str(),
                      std::get<2>(key), a[0] / a[2], a[1] / a[2]);
        out += buf;
    }
    return out;
}

}  // namespace ce
