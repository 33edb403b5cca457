#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ce/io.hpp"
#include "ce/model.hpp"

namespace ce {

// Real-image editing stack: deterministic DDIM inversion, null-text inversion
// (per-step optimization of the unconditional embedding so the guided path
// tracks the inversion trajectory), the dual-trajectory attention-injection
// controller with refine/swap operators and word-level local masks, and
// SDEdit. Everything here is deterministic given its inputs; no operation
// draws randomness except sdedit_edit, which derives its noise from the seed
// it is given.

// ---------------------------------------------------------------------------
// Trajectories and null-text schedules
// ---------------------------------------------------------------------------

template <class S>
struct TrajectoryT {
    // latents[k] sits at inference_timesteps(steps, T)[k]: latents[0] is the
    // terminal noise estimate, latents[steps] the encoded source latent.
    std::vector<TensorT<S>> latents;
    std::string prompt;
    int steps = 0;
};

template <class S>
struct NullTextScheduleT {
    std::vector<TensorT<S>> uncond;  // (max_len, d_text), one per inference step
    double guidance = 1.0;
    int steps = 0;
};

// Fixed-point refinements per inversion interval. The sampler retraces an
// interval [t_lo -> t_hi] using eps at the t_hi latent; each refinement
// re-estimates eps at the provisional t_hi latent, converging geometrically
// to exactly that value. Two iterations put the 50-step round trip above
// 55 dB; the unrefined recursion plateaus near 31 dB regardless of training.
inline constexpr int kInversionRefineIters = 2;

// Deterministic DDIM inversion of a source image at guidance scale 1: walks
// the inference timesteps from clean to noisy, applying the exact algebraic
// inverse of the DDIM update. Per interval the noise is estimated with the
// destination (higher) timestep embedding — the same timestep the sampler
// will use when it retraces this interval downward — and refined at the
// provisional destination latent.
template <class S>
TrajectoryT<S> ddim_invert(DiffusionModelT<S>& model, const TensorT<S>& image,
                           const std::string& prompt, int steps = 50) {
    check_arg(image.shape == model.cfg.image_shape(), "ddim_invert: image shape");
    std::vector<int> ts = inference_timesteps(steps, model.cfg.T);
    TrajectoryT<S> traj;
    traj.prompt = prompt;
    traj.steps = steps;
    traj.latents.assign(static_cast<size_t>(steps) + 1, TensorT<S>());
    TensorT<S> z = image_to_latent(image);
    traj.latents[static_cast<size_t>(steps)] = z;
    TensorT<S> ctx = model.encode_text(prompt);
    for (int k = steps; k >= 1; k--) {
        int t_lo = ts[static_cast<size_t>(k)], t_hi = ts[static_cast<size_t>(k - 1)];
        TensorT<S> eps = model.predict_noise(z, t_hi, ctx);
        TensorT<S> z_hi = ddim_invert_step(z, eps, t_lo, t_hi, model.schedule);
        for (int r = 0; r < kInversionRefineIters; r++) {
            eps = model.predict_noise(z_hi, t_hi, ctx);
            z_hi = ddim_invert_step(z, eps, t_lo, t_hi, model.schedule);
        }
        z = std::move(z_hi);
        traj.latents[static_cast<size_t>(k - 1)] = z;
    }
    return traj;
}

// Guided DDIM sampling from z with a per-step unconditional embedding
// (uncond[k] pairs with the k-th inference step). The reconstruction path of
// null-text inversion, and the no-injection baseline of the edit controller.
template <class S>
TensorT<S> sample_with_uncond_schedule(DiffusionModelT<S>& model, TensorT<S> z,
                                       const TensorT<S>& ctx_cond,
                                       const std::vector<TensorT<S>>& uncond,
                                       S guidance, int steps) {
    check_arg(static_cast<int>(uncond.size()) == steps,
              "sample_with_uncond_schedule: one uncond embedding per step");
    std::vector<int> ts = inference_timesteps(steps, model.cfg.T);
    for (int k = 0; k < steps; k++) {
        TensorT<S> eps =
            model.guided_eps(z, ts[static_cast<size_t>(k)], ctx_cond,
                             uncond[static_cast<size_t>(k)], guidance);
        z = ddim_step(z, eps, ts[static_cast<size_t>(k)], ts[static_cast<size_t>(k + 1)],
                      model.schedule);
    }
    return z;
}

// `steps` copies of the encoded [NULL] prompt: the fixed unconditional
// schedule that null-text inversion improves on.
template <class S>
std::vector<TensorT<S>> fixed_null_schedule(DiffusionModelT<S>& model, int steps) {
    return std::vector<TensorT<S>>(static_cast<size_t>(steps),
                                   model.encode_text(null_prompt()));
}

// Mean squared latent error of reconstructing the trajectory's source by
// guided sampling from its terminal latent under the given uncond schedule.
template <class S>
double reconstruction_mse(DiffusionModelT<S>& model, const TrajectoryT<S>& traj,
                          const std::vector<TensorT<S>>& uncond, S guidance) {
    TensorT<S> ctx = model.encode_text(traj.prompt);
    TensorT<S> z = sample_with_uncond_schedule(model, traj.latents[0], ctx, uncond,
                                               guidance, traj.steps);
    const TensorT<S>& src = traj.latents[static_cast<size_t>(traj.steps)];
    double acc = 0.0;
    for (size_t i = 0; i < z.data.size(); i++) {
        double d = static_cast<double>(z.data[i]) - static_cast<double>(src.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(z.data.size());
}

inline constexpr double kNullTextEarlyStop = 1e-5;

template <class S>
struct NullTextResultT {
    NullTextScheduleT<S> schedule;
    // Per-step tracking errors: the kept (best-iterate) error, and the error
    // of the fixed [NULL] embedding at the same latent. By construction
    // final_errors[k] <= null_errors[k].
    std::vector<double> final_errors;
    std::vector<double> null_errors;
};

// Null-text inversion: for each inference step, from noisiest to cleanest,
// optimizes the unconditional embedding so the classifier-free-guided DDIM
// update tracks the inversion trajectory, then advances with the optimized
// embedding. The conditional noise estimate is computed once per step. The
// inner optimizer is Adam over the embedding alone (all model parameters are
// frozen at the tape level for the duration); candidates are the warm-started
// initialization, the fixed [NULL] embedding, and every Adam iterate, and the
// best (lowest-error) candidate is kept — so the kept error can never exceed
// the fixed-null error at the same latent. Early stop once the best error
// drops below kNullTextEarlyStop. Deterministic; no randomness anywhere.
template <class S>
NullTextResultT<S> null_text_invert(DiffusionModelT<S>& model,
                                    const TrajectoryT<S>& traj,
                                    S guidance = S(7.5), int inner_steps = 10,
                                    S lr = S(1e-2)) {
    check_arg(traj.steps >= 1 &&
                  traj.latents.size() == static_cast<size_t>(traj.steps) + 1,
              "null_text_invert: malformed trajectory");
    check_arg(guidance >= S(1), "null_text_invert: guidance must be >= 1");
    check_arg(inner_steps >= 1, "null_text_invert: inner_steps must be >= 1");
    check_arg(lr > S(0), "null_text_invert: lr must be positive");

    std::vector<int> ts = inference_timesteps(traj.steps, model.cfg.T);
    TensorT<S> ctx_c = model.encode_text(traj.prompt);
    TensorT<S> null_emb = model.encode_text(null_prompt());

    model.params.set_all_requires_grad(false);
    RequiresGradRestoreT<S> restore{&model.params};

    NullTextResultT<S> res;
    res.schedule.guidance = static_cast<double>(guidance);
    res.schedule.steps = traj.steps;
    TensorT<S> z = traj.latents[0];
    TensorT<S> warm = null_emb;

    for (int k = 0; k < traj.steps; k++) {
        int t = ts[static_cast<size_t>(k)], t_next = ts[static_cast<size_t>(k + 1)];
        const TensorT<S>& target = traj.latents[static_cast<size_t>(k + 1)];
        TensorT<S> eps_c = model.predict_noise(z, t, ctx_c);
        DdimCoeffs c = ddim_coeffs(t, t_next, model.schedule);
        S a = static_cast<S>(c.a), b = static_cast<S>(c.b);

        // err(emb) = mean squared tracking error of the guided update.
        auto evaluate = [&](const TensorT<S>& emb, TensorT<S>* eps_u_out) {
            TensorT<S> eps_u = model.predict_noise(z, t, emb);
            TensorT<S> guided = cfg_combine(eps_u, eps_c, guidance);
            double acc = 0.0;
            for (size_t i = 0; i < guided.data.size(); i++) {
                double zh = static_cast<double>(a) * z.data[i] +
                            static_cast<double>(b) * guided.data[i];
                double d = zh - static_cast<double>(target.data[i]);
                acc += d * d;
            }
            double err = acc / static_cast<double>(guided.data.size());
            if (!std::isfinite(err))
                throw NumericalError("null_text_invert: non-finite tracking error at step " +
                                     std::to_string(k));
            if (eps_u_out) *eps_u_out = std::move(eps_u);
            return err;
        };

        TensorT<S> best_emb = null_emb, best_eps_u;
        double best_err = evaluate(null_emb, &best_eps_u);
        res.null_errors.push_back(best_err);
        if (warm.max_abs_diff(null_emb) != S(0)) {
            TensorT<S> eps_w;
            double ew = evaluate(warm, &eps_w);
            if (ew < best_err) {
                best_err = ew;
                best_emb = warm;
                best_eps_u = std::move(eps_w);
            }
        }

        VarT<S> emb = VarT<S>::leaf(warm, /*requires_grad=*/true);
        AdamT<S> opt;
        opt.add(emb);
        for (int it = 0; it < inner_steps && best_err >= kNullTextEarlyStop; it++) {
            emb.zero_grad();
            VarT<S> eps_u = model.unet.forward(VarT<S>::constant(z), t, emb, nullptr);
            // Guided estimate on the tape: eps_u (1 - s) + eps_c s.
            TensorT<S> sc = eps_c;
            for (auto& v : sc.data) v *= guidance;
            VarT<S> guided =
                ag::scale(eps_u, S(1) - guidance) + VarT<S>::constant(std::move(sc));
            TensorT<S> az = z;
            for (auto& v : az.data) v *= a;
            VarT<S> z_hat = ag::scale(guided, b) + VarT<S>::constant(std::move(az));
            VarT<S> loss = ag::mse_to(z_hat, target);
            if (!std::isfinite(static_cast<double>(loss.val().data[0])))
                throw NumericalError(
                    "null_text_invert: non-finite loss at step " + std::to_string(k));
            ag::backward(loss);
            opt.step(lr);
            TensorT<S> eps_cand;
            double err = evaluate(emb.val(), &eps_cand);
            if (err < best_err) {
                best_err = err;
                best_emb = emb.val();
                best_eps_u = std::move(eps_cand);
            }
        }

        res.final_errors.push_back(best_err);
        res.schedule.uncond.push_back(best_emb);
        warm = best_emb;
        TensorT<S> guided = cfg_combine(best_eps_u, eps_c, guidance);
        z = ddim_step(z, guided, t, t_next, model.schedule);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Prompt alignment and the attention Edit() operator
// ---------------------------------------------------------------------------

enum class EditOp { refine, swap };

inline const char* edit_op_name(EditOp op) {
    switch (op) {
        case EditOp::refine: return "refine";
        case EditOp::swap: return "swap";
    }
    throw std::invalid_argument("edit_op_name: unknown operator");
}

inline EditOp edit_op_from_name(const std::string& name) {
    if (name == "refine") return EditOp::refine;
    if (name == "swap") return EditOp::swap;
    throw std::invalid_argument("unknown edit operator: " + name);
}

// Partial injective map from target token positions to source positions.
struct AlignmentMap {
    // target_to_source[i] = source position for target position i, or -1 for
    // a new token.
    std::array<int, TokenSequence::kMaxLen> target_to_source{};

    bool is_identity() const {
        for (int i = 0; i < TokenSequence::kMaxLen; i++)
            if (target_to_source[static_cast<size_t>(i)] != i) return false;
        return true;
    }
};

// Greedy left-to-right matching of identical token ids: each target position
// takes the earliest not-yet-matched source position with the same id.
// Injective by construction; matches may cross (non-monotone).
inline AlignmentMap align_prompts(const TokenSequence& src, const TokenSequence& tgt) {
    AlignmentMap a;
    a.target_to_source.fill(-1);
    std::array<bool, TokenSequence::kMaxLen> used{};
    for (int i = 0; i < TokenSequence::kMaxLen; i++) {
        for (int j = 0; j < TokenSequence::kMaxLen; j++) {
            if (!used[static_cast<size_t>(j)] &&
                src.ids[static_cast<size_t>(j)] == tgt.ids[static_cast<size_t>(i)]) {
                a.target_to_source[static_cast<size_t>(i)] = j;
                used[static_cast<size_t>(j)] = true;
                break;
            }
        }
    }
    return a;
}

// The controller's Edit() on one attention-map pair. Self-attention injection
// replaces the whole map with the source map. Cross-attention: refine
// substitutes the mapped target columns from the source (new-token columns
// keep the edit branch's own attention); swap copies positionally, which the
// caller only requests for equal-length prompts.
template <class S>
TensorT<S> edit_attention(const TensorT<S>& m_src, const TensorT<S>& m_edit,
                          AttnKind kind, EditOp op, const AlignmentMap& align) {
    check_arg(m_src.same_shape(m_edit), "edit_attention: map shape mismatch");
    if (kind == AttnKind::self_attn) return m_src;
    check_arg(m_src.shape.size() == 2 && m_src.cols() == TokenSequence::kMaxLen,
              "edit_attention: cross map must have one column per token slot");
    if (op == EditOp::swap) return m_src;
    TensorT<S> out = m_edit;
    for (int i = 0; i < m_edit.cols(); i++) {
        int j = align.target_to_source[static_cast<size_t>(i)];
        if (j < 0) continue;
        check_arg(j < m_src.cols(), "edit_attention: alignment index out of range");
        for (int q = 0; q < m_edit.rows(); q++) out.at(q, i) = m_src.at(q, j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Word masks
// ---------------------------------------------------------------------------

enum class MaskPolicy { source_only, union_masks };

inline const char* mask_policy_name(MaskPolicy p) {
    switch (p) {
        case MaskPolicy::source_only: return "source_only";
        case MaskPolicy::union_masks: return "union";
    }
    throw std::invalid_argument("mask_policy_name: unknown policy");
}

inline MaskPolicy mask_policy_from_name(const std::string& name) {
    if (name == "source_only") return MaskPolicy::source_only;
    if (name == "union") return MaskPolicy::union_masks;
    throw std::invalid_argument("unknown mask policy: " + name);
}

// Running accumulator of one branch's cross-attention at the mask layer.
template <class S>
struct WordMaskTraceT {
    TokenSequence seq;  // the branch's prompt
    TensorT<S> sum;     // (queries, kMaxLen)
    int steps_accumulated = 0;

    void add(const TensorT<S>& probs) {
        check_arg(probs.shape.size() == 2 && probs.cols() == TokenSequence::kMaxLen,
                  "word-mask trace: want a cross-attention map");
        if (sum.empty()) {
            sum = probs;
        } else {
            check_arg(sum.same_shape(probs), "word-mask trace: map shape changed");
            sum.add_(probs);
        }
        steps_accumulated++;
    }
};

// Binary word mask: average the word's cross-attention columns over the steps
// accumulated so far, max-normalize to [0, 1], threshold (>=), and upsample
// nearest to out_size x out_size. A uniform map or threshold 0 yields the
// full mask.
template <class S>
TensorT<S> compute_word_mask(const WordMaskTraceT<S>& trace, const std::string& word,
                             const Vocabulary& vocab, double threshold,
                             int out_size) {
    check_arg(trace.steps_accumulated > 0, "compute_word_mask: empty trace");
    check_arg(threshold >= 0.0 && threshold <= 1.0,
              "compute_word_mask: threshold outside [0, 1]");
    check_arg(vocab.contains(word), "compute_word_mask: word not in vocabulary");
    int id = vocab.id(word);
    std::vector<int> positions;
    for (int j = 0; j < trace.seq.length; j++)
        if (trace.seq.ids[static_cast<size_t>(j)] == id) positions.push_back(j);
    check_arg(!positions.empty(), "compute_word_mask: word not in the traced prompt");

    int q = trace.sum.rows();
    int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(q))));
    check_arg(side * side == q, "compute_word_mask: non-square query grid");
    check_arg(out_size >= side && out_size % side == 0,
              "compute_word_mask: out_size must be a multiple of the map side");

    std::vector<double> avg(static_cast<size_t>(q), 0.0);
    for (int qq = 0; qq < q; qq++) {
        double s = 0.0;
        for (int j : positions) s += static_cast<double>(trace.sum.at(qq, j));
        avg[static_cast<size_t>(qq)] =
            s / (static_cast<double>(trace.steps_accumulated) *
                 static_cast<double>(positions.size()));
    }
    double mx = 0.0;
    for (double v : avg) mx = std::max(mx, v);
    if (mx > 0.0)
        for (double& v : avg) v /= mx;

    TensorT<S> mask({out_size, out_size});
    int f = out_size / side;
    for (int y = 0; y < out_size; y++)
        for (int x = 0; x < out_size; x++)
            mask.at(y, x) =
                avg[static_cast<size_t>((y / f) * side + x / f)] >= threshold ? S(1)
                                                                              : S(0);
    return mask;
}

// ---------------------------------------------------------------------------
// The dual-trajectory edit controller
// ---------------------------------------------------------------------------

struct EditSpec {
    std::string source_prompt;
    std::string target_prompt;
    EditOp op = EditOp::refine;
    double self_strength = 0.4;
    double cross_strength = 0.6;
    std::string mask_word;  // empty: no local blending
    double mask_threshold = 0.3;
    MaskPolicy mask_policy = MaskPolicy::source_only;
    double guidance = 7.5;
    int steps = 50;
    uint64_t seed = 0;  // consumed by SDEdit only; the controller is seed-free
};

// Number of injected prefix steps at a given strength. Tolerates the binary
// representation of decimal strengths (0.2 * 50 must give 10, not 11).
inline int injection_steps(double strength, int steps) {
    return static_cast<int>(std::ceil(strength * steps - 1e-9));
}

template <class S>
struct EditResultT {
    TensorT<S> image;   // (3, H, W), clamped to [-1, 1]
    TensorT<S> latent;  // final edited latent
    TensorT<S> mask;    // word mask used at the last step (empty when unused)
};

// Prompt-to-prompt editing over two synchronized trajectories from the
// inverted terminal latent. The source branch samples its own prompt with the
// null-text schedule and records every attention map (both guidance passes);
// the edit branch samples the target prompt and, inside the per-kind
// injection windows (the first ceil(strength * steps) steps), has its maps
// replaced through edit_attention. With a mask word set, the edited latent is
// blended with the source latent after every step: mask cells keep the edit,
// the rest stay source. Deterministic given (traj, nulltext, spec).
template <class S>
EditResultT<S> p2p_edit(DiffusionModelT<S>& model, const TrajectoryT<S>& traj,
                        const NullTextScheduleT<S>& nulltext, const EditSpec& spec) {
    check_arg(spec.steps >= 1, "p2p_edit: steps must be positive");
    check_arg(traj.steps == spec.steps &&
                  traj.latents.size() == static_cast<size_t>(spec.steps) + 1,
              "p2p_edit: trajectory does not match the spec's step count");
    check_arg(traj.prompt == spec.source_prompt,
              "p2p_edit: trajectory was inverted for a different prompt");
    check_arg(nulltext.steps == spec.steps &&
                  nulltext.uncond.size() == static_cast<size_t>(spec.steps),
              "p2p_edit: null-text schedule does not match the spec's step count");
    check_arg(nulltext.guidance == spec.guidance,
              "p2p_edit: null-text schedule was built for a different guidance");
    check_arg(spec.self_strength >= 0.0 && spec.self_strength <= 1.0,
              "p2p_edit: self_strength outside [0, 1]");
    check_arg(spec.cross_strength >= 0.0 && spec.cross_strength <= 1.0,
              "p2p_edit: cross_strength outside [0, 1]");

    TokenSequence seq_src = tokenize(spec.source_prompt, model.vocab);
    TokenSequence seq_tgt = tokenize(spec.target_prompt, model.vocab);
    if (spec.op == EditOp::swap)
        check_arg(seq_src.length == seq_tgt.length,
                  "p2p_edit: swap needs equal-length prompts");
    AlignmentMap align = align_prompts(seq_src, seq_tgt);

    const bool want_mask = !spec.mask_word.empty();
    const bool union_mask = want_mask && spec.mask_policy == MaskPolicy::union_masks;
    if (want_mask) {
        check_arg(model.vocab.contains(spec.mask_word),
                  "p2p_edit: mask word not in vocabulary");
        int wid = model.vocab.id(spec.mask_word);
        auto occurs = [&](const TokenSequence& s) {
            for (int j = 0; j < s.length; j++)
                if (s.ids[static_cast<size_t>(j)] == wid) return true;
            return false;
        };
        check_arg(occurs(seq_src), "p2p_edit: mask word not in the source prompt");
        if (union_mask)
            check_arg(occurs(seq_tgt), "p2p_edit: mask word not in the target prompt");
    }

    const S guidance = static_cast<S>(spec.guidance);
    TensorT<S> ctx_src = model.encode_text(seq_src);
    TensorT<S> ctx_tgt = model.encode_text(seq_tgt);
    std::vector<int> ts = inference_timesteps(spec.steps, model.cfg.T);
    const int n_self = injection_steps(spec.self_strength, spec.steps);
    const int n_cross = injection_steps(spec.cross_strength, spec.steps);
    const int latent_size = model.cfg.latent_size;

    using MapSet = std::array<TensorT<S>, UNetT<S>::kNumAttnLayers>;
    TensorT<S> z_src = traj.latents[0];
    TensorT<S> z_edit = traj.latents[0];
    WordMaskTraceT<S> trace_src{seq_src, {}, 0};
    WordMaskTraceT<S> trace_tgt{seq_tgt, {}, 0};
    TensorT<S> mask;

    for (int k = 0; k < spec.steps; k++) {
        int t = ts[static_cast<size_t>(k)], t_next = ts[static_cast<size_t>(k + 1)];

        MapSet src_cond, src_unc;
        AttnHooksT<S> rec_c, rec_u;
        rec_c.observe = [&src_cond](const TensorT<S>& p, const AttnSite& s) {
            src_cond[static_cast<size_t>(s.layer_id)] = p;
        };
        rec_u.observe = [&src_unc](const TensorT<S>& p, const AttnSite& s) {
            src_unc[static_cast<size_t>(s.layer_id)] = p;
        };
        TensorT<S> eps_src = model.guided_eps(z_src, t, ctx_src,
                                              nulltext.uncond[static_cast<size_t>(k)],
                                              guidance, &rec_c, &rec_u);
        if (want_mask) trace_src.add(src_cond[UNetT<S>::kMaskLayer]);

        const bool inj_self = k < n_self;
        const bool inj_cross = k < n_cross;
        MapSet edit_cond;
        AttnHooksT<S> ih_c, ih_u;
        auto injector = [&, inj_self, inj_cross](const MapSet* src) {
            return [&, src, inj_self, inj_cross](const TensorT<S>& computed,
                                                 const AttnSite& site) -> TensorT<S> {
                bool active =
                    site.kind == AttnKind::self_attn ? inj_self : inj_cross;
                if (!active) return {};
                return edit_attention((*src)[static_cast<size_t>(site.layer_id)],
                                      computed, site.kind, spec.op, align);
            };
        };
        ih_c.observe = [&edit_cond](const TensorT<S>& p, const AttnSite& s) {
            edit_cond[static_cast<size_t>(s.layer_id)] = p;
        };
        ih_c.inject = injector(&src_cond);
        ih_u.inject = injector(&src_unc);
        TensorT<S> eps_edit = model.guided_eps(z_edit, t, ctx_tgt,
                                               nulltext.uncond[static_cast<size_t>(k)],
                                               guidance, &ih_c, &ih_u);
        if (union_mask) trace_tgt.add(edit_cond[UNetT<S>::kMaskLayer]);

        z_src = ddim_step(z_src, eps_src, t, t_next, model.schedule);
        z_edit = ddim_step(z_edit, eps_edit, t, t_next, model.schedule);

        if (want_mask) {
            mask = compute_word_mask(trace_src, spec.mask_word, model.vocab,
                                     spec.mask_threshold, latent_size);
            if (union_mask) {
                TensorT<S> m2 = compute_word_mask(trace_tgt, spec.mask_word,
                                                  model.vocab, spec.mask_threshold,
                                                  latent_size);
                for (size_t i = 0; i < mask.data.size(); i++)
                    mask.data[i] = std::max(mask.data[i], m2.data[i]);
            }
            const int C = model.cfg.latent_ch;
            for (int c = 0; c < C; c++)
                for (int y = 0; y < latent_size; y++)
                    for (int x = 0; x < latent_size; x++) {
                        size_t i = (static_cast<size_t>(c) * latent_size + y) *
                                       latent_size +
                                   x;
                        S m = mask.at(y, x);
                        z_edit.data[i] =
                            m * z_edit.data[i] + (S(1) - m) * z_src.data[i];
                    }
        }
    }

    return {clamp_image(latent_to_image(z_edit)), z_edit, mask};
}

// ---------------------------------------------------------------------------
// SDEdit
// ---------------------------------------------------------------------------

// Index (into inference_timesteps) of the timestep nearest strength * T; on
// an exact tie the noisier timestep wins (more editing).
inline int nearest_inference_timestep(double strength, int steps, int T) {
    check_arg(strength >= 0.0 && strength <= 1.0,
              "nearest_inference_timestep: strength outside [0, 1]");
    std::vector<int> ts = inference_timesteps(steps, T);
    double want = strength * T;
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= steps; k++) {
        double d = std::abs(static_cast<double>(ts[static_cast<size_t>(k)]) - want);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// SDEdit: q-sample the source latent to the inference timestep nearest
// strength * T, then run guided DDIM denoising back to 0. Strength 0 returns
// the source image exactly (no noise draw, no steps); the perturbation noise
// comes from derive_seed(seed, "sdedit").
template <class S>
EditResultT<S> sdedit_edit(DiffusionModelT<S>& model, const TensorT<S>& source_image,
                           const std::string& prompt, double strength, uint64_t seed,
                           S guidance = S(7.5), int steps = 50) {
    check_arg(strength >= 0.0 && strength <= 1.0,
              "sdedit_edit: strength outside [0, 1]");
    check_arg(source_image.shape == model.cfg.image_shape(),
              "sdedit_edit: image shape");
    TensorT<S> z0 = image_to_latent(source_image);
    if (strength == 0.0) return {source_image, z0, {}};

    std::vector<int> ts = inference_timesteps(steps, model.cfg.T);
    int kstar = nearest_inference_timestep(strength, steps, model.cfg.T);
    Rng rng(derive_seed(seed, "sdedit"));
    TensorT<S> eps = TensorT<S>::randn(model.cfg.latent_shape(), rng, S(1));
    TensorT<S> z = q_sample(z0, ts[static_cast<size_t>(kstar)], eps, model.schedule);
    TensorT<S> ctx_c = model.encode_text(prompt);
    TensorT<S> ctx_u = model.encode_text(null_prompt());
    for (int k = kstar; k + 1 <= steps; k++) {
        TensorT<S> eh = model.guided_eps(z, ts[static_cast<size_t>(k)], ctx_c, ctx_u,
                                         guidance);
        z = ddim_step(z, eh, ts[static_cast<size_t>(k)], ts[static_cast<size_t>(k + 1)],
                      model.schedule);
    }
    return {clamp_image(latent_to_image(z)), z, {}};
}

// ---------------------------------------------------------------------------
// Edit-cache persistence (float)
// ---------------------------------------------------------------------------

// The inversion trajectory and null-text schedule for one source are
// reusable across strength sweeps; they are stored together in the checkpoint
// container under kind "edit_cache".

using Trajectory = TrajectoryT<float>;
using NullTextSchedule = NullTextScheduleT<float>;
using NullTextResult = NullTextResultT<float>;
using WordMaskTrace = WordMaskTraceT<float>;
using EditResult = EditResultT<float>;

inline void save_edit_cache(const std::string& path, const TrajectoryT<float>& traj,
                            const NullTextScheduleT<float>& nulltext) {
    check_arg(traj.steps == nulltext.steps,
              "save_edit_cache: trajectory/schedule step mismatch");
    ParamStoreT<float> store;
    char name[32];
    for (size_t k = 0; k < traj.latents.size(); k++) {
        std::snprintf(name, sizeof(name), "traj.%03zu", k);
        store.create(name, "edit_cache", traj.latents[k]);
    }
    for (size_t k = 0; k < nulltext.uncond.size(); k++) {
        std::snprintf(name, sizeof(name), "null.%03zu", k);
        store.create(name, "edit_cache", nulltext.uncond[k]);
    }
    json meta;
    meta["kind"] = "edit_cache";
    meta["prompt"] = traj.prompt;
    meta["steps"] = traj.steps;
    meta["guidance"] = nulltext.guidance;
    save_checkpoint(path, store, meta);
}

inline void load_edit_cache(const std::string& path, TrajectoryT<float>& traj,
                            NullTextScheduleT<float>& nulltext) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (!ck.meta.contains("kind") || ck.meta["kind"] != "edit_cache")
        throw IoError("not an edit cache: " + path);
    traj = TrajectoryT<float>();
    nulltext = NullTextScheduleT<float>();
    traj.prompt = ck.meta.at("prompt").get<std::string>();
    traj.steps = ck.meta.at("steps").get<int>();
    nulltext.steps = traj.steps;
    nulltext.guidance = ck.meta.at("guidance").get<double>();
    char name[32];
    for (int k = 0; k <= traj.steps; k++) {
        std::snprintf(name, sizeof(name), "traj.%03d", k);
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end())
            throw IoError("edit cache missing tensor: " + std::string(name));
        traj.latents.push_back(it->second);
    }
    for (int k = 0; k < traj.steps; k++) {
        std::snprintf(name, sizeof(name), "null.%03d", k);
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end())
            throw IoError("edit cache missing tensor: " + std::string(name));
        nulltext.uncond.push_back(it->second);
    }
}

}  // namespace ce
