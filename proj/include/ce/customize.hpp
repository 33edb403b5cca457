#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "ce/model.hpp"

namespace ce {

// Customization: fine-tune a pretrained model on a few reference images of one
// concept so that a reserved rare token comes to denote it. Three policies
// choose which parameters train; everything else stays bitwise frozen. Prompts
// are drawn from a fixed template pool, a fraction of iterations adds crop
// augmentation, and a prior-preservation term keeps class-level knowledge
// intact.

enum class PolicyKind { custom_diffusion, textual_inversion, dreambooth };

inline const char* policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::custom_diffusion: return "custom_diffusion";
        case PolicyKind::textual_inversion: return "textual_inversion";
        case PolicyKind::dreambooth: return "dreambooth";
    }
    throw std::invalid_argument("policy_name: unknown policy");
}

inline PolicyKind policy_from_name(const std::string& name) {
    if (name == "custom_diffusion") return PolicyKind::custom_diffusion;
    if (name == "textual_inversion") return PolicyKind::textual_inversion;
    if (name == "dreambooth") return PolicyKind::dreambooth;
    throw std::invalid_argument("unknown customization policy: " + name);
}

struct CustomizationPolicy {
    PolicyKind kind = PolicyKind::custom_diffusion;
    int rare_slot = 0;     // token "V{slot+1}*", embedding row kRareBase + slot
    std::string modifier;  // optional; empty trains without a modifier word
    std::string class_noun;

    int rare_id() const { return Vocabulary::kRareBase + rare_slot; }
    std::string rare_word() const { return Vocabulary::rare_token(rare_slot); }

    // The contiguous "[rare] [modifier] [class]" phrase every training prompt
    // carries (modifier omitted when empty).
    std::string concept_phrase() const {
        std::string s = rare_word();
        if (!modifier.empty()) s += " " + modifier;
        s += " " + class_noun;
        return s;
    }
};

struct CustomizationConfig {
    int steps = 500;
    int batch_size = 2;
    double lr = 1e-5;
    double prior_weight = 1.0;      // λ on the prior-preservation term
    double crop_ratio = 1.0 / 3.0;  // fraction of iterations with crop augmentation
    uint64_t seed = 0;
};

// Per-policy training defaults; the seed is left at 0 for the caller to set.
inline CustomizationConfig default_customization_config(PolicyKind kind) {
    CustomizationConfig c;
    if (kind == PolicyKind::textual_inversion) {
        c.steps = 2000;
        c.batch_size = 4;
        c.lr = 5e-4;
    }
    return c;
}

// Partition of the parameter store under a policy: `full` tensors train
// wholly, `row_tensor` trains in exactly one row, `frozen` tensors do not
// train. The three parts are disjoint and together cover every tensor.
struct TrainableSelection {
    std::vector<std::string> full;
    std::string row_tensor;  // empty when no row-restricted tensor
    int row = -1;
    std::vector<std::string> frozen;
};

template <class S>
TrainableSelection select_trainable(const ParamStoreT<S>& params,
                                    const CustomizationPolicy& policy) {
    check_arg(policy.rare_slot >= 0 && policy.rare_slot < Vocabulary::kRareCount,
              "select_trainable: rare slot out of range");
    TrainableSelection sel;
    for (const auto& e : params.entries) {
        bool full = false, row = false;
        switch (policy.kind) {
            case PolicyKind::custom_diffusion:
                full = e.group == groups::unet_cross_attention_KV;
                row = e.group == groups::text_embedding_table;
                break;
            case PolicyKind::textual_inversion:
                row = e.group == groups::text_embedding_table;
                break;
            case PolicyKind::dreambooth:
                full = e.group == groups::unet_conv ||
                       e.group == groups::unet_self_attention ||
                       e.group == groups::unet_cross_attention_Q ||
                       e.group == groups::unet_cross_attention_KV ||
                       e.group == groups::unet_cross_attention_out ||
                       e.group == groups::time_embedding;
                break;
            default:
                throw std::invalid_argument("select_trainable: unknown policy");
        }
        if (full) {
            sel.full.push_back(e.name);
        } else if (row) {
            check_arg(sel.row_tensor.empty(),
                      "select_trainable: multiple embedding tables");
            sel.row_tensor = e.name;
            sel.row = policy.rare_id();
        } else {
            sel.frozen.push_back(e.name);
        }
    }
    return sel;
}

// Canonical text form of a selection (sorted, one item per line); the CLI
// digests this into the run manifest.
inline std::string describe_selection(const TrainableSelection& sel) {
    std::vector<std::string> lines;
    for (const auto& n : sel.full) lines.push_back("full " + n);
    if (!sel.row_tensor.empty())
        lines.push_back("row " + sel.row_tensor + " " + std::to_string(sel.row));
    for (const auto& n : sel.frozen) lines.push_back("frozen " + n);
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
    return out;
}

namespace detail {
inline constexpr std::array<const char*, 5> kStandardTemplates = {
    "photo of a", "rendering of a", "illustration of a", "depiction of a",
    "rendition of a"};
inline constexpr std::array<const char*, 3> kCropTemplates = {
    "zoomed in photo of a", "close up in photo of a", "cropped in photo of a"};
}  // namespace detail

// One training prompt: a uniformly random template prefix (the crop pool when
// `cropped`) followed by the concept phrase. Consumes exactly one uniform_int
// draw.
inline std::string augment_prompt(const CustomizationPolicy& policy, Rng& rng,
                                  bool cropped) {
    const char* prefix =
        cropped ? detail::kCropTemplates[static_cast<size_t>(rng.uniform_int(0, 2))]
                : detail::kStandardTemplates[static_cast<size_t>(rng.uniform_int(0, 4))];
    return std::string(prefix) + " " + policy.concept_phrase();
}

// Side length kept by the crop augmentation, as a fraction of the original.
inline constexpr double kCropFraction = 0.75;

// Random crop to kCropFraction of each side, bilinearly resized back to the
// input resolution. Draw order: x offset then y offset, each uniform_int over
// the valid top-left corners. Bilinear weights are convex, so outputs stay
// within the input's value range.
template <class S>
TensorT<S> random_crop_resize(const TensorT<S>& img, Rng& rng) {
    check_arg(img.shape.size() == 3, "random_crop_resize: want a CHW image");
    int C = img.shape[0], H = img.shape[1], W = img.shape[2];
    int ch = std::max(1, static_cast<int>(std::lround(H * kCropFraction)));
    int cw = std::max(1, static_cast<int>(std::lround(W * kCropFraction)));
    int ox = rng.uniform_int(0, W - cw);
    int oy = rng.uniform_int(0, H - ch);
    TensorT<S> out(img.shape);
    for (int y = 0; y < H; y++) {
        double fy = oy + (H > 1 ? static_cast<double>(y) * (ch - 1) / (H - 1) : 0.0);
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, oy + ch - 1);
        double wy = fy - y0;
        for (int x = 0; x < W; x++) {
            double fx = ox + (W > 1 ? static_cast<double>(x) * (cw - 1) / (W - 1) : 0.0);
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, ox + cw - 1);
            double wx = fx - x0;
            for (int c = 0; c < C; c++) {
                auto px = [&](int yy, int xx) {
                    return static_cast<double>(
                        img.data[(static_cast<size_t>(c) * H + yy) * W + xx]);
                };
                double v = (1.0 - wy) * ((1.0 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                           wy * ((1.0 - wx) * px(y1, x0) + wx * px(y1, x1));
                out.data[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<S>(v);
            }
        }
    }
    return out;
}

// Initializes the rare-token embedding row: textual inversion copies the
// class-noun row; the other policies keep the pretrained rare row as is.
template <class S>
void init_rare_row(DiffusionModelT<S>& model, const CustomizationPolicy& policy) {
    if (policy.kind != PolicyKind::textual_inversion) return;
    TensorT<S>& table = model.text.token_table.mutable_val();
    int src = model.vocab.id(policy.class_noun);
    int dst = policy.rare_id();
    int d = table.cols();
    for (int j = 0; j < d; j++) table.at(dst, j) = table.at(src, j);
}

// Eq. (1) on the reference batch plus prior_weight times Eq. (1) on the prior
// batch. The prior term is skipped entirely — no forward, no RNG draws — when
// prior_weight == 0 or the prior batch is empty, so prior_weight = 0 reduces
// exactly to the reference-only loss. With `detach_prior` the prior term
// contributes its value but no gradient; customize() enables this for textual
// inversion, whose prior captions contain no rare token and therefore cannot
// produce a gradient on the one trainable row in the first place.
template <class S>
VarT<S> customization_loss(DiffusionModelT<S>& model,
                           const std::vector<TrainExampleT<S>>& reference_batch,
                           const std::vector<TrainExampleT<S>>& prior_batch,
                           S prior_weight, Rng& rng, bool detach_prior = false) {
    check_arg(!reference_batch.empty(), "customization_loss: empty reference batch");
    check_arg(prior_weight >= S(0), "customization_loss: negative prior weight");
    VarT<S> loss = model.training_loss(reference_batch, rng);
    if (prior_weight > S(0) && !prior_batch.empty()) {
        if (detach_prior) {
            TensorT<S> pv;
            {
                NoGradGuard ng;
                pv = model.training_loss(prior_batch, rng).val();
            }
            pv.data[0] *= prior_weight;
            loss = loss + VarT<S>::constant(std::move(pv));
        } else {
            loss = loss + ag::scale(model.training_loss(prior_batch, rng), prior_weight);
        }
    }
    return loss;
}

struct CustomizationResult {
    TrainableSelection selection;
    std::vector<double> losses;  // per-step total loss
};

// Fine-tunes `model` in place on the reference images. Parameters outside the
// policy's selection are frozen at the tape level (requires_grad off), so they
// never receive a gradient and stay bitwise identical; the embedding table's
// gradient is additionally zeroed outside the trained row before each
// optimizer step, and the optimizer slot itself is row-masked.
//
// RNG draw order per optimization step (replayed by tests):
//   1. crop coin: uniform() < crop_ratio
//   2. per reference-batch item: reference index (uniform_int), template index
//      (uniform_int inside augment_prompt), then — only when cropping — the x
//      and y crop offsets (uniform_int each)
//   3. per prior-batch item, only when prior_weight > 0 and the prior set is
//      non-empty: prior index (uniform_int)
//   4. customization_loss: training_loss draws for the reference batch, then
//      for the prior batch (per item t then noise; nothing when skipped)
template <class S>
CustomizationResult customize(DiffusionModelT<S>& model,
                              const std::vector<TensorT<S>>& reference_images,
                              const std::vector<TrainExampleT<S>>& prior,
                              const CustomizationPolicy& policy,
                              const CustomizationConfig& cfg, bool quiet = true) {
    check_arg(!reference_images.empty(), "customize: empty reference set");
    check_arg(cfg.steps > 0, "customize: steps must be positive");
    check_arg(cfg.batch_size > 0, "customize: batch size must be positive");
    check_arg(cfg.lr > 0, "customize: learning rate must be positive");
    check_arg(cfg.prior_weight >= 0, "customize: negative prior weight");
    check_arg(cfg.crop_ratio >= 0 && cfg.crop_ratio <= 1,
              "customize: crop ratio outside [0, 1]");
    check_arg(policy.rare_slot >= 0 && policy.rare_slot < Vocabulary::kRareCount,
              "customize: rare slot out of range");
    check_arg(!policy.class_noun.empty(), "customize: policy missing class noun");
    check_arg(model.vocab.contains(policy.class_noun),
              "customize: class noun not in the model vocabulary");
    check_arg(policy.modifier.empty() || model.vocab.contains(policy.modifier),
              "customize: modifier not in the model vocabulary");
    check_arg(model.vocab.contains(policy.rare_word()),
              "customize: model vocabulary lacks the rare-token pool");
    for (const auto& img : reference_images)
        check_arg(img.shape == model.cfg.image_shape(),
                  "customize: reference image shape mismatch");
    for (const auto& ex : prior)
        check_arg(ex.latent.shape == model.cfg.latent_shape(),
                  "customize: prior latent shape mismatch");

    CustomizationResult res;
    res.selection = select_trainable(model.params, policy);
    init_rare_row(model, policy);

    model.params.set_all_requires_grad(false);
    RequiresGradRestoreT<S> restore{&model.params};
    AdamT<S> opt;
    for (const auto& name : res.selection.full) {
        VarT<S>& v = model.params.find(name);
        v.set_requires_grad(true);
        opt.add(v);
    }
    if (!res.selection.row_tensor.empty()) {
        VarT<S>& v = model.params.find(res.selection.row_tensor);
        v.set_requires_grad(true);
        opt.add(v, {res.selection.row});
    }

    const bool detach_prior = policy.kind == PolicyKind::textual_inversion;
    Rng rng(derive_seed(cfg.seed, "customize"));
    res.losses.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; step++) {
        bool cropped = rng.uniform() < cfg.crop_ratio;
        std::vector<TrainExampleT<S>> ref_batch;
        ref_batch.reserve(static_cast<size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; b++) {
            size_t idx = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(reference_images.size()) - 1));
            std::string prompt = augment_prompt(policy, rng, cropped);
            TensorT<S> img = reference_images[idx];
            if (cropped) img = random_crop_resize(img, rng);
            ref_batch.push_back({image_to_latent(img), tokenize(prompt, model.vocab)});
        }
        std::vector<TrainExampleT<S>> prior_batch;
        if (cfg.prior_weight > 0 && !prior.empty()) {
            prior_batch.reserve(static_cast<size_t>(cfg.batch_size));
            for (int b = 0; b < cfg.batch_size; b++)
                prior_batch.push_back(prior[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int>(prior.size()) - 1))]);
        }
        model.params.zero_grads();
        VarT<S> loss =
            customization_loss(model, ref_batch, prior_batch,
                               static_cast<S>(cfg.prior_weight), rng, detach_prior);
        ag::backward(loss);
        if (!res.selection.row_tensor.empty()) {
            VarT<S>& v = model.params.find(res.selection.row_tensor);
            if (!v.grad().empty()) {
                TensorT<S>& g = v.grad_buf();
                int cols = g.cols();
                for (int r = 0; r < g.rows(); r++) {
                    if (r == res.selection.row) continue;
                    for (int c = 0; c < cols; c++) g.at(r, c) = S(0);
                }
            }
        }
        opt.step(static_cast<S>(cfg.lr));
        res.losses.push_back(static_cast<double>(loss.val().data[0]));
        if (!quiet && (step % 50 == 0 || step + 1 == cfg.steps))
            std::fprintf(stderr, "customize[%s] step %d/%d loss %.4f\n",
                         policy_name(policy.kind), step + 1, cfg.steps,
                         res.losses.back());
    }
    return res;
}

}  // namespace ce
