#pragma once

#include <cstdio>

#include "ce/latent.hpp"
#include "ce/schedule.hpp"
#include "ce/text_encoder.hpp"
#include "ce/tokenizer.hpp"
#include "ce/unet.hpp"

namespace ce {

struct ModelConfig {
    int T = 1000;
    int image_ch = 3, image_size = 32;
    int latent_ch = 12, latent_size = 16;
    int d_text = 64;
    int text_layers = 2;
    int max_len = 16;

    std::vector<int> latent_shape() const { return {latent_ch, latent_size, latent_size}; }
    std::vector<int> image_shape() const { return {image_ch, image_size, image_size}; }
};

template <class S>
struct TrainExampleT {
    TensorT<S> latent;  // clean x0, (latent_ch, latent_size, latent_size)
    TokenSequence seq;
};

// The full text-conditioned latent diffusion model.
template <class S>
struct DiffusionModelT {
    ModelConfig cfg;
    Vocabulary vocab;
    ParamStoreT<S> params;
    TextEncoderT<S> text;
    UNetT<S> unet;
    NoiseSchedule schedule;

    DiffusionModelT(const ModelConfig& cfg_, Vocabulary vocab_, uint64_t init_seed)
        : cfg(cfg_), vocab(std::move(vocab_)) {
        Rng rng(derive_seed(init_seed, "model_init"));
        text = TextEncoderT<S>(params, vocab.size(), cfg.d_text, cfg.text_layers,
                               cfg.max_len, rng);
        unet = UNetT<S>(params, rng, cfg.latent_ch, cfg.d_text);
        schedule = build_schedule(cfg.T);
    }

    TokenSequence encode_prompt(const std::string& prompt) const {
        return tokenize(prompt, vocab);
    }

    // Plain-value text embedding (no tape).
    TensorT<S> encode_text(const std::string& prompt) {
        NoGradGuard ng;
        return text.forward(encode_prompt(prompt)).val();
    }

    TensorT<S> encode_text(const TokenSequence& seq) {
        NoGradGuard ng;
        return text.forward(seq).val();
    }

    // Plain-value noise prediction (no tape).
    TensorT<S> predict_noise(const TensorT<S>& z, int t, const TensorT<S>& ctx,
                             const AttnHooksT<S>* hooks = nullptr) {
        NoGradGuard ng;
        return unet.forward(VarT<S>::constant(z), t, VarT<S>::constant(ctx), hooks).val();
    }

    // Classifier-free-guided noise estimate. With scale exactly 1 the
    // unconditional pass is skipped entirely (cfg_combine would return the
    // conditional estimate bit for bit anyway).
    TensorT<S> guided_eps(const TensorT<S>& z, int t, const TensorT<S>& ctx_cond,
                          const TensorT<S>& ctx_uncond, S guidance,
                          const AttnHooksT<S>* hooks_cond = nullptr,
                          const AttnHooksT<S>* hooks_uncond = nullptr) {
        TensorT<S> eps_c = predict_noise(z, t, ctx_cond, hooks_cond);
        if (guidance == S(1)) return eps_c;
        TensorT<S> eps_u = predict_noise(z, t, ctx_uncond, hooks_uncond);
        return cfg_combine(eps_u, eps_c, guidance);
    }

    // DDIM sampler (eta = 0). Draws the initial latent from rng, then runs the
    // deterministic reverse chain with classifier-free guidance.
    TensorT<S> sample(const std::string& prompt, int steps, S guidance, Rng& rng,
                      const AttnHooksT<S>* hooks_cond = nullptr,
                      const AttnHooksT<S>* hooks_uncond = nullptr) {
        TensorT<S> z = TensorT<S>::randn(cfg.latent_shape(), rng, S(1));
        return sample_from(z, prompt, steps, guidance, hooks_cond, hooks_uncond);
    }

    TensorT<S> sample_from(TensorT<S> z, const std::string& prompt, int steps,
                           S guidance, const AttnHooksT<S>* hooks_cond = nullptr,
                           const AttnHooksT<S>* hooks_uncond = nullptr) {
        TensorT<S> ctx_c = encode_text(prompt);
        TensorT<S> ctx_u = encode_text(null_prompt());
        std::vector<int> ts = inference_timesteps(steps, cfg.T);
        for (size_t k = 0; k + 1 < ts.size(); k++) {
            TensorT<S> eps = guided_eps(z, ts[k], ctx_c, ctx_u, guidance, hooks_cond,
                                        hooks_uncond);
            z = ddim_step(z, eps, ts[k], ts[k + 1], schedule);
        }
        return z;
    }

    // Denoising objective, Eq. (1): per-example mean squared error between the
    // true and predicted noise, averaged over the batch.
    //
    // RNG draw order (relied on by replay tests): for each example in batch
    // order, first t ~ UniformInt[1, T], then eps elementwise in flat tensor
    // order via randn.
    VarT<S> training_loss(const std::vector<TrainExampleT<S>>& batch, Rng& rng) {
        check_arg(!batch.empty(), "training_loss: empty batch");
        VarT<S> total;
        for (const auto& ex : batch) {
            int t = rng.uniform_int(1, cfg.T);
            TensorT<S> eps = TensorT<S>::randn(ex.latent.shape, rng, S(1));
            TensorT<S> zt = q_sample(ex.latent, t, eps, schedule);
            VarT<S> ctx = text.forward(ex.seq);
            VarT<S> eps_hat = unet.forward(VarT<S>::constant(zt), t, ctx, nullptr);
            VarT<S> l = ag::mse_to(eps_hat, eps);
            total = total.defined() ? total + l : l;
        }
        return ag::scale(total, S(1) / static_cast<S>(batch.size()));
    }
};

// Trains every parameter group from scratch. Per optimization step the RNG
// draws the batch indices first (uniform over the corpus), then hands the same
// stream to training_loss. Returns the per-step loss curve.
template <class S>
std::vector<double> pretrain_model(DiffusionModelT<S>& model,
                                   const std::vector<TrainExampleT<S>>& corpus,
                                   int steps, int batch_size, S lr, uint64_t seed,
                                   bool quiet = true) {
    check_arg(!corpus.empty(), "pretrain: empty corpus");
    Rng rng(derive_seed(seed, "pretrain"));
    AdamT<S> opt;
    for (auto& e : model.params.entries) opt.add(e.var);
    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(steps));
    for (int step = 0; step < steps; step++) {
        std::vector<TrainExampleT<S>> batch;
        batch.reserve(static_cast<size_t>(batch_size));
        for (int j = 0; j < batch_size; j++)
            batch.push_back(corpus[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(corpus.size()) - 1))]);
        model.params.zero_grads();
        VarT<S> loss = model.training_loss(batch, rng);
        ag::backward(loss);
        opt.step(lr);
        losses.push_back(static_cast<double>(loss.val().data[0]));
        if (!quiet && (step % 100 == 0 || step + 1 == steps))
            std::fprintf(stderr, "pretrain step %d/%d loss %.4f\n", step + 1, steps,
                         losses.back());
    }
    return losses;
}

using DiffusionModel = DiffusionModelT<float>;
using TrainExample = TrainExampleT<float>;

}  // namespace ce
