// Rough single-core timings for the pieces that dominate the pipeline budget:
// a U-Net forward (sampling) and a full training step (forward + backward).
#include <chrono>
#include <cstdio>

#include "ce/model.hpp"

using namespace ce;
using clk = std::chrono::steady_clock;

static double ms_since(clk::time_point t0) {
    return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

int main() {
    DiffusionModel m(ModelConfig{}, Vocabulary::standard(), 1);
    Rng rng(2);
    Tensor z = Tensor::randn(m.cfg.latent_shape(), rng);
    Tensor ctx = m.encode_text("photo of a V1* striped teapot");

    // Warm up.
    (void)m.predict_noise(z, 500, ctx);

    const int n_fwd = 50;
    auto t0 = clk::now();
    for (int i = 0; i < n_fwd; i++) (void)m.predict_noise(z, 500, ctx);
    double fwd_ms = ms_since(t0) / n_fwd;
    std::printf("unet forward (no-grad): %.2f ms\n", fwd_ms);

    std::vector<TrainExample> batch(1);
    batch[0].latent = Tensor::randn(m.cfg.latent_shape(), rng, 0.5f);
    batch[0].seq = m.encode_prompt("photo of a V1* striped teapot");
    Rng loss_rng(3);
    const int n_steps = 20;
    auto t1 = clk::now();
    for (int i = 0; i < n_steps; i++) {
        m.params.zero_grads();
        Var loss = m.training_loss(batch, loss_rng);
        ag::backward(loss);
    }
    double step_ms = ms_since(t1) / n_steps;
    std::printf("training fwd+bwd (batch 1): %.2f ms\n", step_ms);

    std::printf("projected: 50-step sample (cfg) %.1f ms; 2000-step pretrain batch4 %.1f s\n",
                fwd_ms * 100, step_ms * 4 * 2000 / 1000.0);
    return 0;
}
