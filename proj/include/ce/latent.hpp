#pragma once

#include "ce/tensor.hpp"

namespace ce {

// Exact, parameter-free image <-> latent codec: factor-2 space-to-depth.
// Image (3, H, W) maps to latent (12, H/2, W/2) with
//   latent[c*4 + dy*2 + dx, y, x] = image[c, 2y+dy, 2x+dx].
// Both directions are bit-exact inverses.

template <class S>
TensorT<S> image_to_latent(const TensorT<S>& img) {
    check_arg(img.ndim() == 3 && img.shape[0] == 3, "image_to_latent: expected 3xHxW");
    int H = img.shape[1], W = img.shape[2];
    check_arg(H % 2 == 0 && W % 2 == 0, "image_to_latent: H and W must be even");
    TensorT<S> z({12, H / 2, W / 2});
    for (int c = 0; c < 3; c++)
        for (int dy = 0; dy < 2; dy++)
            for (int dx = 0; dx < 2; dx++)
                for (int y = 0; y < H / 2; y++)
                    for (int x = 0; x < W / 2; x++)
                        z.at(c * 4 + dy * 2 + dx, y, x) = img.at(c, 2 * y + dy, 2 * x + dx);
    return z;
}

template <class S>
TensorT<S> latent_to_image(const TensorT<S>& z) {
    check_arg(z.ndim() == 3 && z.shape[0] == 12, "latent_to_image: expected 12xhxw");
    int h = z.shape[1], w = z.shape[2];
    TensorT<S> img({3, h * 2, w * 2});
    for (int c = 0; c < 3; c++)
        for (int dy = 0; dy < 2; dy++)
            for (int dx = 0; dx < 2; dx++)
                for (int y = 0; y < h; y++)
                    for (int x = 0; x < w; x++)
                        img.at(c, 2 * y + dy, 2 * x + dx) = z.at(c * 4 + dy * 2 + dx, y, x);
    return img;
}

template <class S>
TensorT<S> clamp_image(TensorT<S> img) {
    for (auto& v : img.data) v = std::clamp(v, S(-1), S(1));
    return img;
}

}  // namespace ce
