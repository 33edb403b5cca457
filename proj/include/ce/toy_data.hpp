#pragma once

#include <string>
#include <vector>

#include "ce/rng.hpp"
#include "ce/tensor.hpp"

namespace ce {

// Procedural image-caption corpus. Shapes are parametric 2-D silhouettes
// (one per class noun), filled with a deterministic pattern per modifier and
// placed on a solid background. Rendering is a pure function of the spec and
// the rng stream handed in.

struct ConceptSpec {
    std::string class_noun;  // teapot pot bird cat cup bowl
    std::string modifier;    // striped dotted checkered wooden plain
    std::string color;       // shape fill color word
    std::string background;  // background color word
    // Pose / position jitter.
    double cx = 0.0, cy = 0.0;  // center offset in normalized [-1,1] coords
    double scale = 1.0;
    double angle = 0.0;  // radians
    double noise = 0.015;  // additive pixel noise stddev (0 = noiseless)
};

struct CaptionedImage {
    Tensor image;  // (3, 32, 32) in [-1, 1]
    std::string caption;
    std::string class_noun, modifier;
    bool held_out = false;
};

struct HeldOutPair {
    std::string class_noun, modifier;
    bool operator==(const HeldOutPair& o) const = default;
};

namespace toy {
const std::vector<std::string>& class_nouns();   // 6
const std::vector<std::string>& modifiers();     // 5
const std::vector<std::string>& colors();        // 8
const std::vector<std::string>& backgrounds();   // 6
}  // namespace toy

// Caption template: "photo of a [modifier] [class] on [background] background".
std::string corpus_caption(const ConceptSpec& spec);
// Same template without the modifier word (used for edit-source renders).
std::string plain_caption(const ConceptSpec& spec);

// Renders the spec at 32x32. rng feeds only the additive pixel noise.
Tensor render(const ConceptSpec& spec, Rng& rng);

// Binary silhouette of the posed shape (1 inside, 0 outside); test oracle
// for the pattern fills.
Tensor render_mask(const ConceptSpec& spec);

// Draws a uniformly random allowed concept (held-out pairs rejected).
ConceptSpec sample_concept(Rng& rng, const std::vector<HeldOutPair>& held_out);

std::vector<CaptionedImage> generate_corpus(int n, const std::vector<HeldOutPair>& held_out,
                                            uint64_t seed);

// k jittered renders of one concept; only pose/position (and pixel noise)
// vary between items.
std::vector<Tensor> generate_reference_set(const ConceptSpec& spec, int k, uint64_t seed);

// Regularization images: same class, varied colors/poses, any modifier except
// the excluded (customized) one.
std::vector<CaptionedImage> generate_prior_set(const std::string& class_noun,
                                               const std::string& excluded_modifier,
                                               int n, uint64_t seed);

}  // namespace ce
