#include "ce/toy_data.hpp"

#include <algorithm>
#include <cmath>

#include "ce/common.hpp"

namespace ce {

namespace toy {

const std::vector<std::string>& class_nouns() {
    static const std::vector<std::string> v = {"teapot", "pot", "bird",
                                               "cat", "cup", "bowl"};
    return v;
}

const std::vector<std::string>& modifiers() {
    static const std::vector<std::string> v = {"striped", "dotted", "checkered",
                                               "wooden", "plain"};
    return v;
}

const std::vector<std::string>& colors() {
    static const std::vector<std::string> v = {"red", "green", "blue", "yellow",
                                               "orange", "purple", "teal", "pink"};
    return v;
}

const std::vector<std::string>& backgrounds() {
    static const std::vector<std::string> v = {"gray", "beige", "navy",
                                               "olive", "cream", "charcoal"};
    return v;
}

}  // namespace toy

namespace {

struct Rgb {
    double r, g, b;
};

Rgb color_value(const std::string& name) {
    if (name == "red") return {0.85, 0.15, 0.15};
    if (name == "green") return {0.15, 0.70, 0.20};
    if (name == "blue") return {0.20, 0.30, 0.85};
    if (name == "yellow") return {0.90, 0.85, 0.20};
    if (name == "orange") return {0.90, 0.55, 0.15};
    if (name == "purple") return {0.60, 0.25, 0.75};
    if (name == "teal") return {0.10, 0.65, 0.65};
    if (name == "pink") return {0.95, 0.55, 0.70};
    if (name == "gray") return {0.50, 0.50, 0.50};
    if (name == "beige") return {0.90, 0.85, 0.70};
    if (name == "navy") return {0.10, 0.12, 0.30};
    if (name == "olive") return {0.45, 0.50, 0.20};
    if (name == "cream") return {0.98, 0.95, 0.85};
    if (name == "charcoal") return {0.20, 0.20, 0.22};
    throw std::invalid_argument("unknown color word: " + name);
}

bool ellipse(double u, double v, double cx, double cy, double rx, double ry) {
    double du = (u - cx) / rx, dv = (v - cy) / ry;
    return du * du + dv * dv <= 1.0;
}

bool rect(double u, double v, double cx, double cy, double hw, double hh) {
    return std::abs(u - cx) <= hw && std::abs(v - cy) <= hh;
}

// Shape silhouettes in local coords: u right, v down, roughly [-1, 1].
bool inside_teapot(double u, double v) {
    if (ellipse(u, v, 0.0, 0.22, 0.66, 0.50)) return true;                 // body
    if (u >= -1.00 && u <= -0.50 &&
        std::abs(v - (0.05 - 0.55 * (u + 0.5))) <= 0.14) return true;      // spout
    if (ellipse(u, v, 0.70, 0.15, 0.30, 0.34) &&
        !ellipse(u, v, 0.70, 0.15, 0.15, 0.19)) return true;               // handle
    if (ellipse(u, v, 0.0, -0.38, 0.34, 0.14)) return true;                // lid
    if (ellipse(u, v, 0.0, -0.56, 0.11, 0.11)) return true;                // knob
    return false;
}

bool inside_pot(double u, double v) {
    if (rect(u, v, 0.0, 0.10, 0.62, 0.38)) return true;                    // body
    if (ellipse(u, v, 0.0, 0.48, 0.62, 0.32)) return true;                 // rounded base
    if (rect(u, v, 0.0, -0.36, 0.74, 0.09)) return true;                   // rim
    if (rect(u, v, -0.78, 0.02, 0.14, 0.10)) return true;                  // left handle
    if (rect(u, v, 0.78, 0.02, 0.14, 0.10)) return true;                   // right handle
    return false;
}

bool inside_bird(double u, double v) {
    if (ellipse(u, v, 0.08, 0.28, 0.52, 0.38)) return true;                // body
    if (ellipse(u, v, -0.42, -0.28, 0.26, 0.26)) return true;              // head
    if (u >= -0.92 && u <= -0.64 &&
        std::abs(v + 0.28) <= 0.45 * (u + 0.92)) return true;              // beak
    if (u >= 0.50 && u <= 0.98 &&
        std::abs(v - 0.10) <= 0.55 * (0.98 - u)) return true;              // tail
    return false;
}

bool inside_cat(double u, double v) {
    if (ellipse(u, v, 0.0, -0.35, 0.34, 0.34)) return true;                // head
    if (v >= -0.88 && v <= -0.50 &&
        std::abs(u + 0.22) <= 0.55 * (v + 0.88)) return true;              // left ear
    if (v >= -0.88 && v <= -0.50 &&
        std::abs(u - 0.22) <= 0.55 * (v + 0.88)) return true;              // right ear
    if (ellipse(u, v, 0.0, 0.38, 0.46, 0.42)) return true;                 // body
    if (rect(u, v, 0.56, 0.35, 0.09, 0.32)) return true;                   // tail
    return false;
}

bool inside_cup(double u, double v) {
    if (rect(u, v, -0.10, 0.0, 0.46, 0.60)) return true;                   // body
    if (ellipse(u, v, -0.10, 0.60, 0.46, 0.20)) return true;               // rounded base
    if (ellipse(u, v, 0.55, 0.0, 0.30, 0.32) &&
        !ellipse(u, v, 0.55, 0.0, 0.15, 0.17)) return true;                // handle
    return false;
}

bool inside_bowl(double u, double v) {
    if (ellipse(u, v, 0.0, 0.0, 0.88, 0.64) && v >= -0.02) return true;    // cavity
    if (rect(u, v, 0.0, -0.06, 0.92, 0.08)) return true;                   // rim
    if (rect(u, v, 0.0, 0.68, 0.30, 0.10)) return true;                    // base
    return false;
}

bool inside_shape(const std::string& cls, double u, double v) {
    if (cls == "teapot") return inside_teapot(u, v);
    if (cls == "pot") return inside_pot(u, v);
    if (cls == "bird") return inside_bird(u, v);
    if (cls == "cat") return inside_cat(u, v);
    if (cls == "cup") return inside_cup(u, v);
    if (cls == "bowl") return inside_bowl(u, v);
    throw std::invalid_argument("unknown class noun: " + cls);
}

// True where the primary fill color applies; false selects the secondary
// tone. Patterns live in shape-local coordinates so they pose with the shape.
bool pattern_primary(const std::string& mod, double u, double v) {
    if (mod == "plain") return true;
    if (mod == "striped") return std::sin(2.0 * M_PI * 2.2 * u) > 0.0;
    if (mod == "dotted") {
        const double cell = 0.38;
        double du = u / cell - std::floor(u / cell) - 0.5;
        double dv = v / cell - std::floor(v / cell) - 0.5;
        return du * du + dv * dv > 0.23 * 0.23;  // dots are the secondary tone
    }
    if (mod == "checkered")
        return std::sin(M_PI * u / 0.30) * std::sin(M_PI * v / 0.30) > 0.0;
    if (mod == "wooden") {
        double r = std::sqrt(u * u + v * v);
        return std::sin(2.0 * M_PI * 2.8 * r) > 0.0;
    }
    throw std::invalid_argument("unknown modifier: " + mod);
}

Rgb secondary_tone(const std::string& mod, const Rgb& base) {
    if (mod == "wooden") {
        // Grain rings blend toward brown instead of plain darkening.
        return {0.55 * base.r + 0.30, 0.55 * base.g + 0.12, 0.55 * base.b + 0.04};
    }
    return {0.45 * base.r, 0.45 * base.g, 0.45 * base.b};
}

constexpr int kSize = 32;
constexpr double kShapeRadius = 0.78;  // shape half-extent as fraction of half-image

// Maps a pixel to shape-local coords; returns false if clearly outside.
void local_coords(const ConceptSpec& s, int x, int y, double& u, double& v) {
    double nx = (x + 0.5) / kSize * 2.0 - 1.0 - s.cx;
    double ny = (y + 0.5) / kSize * 2.0 - 1.0 - s.cy;
    double inv = 1.0 / (kShapeRadius * s.scale);
    double ru = nx * inv, rv = ny * inv;
    double c = std::cos(s.angle), sn = std::sin(s.angle);
    u = c * ru + sn * rv;
    v = -sn * ru + c * rv;
}

void validate(const ConceptSpec& s) {
    // Full validation happens through the lookups below, but check the two
    // structured fields up front so errors name the offending value.
    (void)inside_shape(s.class_noun, 0.0, 0.0);
    (void)pattern_primary(s.modifier, 0.0, 0.0);
    (void)color_value(s.color);
    (void)color_value(s.background);
    check_arg(s.scale > 0.1, "concept scale too small");
    check_arg(s.noise >= 0.0, "negative noise stddev");
}

}  // namespace

std::string corpus_caption(const ConceptSpec& spec) {
    return "photo of a " + spec.modifier + " " + spec.class_noun + " on " +
           spec.background + " background";
}

std::string plain_caption(const ConceptSpec& spec) {
    return "photo of a " + spec.class_noun + " on " + spec.background + " background";
}

Tensor render(const ConceptSpec& spec, Rng& rng) {
    validate(spec);
    Rgb fill = color_value(spec.color);
    Rgb bg = color_value(spec.background);
    Tensor img({3, kSize, kSize});
    for (int y = 0; y < kSize; y++) {
        for (int x = 0; x < kSize; x++) {
            double u, v;
            local_coords(spec, x, y, u, v);
            Rgb px = bg;
            if (std::abs(u) <= 1.4 && std::abs(v) <= 1.4 &&
                inside_shape(spec.class_noun, u, v)) {
                px = pattern_primary(spec.modifier, u, v)
                         ? fill
                         : secondary_tone(spec.modifier, fill);
            }
            double ch[3] = {px.r, px.g, px.b};
            for (int c = 0; c < 3; c++) {
                double val = ch[c];
                if (spec.noise > 0.0) val += rng.normal() * spec.noise;
                img.at(c, y, x) = static_cast<float>(2.0 * std::clamp(val, 0.0, 1.0) - 1.0);
            }
        }
    }
    return img;
}

Tensor render_mask(const ConceptSpec& spec) {
    validate(spec);
    Tensor mask({1, kSize, kSize});
    for (int y = 0; y < kSize; y++)
        for (int x = 0; x < kSize; x++) {
            double u, v;
            local_coords(spec, x, y, u, v);
            bool in = std::abs(u) <= 1.4 && std::abs(v) <= 1.4 &&
                      inside_shape(spec.class_noun, u, v);
            mask.at(0, y, x) = in ? 1.0f : 0.0f;
        }
    return mask;
}

namespace {

void sample_jitter(ConceptSpec& s, Rng& rng) {
    s.cx = (rng.uniform() * 2.0 - 1.0) * 0.15;
    s.cy = (rng.uniform() * 2.0 - 1.0) * 0.15;
    s.scale = 0.75 + rng.uniform() * 0.30;
    s.angle = (rng.uniform() * 2.0 - 1.0) * 0.25;
}

bool is_held_out(const std::vector<HeldOutPair>& held_out, const std::string& cls,
                 const std::string& mod) {
    for (const auto& h : held_out)
        if (h.class_noun == cls && h.modifier == mod) return true;
    return false;
}

}  // namespace

ConceptSpec sample_concept(Rng& rng, const std::vector<HeldOutPair>& held_out) {
    check_arg(held_out.size() <
                  toy::class_nouns().size() * toy::modifiers().size(),
              "held-out set excludes every class/modifier pair");
    ConceptSpec s;
    for (int attempt = 0;; attempt++) {
        check_arg(attempt < 1000, "could not sample an allowed concept");
        s.class_noun = toy::class_nouns()[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(toy::class_nouns().size()) - 1))];
        s.modifier = toy::modifiers()[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(toy::modifiers().size()) - 1))];
        if (!is_held_out(held_out, s.class_noun, s.modifier)) break;
    }
    s.color = toy::colors()[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(toy::colors().size()) - 1))];
    s.background = toy::backgrounds()[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(toy::backgrounds().size()) - 1))];
    sample_jitter(s, rng);
    return s;
}

std::vector<CaptionedImage> generate_corpus(int n, const std::vector<HeldOutPair>& held_out,
                                            uint64_t seed) {
    check_arg(n > 0, "corpus size must be positive");
    std::vector<CaptionedImage> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; i++) {
        Rng rng(derive_seed(seed, "corpus", static_cast<uint64_t>(i)));
        ConceptSpec s = sample_concept(rng, held_out);
        CaptionedImage item;
        item.image = render(s, rng);
        item.caption = corpus_caption(s);
        item.class_noun = s.class_noun;
        item.modifier = s.modifier;
        item.held_out = false;
        out.push_back(std::move(item));
    }
    return out;
}

std::vector<Tensor> generate_reference_set(const ConceptSpec& spec, int k, uint64_t seed) {
    check_arg(k >= 1, "reference set needs k >= 1");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; i++) {
        Rng rng(derive_seed(seed, "reference", static_cast<uint64_t>(i)));
        ConceptSpec s = spec;
        sample_jitter(s, rng);
        out.push_back(render(s, rng));
    }
    return out;
}

std::vector<CaptionedImage> generate_prior_set(const std::string& class_noun,
                                               const std::string& excluded_modifier,
                                               int n, uint64_t seed) {
    check_arg(n > 0, "prior set size must be positive");
    std::vector<CaptionedImage> out;
    out.reserve(static_cast<size_t>(n));
    std::vector<std::string> allowed;
    for (const auto& m : toy::modifiers())
        if (m != excluded_modifier) allowed.push_back(m);
    check_arg(!allowed.empty(), "no modifiers left for the prior set");
    for (int i = 0; i < n; i++) {
        Rng rng(derive_seed(seed, "prior", static_cast<uint64_t>(i)));
        ConceptSpec s;
        s.class_noun = class_noun;
        s.modifier = allowed[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(allowed.size()) - 1))];
        s.color = toy::colors()[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(toy::colors().size()) - 1))];
        s.background = toy::backgrounds()[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(toy::backgrounds().size()) - 1))];
        sample_jitter(s, rng);
        CaptionedImage item;
        item.image = render(s, rng);
        item.caption = corpus_caption(s);
        item.class_noun = s.class_noun;
        item.modifier = s.modifier;
        out.push_back(std::move(item));
    }
    return out;
}

}  // namespace ce
