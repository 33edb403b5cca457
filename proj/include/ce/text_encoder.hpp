#pragma once

#include "ce/nn.hpp"
#include "ce/tokenizer.hpp"

namespace ce {

// Two-block pre-LN transformer over the 16-token sequence. Single attention
// head, causal mask, learned positional table, final LayerNorm. Output rows
// are the per-token conditioning consumed by cross attention, so column i of
// a cross-attention map always refers to token position i.
template <class S>
struct TextEncoderT {
    struct Block {
        LayerNormT<S> ln1, ln2;
        VarT<S> wq, wk, wv, wo;
        LinearT<S> fc1, fc2;
    };

    VarT<S> token_table;  // (vocab, d) — group text_embedding_table
    VarT<S> pos_table;    // (max_len, d)
    std::vector<Block> blocks;
    LayerNormT<S> final_ln;
    int d_model = 0, max_len = 0;
    TensorT<S> causal_mask;  // 0 on/below the diagonal, -1e9 above

    TextEncoderT() = default;

    TextEncoderT(ParamStoreT<S>& ps, int vocab_size, int d_model_, int n_layers,
                 int max_len_, Rng& rng)
        : d_model(d_model_), max_len(max_len_) {
        const char* body = groups::text_encoder_body;
        token_table = ps.create("text.token_embedding", groups::text_embedding_table,
                                init_normal<S>({vocab_size, d_model_}, rng, d_model_));
        pos_table = ps.create("text.pos_embedding", body,
                              TensorT<S>::randn({max_len_, d_model_}, rng, S(0.02)));
        for (int l = 0; l < n_layers; l++) {
            std::string p = "text.block" + std::to_string(l);
            Block b;
            b.ln1 = LayerNormT<S>(ps, p + ".ln1", body, d_model_);
            b.wq = ps.create(p + ".wq", body, init_normal<S>({d_model_, d_model_}, rng, d_model_));
            b.wk = ps.create(p + ".wk", body, init_normal<S>({d_model_, d_model_}, rng, d_model_));
            b.wv = ps.create(p + ".wv", body, init_normal<S>({d_model_, d_model_}, rng, d_model_));
            b.wo = ps.create(p + ".wo", body, init_normal<S>({d_model_, d_model_}, rng, d_model_));
            b.ln2 = LayerNormT<S>(ps, p + ".ln2", body, d_model_);
            b.fc1 = LinearT<S>(ps, p + ".fc1", body, d_model_, 4 * d_model_, rng);
            b.fc2 = LinearT<S>(ps, p + ".fc2", body, 4 * d_model_, d_model_, rng);
            blocks.push_back(std::move(b));
        }
        final_ln = LayerNormT<S>(ps, "text.final_ln", body, d_model_);
        causal_mask = TensorT<S>::zeros({max_len_, max_len_});
        for (int i = 0; i < max_len_; i++)
            for (int j = i + 1; j < max_len_; j++) causal_mask.at(i, j) = S(-1e9);
    }

    // seq must be padded to max_len. Returns (max_len, d_model).
    VarT<S> forward(const TokenSequence& seq) {
        check_arg(static_cast<int>(seq.ids.size()) == max_len,
                  "text encoder expects a padded sequence");
        VarT<S> x = ag::add(ag::embedding_gather(token_table, seq.ids), pos_table);
        S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_model)));
        VarT<S> mask = VarT<S>::constant(causal_mask);
        for (auto& b : blocks) {
            VarT<S> h = b.ln1.forward(x);
            VarT<S> q = ag::matmul(h, b.wq);
            VarT<S> k = ag::matmul(h, b.wk);
            VarT<S> v = ag::matmul(h, b.wv);
            VarT<S> logits = ag::add(ag::scale(ag::matmul(q, k, false, true), inv_sqrt_d), mask);
            VarT<S> att = ag::matmul(ag::softmax_rows(logits), v);
            x = x + ag::matmul(att, b.wo);
            VarT<S> h2 = b.ln2.forward(x);
            x = x + b.fc2.forward(ag::silu(b.fc1.forward(h2)));
        }
        return final_ln.forward(x);
    }
};

}  // namespace ce
