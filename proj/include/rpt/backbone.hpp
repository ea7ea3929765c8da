#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rpt/ops.hpp"
#include "rpt/params.hpp"
#include "rpt/tasks.hpp"

namespace rpt {

enum class Arch { encoder_only, encoder_decoder };

std::string arch_name(Arch arch);
Arch arch_from_name(const std::string& name);

struct BackboneConfig {
    Arch arch = Arch::encoder_only;
    std::size_t layers = 2;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t ffn = 128;
    std::size_t vocab = 64;
    std::size_t max_len = 128;
    double ln_eps = 1e-5;

    void validate() const;
    std::string to_json() const;
    static BackboneConfig from_json(const std::string& text);

    bool operator==(const BackboneConfig&) const = default;
};

// Pre-norm transformer with learned absolute positions, in two modes:
// encoder-only (classification through a [CLS] head supplied by the caller)
// and encoder-decoder (conditional generation with logits tied to the token
// embedding table). A zero-layer stack is exactly embeddings + positions.
class Backbone {
public:
    static Backbone init(const BackboneConfig& cfg, std::uint64_t seed);
    static Backbone load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    Backbone clone() const;

    const BackboneConfig& config() const { return cfg_; }
    bool frozen() const { return frozen_; }
    void freeze();    // idempotent; marks every backbone parameter non-trainable
    void unfreeze();  // for fine-tune mode copies

    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }
    std::string parameter_fingerprint() const;  // sha256 of serialized tensors

    const Tensor& token_embeddings() const;

    // [L x d] input embeddings from a recipe; prompt slots pull rows from
    // prompt_rows (pass an undefined tensor when the recipe has none).
    Tensor embed(const SequenceRecipe& recipe, const Tensor& prompt_rows) const;

    // Encoder stack. mask[j]==0 marks keys no position may attend to.
    Tensor encode(const Tensor& x, const std::vector<std::uint8_t>& mask) const;

    Tensor classify_logits(const Tensor& hidden, std::size_t cls_pos,
                           const Tensor& head_w) const;
    // softmax(w . h_cls): the class distribution for the encoder-only mode.
    Tensor encode_classify(const Tensor& x, const std::vector<std::uint8_t>& mask,
                           std::size_t cls_pos, const Tensor& head_w) const;

    // Teacher-forced NLL of the label token sequence, summed over positions.
    Tensor seq2seq_nll(const Tensor& enc_x, const std::vector<std::uint8_t>& enc_mask,
                       const std::vector<std::size_t>& label_tokens) const;
    std::vector<std::size_t> greedy_decode(const Tensor& enc_x,
                                           const std::vector<std::uint8_t>& enc_mask,
                                           std::size_t max_steps) const;
    // Per-position vocabulary logits under teacher forcing; rows align with
    // label_tokens. Used by the bake-equivalence checks.
    Tensor seq2seq_logits(const Tensor& enc_x, const std::vector<std::uint8_t>& enc_mask,
                          const std::vector<std::size_t>& label_tokens) const;

private:
    Backbone() = default;

    struct Attn {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct Block {
        Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        Attn self_attn;
        Tensor w_in, b_in, w_out, b_out;
        // encoder-decoder blocks only
        Tensor ln_cross_g, ln_cross_b;
        Attn cross_attn;
    };

    void build_parameters(std::uint64_t seed);
    void bind_handles();
    Tensor attention(const Attn& w, const Tensor& q_in, const Tensor& kv_in,
                     const std::vector<std::uint8_t>& keep) const;
    Tensor decode_hidden(const Tensor& enc_hidden,
                         const std::vector<std::uint8_t>& enc_mask,
                         const std::vector<std::size_t>& dec_ids) const;

    BackboneConfig cfg_;
    ParamRegistry params_;
    bool frozen_ = false;

    Tensor tok_emb_, pos_emb_, dec_pos_emb_;
    std::vector<Block> enc_blocks_;
    std::vector<Block> dec_blocks_;
};

// Synthetic pretraining so the frozen features are informative: masked-token
// prediction for the encoder-only mode, span-copy denoising for the
// encoder-decoder mode. Returns the model unfrozen; callers freeze.
struct PretrainStats {
    std::size_t steps = 0;
    double final_loss = 0.0;
    double heldout_token_accuracy = 0.0;  // chance level is 1/vocab
};

PretrainStats pretrain_backbone(Backbone& model,
                                const std::vector<std::vector<std::size_t>>& corpus,
                                std::size_t steps, std::uint64_t seed, double lr = 1e-3);

}  // namespace rpt
