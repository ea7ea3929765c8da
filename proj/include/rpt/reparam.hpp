#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "rpt/ops.hpp"
#include "rpt/params.hpp"

namespace rpt {

enum class PromptInit { random_uniform, sampled_vocab };

std::string prompt_init_name(PromptInit init);
PromptInit prompt_init_from_name(const std::string& name);

// The soft prompt matrix plus its initialization provenance. A baked bank
// holds the projected embeddings and is frozen.
struct PromptBank {
    Tensor P;  // [n x d]
    std::size_t n = 0;
    std::size_t d = 0;
    PromptInit init = PromptInit::sampled_vocab;
    std::uint64_t seed = 0;
    bool baked = false;
};

// random-uniform draws every entry from [-0.5, 0.5]; sampled-vocab copies
// uniformly sampled rows of the token embedding table (whole vocabulary,
// no frequency cut). Deterministic under the seed.
PromptBank init_prompt(PromptInit strategy, std::size_t n, const Tensor& embeddings,
                       std::uint64_t seed);

enum class ReparamKind { identity, residual_mlp, mlp_no_skip, lstm };

std::string reparam_kind_name(ReparamKind kind);
ReparamKind reparam_kind_from_name(const std::string& name);

struct ReparamSpec {
    ReparamKind kind = ReparamKind::residual_mlp;
    std::size_t m = 64;   // MLP bottleneck width
    bool shared = true;   // one network for all tokens vs one per token
    bool biases = false;  // down/up projection biases (off matches the
                          // 2dm + 2d parameter arithmetic)
    std::size_t lstm_hidden = 300;
    double lstm_dropout = 0.05;
    double ln_eps = 1e-5;

    bool is_mlp() const {
        return kind == ReparamKind::residual_mlp || kind == ReparamKind::mlp_no_skip;
    }
    void validate() const;
    std::string to_json() const;
    static ReparamSpec from_json(const std::string& text);

    bool operator==(const ReparamSpec&) const = default;
};

// The reparameterization function Phi. MLP kinds apply per token:
//   phi(P_i) = LN(W_up^T relu(W_down^T P_i + b_down) + b_up)
// with the residual kind adding P_i back. The LSTM kind runs a
// bidirectional pass over the whole prompt sequence and projects the
// concatenated hidden states, so it is deliberately sequence-dependent.
class ReparamNet {
public:
    static ReparamNet init(const ReparamSpec& spec, std::size_t d, std::size_t n,
                           std::uint64_t seed);

    const ReparamSpec& spec() const { return spec_; }
    std::size_t embed_dim() const { return d_; }
    std::size_t prompt_len() const { return n_; }

    Tensor apply(const Tensor& prompt, bool training = false, Rng* dropout_rng = nullptr) const;

    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

private:
    ReparamNet() = default;
    Tensor apply_mlp_rows(const Tensor& rows, const std::string& prefix) const;
    Tensor apply_lstm(const Tensor& prompt, bool training, Rng* dropout_rng) const;

    ReparamSpec spec_;
    std::size_t d_ = 0;
    std::size_t n_ = 0;
    ParamRegistry params_;
};

// Project-and-discard: returns a frozen bank holding Phi(P); the live
// network and original P play no further part at inference.
PromptBank bake(const ReparamSpec& spec, const ReparamNet& net, const PromptBank& bank);

struct ParamCounts {
    std::size_t trainable = 0;
    std::size_t task_specific_at_inference = 0;
};

// Closed-form counts; identity -> (dn, dn), shared MLP -> (2dm + 2d + dn, dn),
// separate MLPs -> (n(2dm + 2d) + dn, dn), biases add m + d per network when
// enabled. The LSTM count enumerates its tensors.
ParamCounts count_params(const ReparamSpec& spec, std::size_t d, std::size_t n);

// ---------------------------------------------------------------------------
// Prompt checkpoint files
// ---------------------------------------------------------------------------

// JSON header {spec, n, d, init, seed, baked}; a baked file contains exactly
// one tensor record named "prompt.baked", a live file carries "prompt.P"
// plus the reparameterization tensors.
void save_prompt_checkpoint(const std::filesystem::path& path, const PromptBank& bank,
                            const ReparamNet* net);

struct LoadedPrompt {
    PromptBank bank;
    ReparamSpec spec;
    std::optional<ReparamNet> net;  // absent for baked files
};

LoadedPrompt load_prompt_checkpoint(const std::filesystem::path& path);

}  // namespace rpt
