#include "rpt/reparam.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "rpt/serialize.hpp"

namespace rpt {

namespace {
using json = nlohmann::ordered_json;

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data));
}
}  // namespace

std::string prompt_init_name(PromptInit init) {
    return init == PromptInit::random_uniform ? "random-uniform" : "sampled-vocab";
}

PromptInit prompt_init_from_name(const std::string& name) {
    if (name == "random-uniform") return PromptInit::random_uniform;
    if (name == "sampled-vocab") return PromptInit::sampled_vocab;
    throw ConfigError("unknown prompt init strategy: " + name);
}

PromptBank init_prompt(PromptInit strategy, std::size_t n, const Tensor& embeddings,
                       std::uint64_t seed) {
    if (n == 0) throw ContractError("init_prompt: prompt length must be at least 1");
    if (embeddings.rank() != 2) {
        throw DimensionError("init_prompt: embedding table must be rank 2, got " +
                             shape_to_string(embeddings.shape()));
    }
    const std::size_t vocab = embeddings.extent(0);
    const std::size_t d = embeddings.extent(1);
    Rng rng(derive_seed(seed, "prompt-init"));

    PromptBank bank;
    bank.n = n;
    bank.d = d;
    bank.init = strategy;
    bank.seed = seed;
    std::vector<double> data(n * d);
    if (strategy == PromptInit::random_uniform) {
        for (auto& v : data) v = rng.uniform(-0.5, 0.5);
    } else {
        auto table = embeddings.data();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t row = static_cast<std::size_t>(rng.below(vocab));
            std::copy(table.begin() + static_cast<std::ptrdiff_t>(row * d),
                      table.begin() + static_cast<std::ptrdiff_t>((row + 1) * d),
                      data.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
    }
    bank.P = Tensor::from_data({n, d}, std::move(data), /*requires_grad=*/true);
    return bank;
}

std::string reparam_kind_name(ReparamKind kind) {
    switch (kind) {
        case ReparamKind::identity: return "identity";
        case ReparamKind::residual_mlp: return "residual-mlp";
        case ReparamKind::mlp_no_skip: return "mlp-no-skip";
        case ReparamKind::lstm: return "lstm";
    }
    throw ContractError("unreachable reparam kind");
}

ReparamKind reparam_kind_from_name(const std::string& name) {
    if (name == "identity") return ReparamKind::identity;
    if (name == "residual-mlp") return ReparamKind::residual_mlp;
    if (name == "mlp-no-skip") return ReparamKind::mlp_no_skip;
    if (name == "lstm") return ReparamKind::lstm;
    throw ConfigError("unknown reparameterization kind: " + name);
}

void ReparamSpec::validate() const {
    if (is_mlp() && m == 0) {
        throw ConfigError("reparam spec: MLP bottleneck width must be at least 1");
    }
    if (!shared && !is_mlp()) {
        throw ConfigError("reparam spec: separate networks are only defined for MLP kinds");
    }
    if (kind == ReparamKind::lstm && lstm_hidden == 0) {
        throw ConfigError("reparam spec: lstm_hidden must be at least 1");
    }
    if (lstm_dropout < 0.0 || lstm_dropout >= 1.0) {
        throw ConfigError("reparam spec: lstm_dropout must be in [0, 1)");
    }
}

std::string ReparamSpec::to_json() const {
    json j;
    j["kind"] = reparam_kind_name(kind);
    j["m"] = m;
    j["shared"] = shared;
    j["biases"] = biases;
    j["lstm_hidden"] = lstm_hidden;
    j["lstm_dropout"] = lstm_dropout;
    j["ln_eps"] = ln_eps;
    return j.dump();
}

ReparamSpec ReparamSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    ReparamSpec spec;
    spec.kind = reparam_kind_from_name(j.at("kind").get<std::string>());
    spec.m = j.at("m").get<std::size_t>();
    spec.shared = j.at("shared").get<bool>();
    spec.biases = j.at("biases").get<bool>();
    spec.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    spec.lstm_dropout = j.at("lstm_dropout").get<double>();
    spec.ln_eps = j.at("ln_eps").get<double>();
    spec.validate();
    return spec;
}

ReparamNet ReparamNet::init(const ReparamSpec& spec, std::size_t d, std::size_t n,
                            std::uint64_t seed) {
    spec.validate();
    if (d == 0 || n == 0) throw ConfigError("reparam net: d and n must be at least 1");
    ReparamNet net;
    net.spec_ = spec;
    net.d_ = d;
    net.n_ = n;
    Rng rng(derive_seed(seed, "reparam-init"));

    auto add_mlp_set = [&](const std::string& prefix) {
        const double down = 1.0 / std::sqrt(static_cast<double>(d));
        const double up = 1.0 / std::sqrt(static_cast<double>(spec.m));
        net.params_.add(prefix + ".w_down", uniform_tensor({d, spec.m}, -down, down, rng));
        if (spec.biases) net.params_.add(prefix + ".b_down", Tensor::zeros({spec.m}));
        net.params_.add(prefix + ".w_up", uniform_tensor({spec.m, d}, -up, up, rng));
        if (spec.biases) net.params_.add(prefix + ".b_up", Tensor::zeros({d}));
        net.params_.add(prefix + ".ln.g", Tensor::filled({d}, 1.0));
        net.params_.add(prefix + ".ln.b", Tensor::zeros({d}));
    };

    switch (spec.kind) {
        case ReparamKind::identity:
            break;
        case ReparamKind::residual_mlp:
        case ReparamKind::mlp_no_skip:
            if (spec.shared) {
                add_mlp_set("reparam.shared");
            } else {
                for (std::size_t i = 0; i < n; ++i) add_mlp_set("reparam." + std::to_string(i));
            }
            break;
        case ReparamKind::lstm: {
            const std::size_t h = spec.lstm_hidden;
            const double s = 1.0 / std::sqrt(static_cast<double>(h));
            for (const char* dir : {"fwd", "bwd"}) {
                for (const char* gate : {"i", "f", "g", "o"}) {
                    const std::string p = std::string("reparam.lstm.") + dir + "." + gate;
                    net.params_.add(p + ".w_x", uniform_tensor({d, h}, -s, s, rng));
                    net.params_.add(p + ".w_h", uniform_tensor({h, h}, -s, s, rng));
                    net.params_.add(p + ".b", Tensor::zeros({h}));
                }
            }
            net.params_.add("reparam.lstm.proj",
                            uniform_tensor({2 * h, d}, -s, s, rng));
            break;
        }
    }
    return net;
}

Tensor ReparamNet::apply_mlp_rows(const Tensor& rows, const std::string& prefix) const {
    Tensor h = ops::matmul(rows, params_.at(prefix + ".w_down").tensor);
    if (spec_.biases) h = ops::add_rowwise(h, params_.at(prefix + ".b_down").tensor);
    h = ops::relu(h);
    Tensor up = ops::matmul(h, params_.at(prefix + ".w_up").tensor);
    if (spec_.biases) up = ops::add_rowwise(up, params_.at(prefix + ".b_up").tensor);
    Tensor normed = ops::layer_norm(up, params_.at(prefix + ".ln.g").tensor,
                                    params_.at(prefix + ".ln.b").tensor, spec_.ln_eps);
    return spec_.kind == ReparamKind::residual_mlp ? ops::add(normed, rows) : normed;
}

Tensor ReparamNet::apply_lstm(const Tensor& prompt, bool training, Rng* dropout_rng) const {
    const std::size_t n = prompt.extent(0);
    const std::size_t h = spec_.lstm_hidden;

    auto run_direction = [&](const char* dir, bool reverse) {
        const std::string base = std::string("reparam.lstm.") + dir;
        auto gate = [&](const char* g, const Tensor& x, const Tensor& hidden) {
            const std::string p = base + "." + g;
            Tensor pre = ops::add(ops::matmul(x, params_.at(p + ".w_x").tensor),
                                  ops::matmul(hidden, params_.at(p + ".w_h").tensor));
            return ops::add_rowwise(pre, params_.at(p + ".b").tensor);
        };
        std::vector<Tensor> outputs(n);
        Tensor hidden = Tensor::zeros({1, h});
        Tensor cell = Tensor::zeros({1, h});
        for (std::size_t step = 0; step < n; ++step) {
            const std::size_t t = reverse ? n - 1 - step : step;
            Tensor x = ops::slice_rows(prompt, t, 1);
            Tensor gi = ops::sigmoid(gate("i", x, hidden));
            Tensor gf = ops::sigmoid(gate("f", x, hidden));
            Tensor gg = ops::tanh(gate("g", x, hidden));
            Tensor go = ops::sigmoid(gate("o", x, hidden));
            cell = ops::add(ops::mul(gf, cell), ops::mul(gi, gg));
            hidden = ops::mul(go, ops::tanh(cell));
            outputs[t] = hidden;
        }
        return outputs;
    };

    auto fwd = run_direction("fwd", false);
    auto bwd = run_direction("bwd", true);
    Tensor stacked;
    for (std::size_t t = 0; t < n; ++t) {
        Tensor row = ops::concat_cols(fwd[t], bwd[t]);
        stacked = stacked.defined() ? ops::concat_seq(stacked, row) : row;
    }
    if (training && spec_.lstm_dropout > 0.0) {
        if (!dropout_rng) {
            throw ContractError("lstm reparam: training pass needs a dropout rng");
        }
        stacked = ops::dropout(stacked, spec_.lstm_dropout, true, *dropout_rng);
    }
    return ops::matmul(stacked, params_.at("reparam.lstm.proj").tensor);
}

Tensor ReparamNet::apply(const Tensor& prompt, bool training, Rng* dropout_rng) const {
    if (prompt.rank() != 2 || prompt.extent(1) != d_) {
        throw DimensionError("reparam apply: prompt must be [n x " + std::to_string(d_) +
                             "], got " + shape_to_string(prompt.shape()));
    }
    switch (spec_.kind) {
        case ReparamKind::identity:
            return prompt;
        case ReparamKind::residual_mlp:
        case ReparamKind::mlp_no_skip: {
            if (spec_.shared) return apply_mlp_rows(prompt, "reparam.shared");
            if (prompt.extent(0) != n_) {
                throw DimensionError("separate reparam nets were sized for n = " +
                                     std::to_string(n_));
            }
            Tensor out;
            for (std::size_t i = 0; i < n_; ++i) {
                Tensor row = apply_mlp_rows(ops::slice_rows(prompt, i, 1),
                                            "reparam." + std::to_string(i));
                out = out.defined() ? ops::concat_seq(out, row) : row;
            }
            return out;
        }
        case ReparamKind::lstm:
            return apply_lstm(prompt, training, dropout_rng);
    }
    throw ContractError("unreachable reparam kind");
}

PromptBank bake(const ReparamSpec& spec, const ReparamNet& net, const PromptBank& bank) {
    NoGradGuard no_grad;
    (void)spec;
    PromptBank baked;
    baked.P = net.apply(bank.P, /*training=*/false).detached_copy();
    baked.n = bank.n;
    baked.d = bank.d;
    baked.init = bank.init;
    baked.seed = bank.seed;
    baked.baked = true;
    return baked;
}

ParamCounts count_params(const ReparamSpec& spec, std::size_t d, std::size_t n) {
    spec.validate();
    ParamCounts counts;
    counts.task_specific_at_inference = d * n;
    switch (spec.kind) {
        case ReparamKind::identity:
            counts.trainable = d * n;
            break;
        case ReparamKind::residual_mlp:
        case ReparamKind::mlp_no_skip: {
            std::size_t per_net = 2 * d * spec.m + 2 * d + (spec.biases ? spec.m + d : 0);
            counts.trainable = (spec.shared ? per_net : n * per_net) + d * n;
            break;
        }
        case ReparamKind::lstm: {
            const std::size_t h = spec.lstm_hidden;
            const std::size_t per_dir = 4 * (d * h + h * h + h);
            counts.trainable = 2 * per_dir + 2 * h * d + d * n;
            break;
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Prompt checkpoint files
// ---------------------------------------------------------------------------

void save_prompt_checkpoint(const std::filesystem::path& path, const PromptBank& bank,
                            const ReparamNet* net) {
    json meta;
    meta["spec"] = json::parse(net ? net->spec().to_json()
                                   : ReparamSpec{.kind = ReparamKind::identity}.to_json());
    meta["n"] = bank.n;
    meta["d"] = bank.d;
    meta["init"] = prompt_init_name(bank.init);
    meta["seed"] = bank.seed;
    meta["baked"] = bank.baked;

    Checkpoint ckpt;
    ckpt.meta_json = meta.dump();
    if (bank.baked) {
        ckpt.tensors.push_back({"prompt.baked", bank.P});
    } else {
        ckpt.tensors.push_back({"prompt.P", bank.P});
        if (net) {
            for (const auto& p : net->params().all()) ckpt.tensors.push_back({p.name, p.tensor});
        }
    }
    save_checkpoint(path, ckpt);
}

LoadedPrompt load_prompt_checkpoint(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    json meta = json::parse(ckpt.meta_json);

    LoadedPrompt loaded;
    loaded.spec = ReparamSpec::from_json(meta.at("spec").dump());
    loaded.bank.n = meta.at("n").get<std::size_t>();
    loaded.bank.d = meta.at("d").get<std::size_t>();
    loaded.bank.init = prompt_init_from_name(meta.at("init").get<std::string>());
    loaded.bank.seed = meta.at("seed").get<std::uint64_t>();
    loaded.bank.baked = meta.at("baked").get<bool>();

    if (loaded.bank.baked) {
        if (ckpt.tensors.size() != 1 || ckpt.tensors[0].name != "prompt.baked") {
            throw ContractError("baked prompt checkpoint must hold exactly one tensor "
                                "named prompt.baked");
        }
        loaded.bank.P = ckpt.tensors[0].tensor;
        return loaded;
    }

    const NamedTensor* live = ckpt.find("prompt.P");
    if (!live) throw ContractError("prompt checkpoint missing prompt.P");
    loaded.bank.P = live->tensor;
    loaded.bank.P.set_requires_grad(true);
    loaded.net = ReparamNet::init(loaded.spec, loaded.bank.d, loaded.bank.n, 0);
    for (auto& p : loaded.net->params().all()) {
        const NamedTensor* stored = ckpt.find(p.name);
        if (!stored) throw ContractError("prompt checkpoint missing tensor " + p.name);
        if (stored->tensor.shape() != p.tensor.shape()) {
            throw DimensionError("prompt checkpoint tensor " + p.name + " has shape " +
                                 shape_to_string(stored->tensor.shape()));
        }
        std::copy(stored->tensor.data().begin(), stored->tensor.data().end(),
                  p.tensor.data_mut().begin());
    }
    return loaded;
}

}  // namespace rpt
