#include "rpt/model.hpp"

#include <cmath>

namespace rpt {

std::string method_name(Method method) {
    switch (method) {
        case Method::pt: return "pt";
        case Method::res_pt: return "res-pt";
        case Method::mlp_pt: return "mlp-pt";
        case Method::lstm_pt: return "lstm-pt";
        case Method::fine_tune: return "fine-tune";
    }
    throw ContractError("unreachable method");
}

Method method_from_name(const std::string& name) {
    if (name == "pt") return Method::pt;
    if (name == "res-pt") return Method::res_pt;
    if (name == "mlp-pt") return Method::mlp_pt;
    if (name == "lstm-pt") return Method::lstm_pt;
    if (name == "fine-tune") return Method::fine_tune;
    throw ConfigError("unknown method: " + name);
}

ReparamKind method_reparam_kind(Method method) {
    switch (method) {
        case Method::pt: return ReparamKind::identity;
        case Method::res_pt: return ReparamKind::residual_mlp;
        case Method::mlp_pt: return ReparamKind::mlp_no_skip;
        case Method::lstm_pt: return ReparamKind::lstm;
        case Method::fine_tune:
            throw ContractError("fine-tune mode has no reparameterization");
    }
    throw ContractError("unreachable method");
}

const Tensor* TuningModel::head() const {
    const Parameter* p = own_params.find("head.w");
    return p ? &p->tensor : nullptr;
}

std::vector<Parameter*> TuningModel::trainable_params() {
    std::vector<Parameter*> out;
    own_params.append_pointers(out);  // includes prompt.P and head.w
    if (net) net->params().append_pointers(out);
    if (method == Method::fine_tune) backbone->params().append_pointers(out);
    std::erase_if(out, [](Parameter* p) { return !p->trainable; });
    return out;
}

std::vector<Parameter*> TuningModel::all_params() {
    std::vector<Parameter*> out;
    own_params.append_pointers(out);
    if (net) net->params().append_pointers(out);
    backbone->params().append_pointers(out);
    check_unique_names(out);
    return out;
}

TuningModel build_tuning_model(std::shared_ptr<Backbone> backbone, Method method,
                               const ReparamSpec& spec, std::size_t prompt_len,
                               PromptInit init, std::size_t classes, std::uint64_t seed) {
    TuningModel model;
    model.backbone = std::move(backbone);
    model.method = method;
    model.spec = spec;

    if (method != Method::fine_tune) {
        if (!model.backbone->frozen()) {
            throw ContractError("prompt methods require a frozen backbone");
        }
        model.spec.kind = method_reparam_kind(method);
        model.spec.validate();
        model.bank = init_prompt(init, prompt_len, model.backbone->token_embeddings(),
                                 derive_seed(seed, "prompt"));
        model.own_params.add("prompt.P", model.bank->P, /*trainable=*/true);
        if (model.spec.kind != ReparamKind::identity) {
            model.net = ReparamNet::init(model.spec, model.bank->d, model.bank->n,
                                         derive_seed(seed, "reparam"));
        }
    } else if (model.backbone->frozen()) {
        throw ContractError("fine-tune mode requires an unfrozen backbone copy");
    }

    if (model.arch() == Arch::encoder_only) {
        const std::size_t d = model.backbone->config().d_model;
        Rng rng(derive_seed(seed, "head"));
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> w(classes * d);
        for (auto& v : w) v = rng.uniform(-s, s);
        model.own_params.add("head.w", Tensor::from_data({classes, d}, std::move(w)), true);
    }
    return model;
}

Tensor reparameterized_prompt(const TuningModel& model, bool training, Rng* dropout_rng) {
    if (!model.bank) return Tensor();
    if (!model.net) return model.bank->P;
    return model.net->apply(model.bank->P, training, dropout_rng);
}

Tensor example_loss(const TuningModel& model, const TaskSpec& task, const Example& ex,
                    const Tensor& prompt_rows) {
    const Backbone& bb = *model.backbone;
    const std::size_t n = model.prompt_len();
    if (bb.config().arch == Arch::encoder_only) {
        SequenceRecipe recipe =
            format_encoder_only(n, ex, bb.config().max_len).trimmed();
        Tensor x = bb.embed(recipe, prompt_rows);
        Tensor hidden = bb.encode(x, recipe.attention_mask());
        Tensor logits = bb.classify_logits(hidden, recipe.cls_pos, *model.head());
        return ops::cross_entropy(logits, ex.label);
    }
    SequenceRecipe recipe =
        format_encoder_decoder(n, ex, task.verbalizer, bb.config().max_len).trimmed();
    Tensor x = bb.embed(recipe, prompt_rows);
    return bb.seq2seq_nll(x, recipe.attention_mask(), recipe.label_tokens);
}

std::vector<double> example_logits(const TuningModel& model, const TaskSpec& task,
                                   const Example& ex, const Tensor& prompt_rows) {
    NoGradGuard no_grad;
    const Backbone& bb = *model.backbone;
    const std::size_t n = prompt_rows.defined() ? prompt_rows.extent(0) : 0;
    Tensor logits;
    if (bb.config().arch == Arch::encoder_only) {
        SequenceRecipe recipe =
            format_encoder_only(n, ex, bb.config().max_len).trimmed();
        Tensor x = bb.embed(recipe, prompt_rows);
        Tensor hidden = bb.encode(x, recipe.attention_mask());
        logits = bb.classify_logits(hidden, recipe.cls_pos, *model.head());
    } else {
        SequenceRecipe recipe =
            format_encoder_decoder(n, ex, task.verbalizer, bb.config().max_len).trimmed();
        Tensor x = bb.embed(recipe, prompt_rows);
        logits = bb.seq2seq_logits(x, recipe.attention_mask(), recipe.label_tokens);
    }
    return {logits.data().begin(), logits.data().end()};
}

std::size_t predict(const TuningModel& model, const TaskSpec& task, const Example& ex,
                    const Tensor& prompt_rows) {
    NoGradGuard no_grad;
    const Backbone& bb = *model.backbone;
    const std::size_t n = prompt_rows.defined() ? prompt_rows.extent(0) : 0;
    if (bb.config().arch == Arch::encoder_only) {
        SequenceRecipe recipe =
            format_encoder_only(n, ex, bb.config().max_len).trimmed();
        Tensor x = bb.embed(recipe, prompt_rows);
        Tensor hidden = bb.encode(x, recipe.attention_mask());
        Tensor logits = bb.classify_logits(hidden, recipe.cls_pos, *model.head());
        auto row = logits.data();
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        return best;
    }
    SequenceRecipe recipe =
        format_encoder_decoder(n, ex, task.verbalizer, bb.config().max_len).trimmed();
    Tensor x = bb.embed(recipe, prompt_rows);
    auto decoded = bb.greedy_decode(x, recipe.attention_mask(), task.verbalizer.max_len());
    auto match = task.verbalizer.match(decoded);
    // unmatched decodes count as a wrong prediction
    if (match) return *match;
    return ex.label == 0 && task.classes > 1 ? 1 : 0;
}

}  // namespace rpt
