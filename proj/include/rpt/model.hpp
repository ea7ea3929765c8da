#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rpt/backbone.hpp"
#include "rpt/reparam.hpp"

namespace rpt {

enum class Method { pt, res_pt, mlp_pt, lstm_pt, fine_tune };

std::string method_name(Method method);
Method method_from_name(const std::string& name);
// pt trains a bare prompt, which is the identity reparameterization.
ReparamKind method_reparam_kind(Method method);

// One tuning session: a backbone (frozen and shared for prompt methods,
// an owned trainable clone for fine-tuning), the prompt bank, the live
// reparameterization network and the classification head.
struct TuningModel {
    std::shared_ptr<Backbone> backbone;
    Method method = Method::res_pt;
    ReparamSpec spec;
    std::optional<PromptBank> bank;  // absent in fine-tune mode
    std::optional<ReparamNet> net;   // absent for identity / fine-tune
    ParamRegistry own_params;        // head.w for the encoder-only head

    std::size_t prompt_len() const { return bank ? bank->n : 0; }
    Arch arch() const { return backbone->config().arch; }
    const Tensor* head() const;

    // Parameters the optimizer may touch. Prompt methods: prompt.P,
    // reparam.*, head.*; fine-tune additionally includes every backbone
    // parameter.
    std::vector<Parameter*> trainable_params();
    // Every parameter in the session, trainable or not.
    std::vector<Parameter*> all_params();
};

TuningModel build_tuning_model(std::shared_ptr<Backbone> backbone, Method method,
                               const ReparamSpec& spec, std::size_t prompt_len,
                               PromptInit init, std::size_t classes, std::uint64_t seed);

// Reparameterized prompt for the current P. Pass training=true only inside
// the optimization loop (the LSTM variant applies dropout there).
Tensor reparameterized_prompt(const TuningModel& model, bool training = false,
                              Rng* dropout_rng = nullptr);

// Scalar task loss for one example; `prompt_rows` is shared across a batch
// so its gradients accumulate over examples.
Tensor example_loss(const TuningModel& model, const TaskSpec& task, const Example& ex,
                    const Tensor& prompt_rows);

// Raw output logits for one example: class logits (encoder-only) or the
// teacher-forced label-position vocabulary logits (encoder-decoder).
// `prompt_rows` may be a live reparameterization or a baked matrix, which is
// what the bake-equivalence checks compare.
std::vector<double> example_logits(const TuningModel& model, const TaskSpec& task,
                                   const Example& ex, const Tensor& prompt_rows);

// Greedy prediction; classification takes the argmax class, the
// encoder-decoder mode decodes and matches against the verbalizer.
std::size_t predict(const TuningModel& model, const TaskSpec& task, const Example& ex,
                    const Tensor& prompt_rows);

}  // namespace rpt
