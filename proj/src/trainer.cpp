#include "rpt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rpt/serialize.hpp"

namespace rpt {

namespace {
using json = nlohmann::ordered_json;

std::int64_t elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
}

void save_state_checkpoint(const std::filesystem::path& path,
                           const std::vector<Parameter*>& params, std::size_t epoch,
                           const std::string& config_hash) {
    json meta;
    meta["epoch"] = epoch;
    meta["config_hash"] = config_hash;
    Checkpoint ckpt;
    ckpt.meta_json = meta.dump();
    for (const Parameter* p : params) ckpt.tensors.push_back({p->name, p->tensor});
    save_checkpoint(path, ckpt);
}

}  // namespace

OptimConfig TrainConfig::optim() const {
    OptimConfig cfg;
    cfg.lr = lr;
    cfg.weight_decay = weight_decay;
    cfg.beta1 = beta1;
    cfg.beta2 = beta2;
    cfg.eps = eps_opt;
    cfg.bias_correction = bias_correction;
    cfg.grad_clip = grad_clip;
    cfg.group_lr_scale = group_lr_scale;
    return cfg;
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train config: lr must be positive");
    if (batch == 0) throw ConfigError("train config: batch must be at least 1");
    if (epochs == 0) throw ConfigError("train config: epochs must be at least 1");
}

std::string MetricsRecord::to_json_line() const {
    json j;
    j["epoch"] = epoch;
    j["split"] = split;
    j["task"] = task;
    j["metric"] = metric;
    j["value"] = value;
    j["wall_ms"] = wall_ms;
    j["config_hash"] = config_hash;
    return j.dump();
}

void write_metrics_jsonl(const std::filesystem::path& path,
                         const std::vector<MetricsRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ContractError("cannot open for writing: " + path.string());
    for (const auto& r : records) out << r.to_json_line() << "\n";
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open: " + path.string());
    std::vector<MetricsRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        MetricsRecord r;
        r.epoch = j.at("epoch").get<std::size_t>();
        r.split = j.at("split").get<std::string>();
        r.task = j.at("task").get<std::string>();
        r.metric = j.at("metric").get<std::string>();
        r.value = j.at("value").get<double>();
        r.wall_ms = j.at("wall_ms").get<std::int64_t>();
        r.config_hash = j.at("config_hash").get<std::string>();
        records.push_back(std::move(r));
    }
    return records;
}

std::map<std::string, Tensor> snapshot_tensors(const std::vector<Parameter*>& params) {
    std::map<std::string, Tensor> out;
    for (const Parameter* p : params) out.emplace(p->name, p->tensor.detached_copy());
    return out;
}

void restore_tensors(const std::map<std::string, Tensor>& snapshot,
                     std::vector<Parameter*> params) {
    for (Parameter* p : params) {
        auto it = snapshot.find(p->name);
        if (it == snapshot.end()) {
            throw ContractError("snapshot missing parameter " + p->name);
        }
        auto src = it->second.data();
        std::copy(src.begin(), src.end(), p->tensor.data_mut().begin());
    }
}

MetricsRecord evaluate(const TuningModel& model, const Tensor& prompt_rows,
                       const TaskSpec& task, const std::string& split, std::size_t epoch,
                       const std::string& config_hash) {
    NoGradGuard no_grad;
    const std::vector<Example>* examples = nullptr;
    if (split == "train") {
        examples = &task.train;
    } else if (split == "val") {
        examples = &task.val;
    } else {
        throw ConfigError("unknown split: " + split);
    }
    std::size_t correct = 0;
    for (const Example& ex : *examples) {
        if (predict(model, task, ex, prompt_rows) == ex.label) ++correct;
    }
    MetricsRecord record;
    record.epoch = epoch;
    record.split = split;
    record.task = task.name;
    record.metric = task.metric;
    record.value = examples->empty()
                       ? 0.0
                       : static_cast<double>(correct) / static_cast<double>(examples->size());
    record.wall_ms = 0;
    record.config_hash = config_hash;
    return record;
}

TrainResult train_loop(TuningModel& model, const TaskSpec& task, const TrainConfig& cfg,
                       const std::filesystem::path& run_dir) {
    cfg.validate();
    if (task.train.empty()) {
        throw ContractError("train_loop: task " + task.name + " has an empty train split");
    }
    if (model.method != Method::fine_tune && !model.backbone->frozen()) {
        throw ContractError("train_loop: backbone must be frozen for prompt methods");
    }

    (void)model.all_params();  // validates name uniqueness across the session
    std::vector<Parameter*> trainable = model.trainable_params();
    AdamW opt(trainable, cfg.optim());
    Rng dropout_rng(derive_seed(cfg.seed, "lstm-dropout"));

    std::ofstream log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        log.open(run_dir / "run.log", std::ios::app);
    }

    TrainResult result;
    result.best_value = -1.0;
    const std::size_t train_size = task.train.size();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<std::size_t> order(train_size);
        for (std::size_t i = 0; i < train_size; ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < train_size; start += cfg.batch) {
            const std::size_t stop = std::min(train_size, start + cfg.batch);
            opt.zero_grad();
            Tensor prompt_rows = reparameterized_prompt(model, /*training=*/true, &dropout_rng);
            Tensor batch_loss;
            for (std::size_t i = start; i < stop; ++i) {
                Tensor item = example_loss(model, task, task.train[order[i]], prompt_rows);
                batch_loss = batch_loss.defined() ? ops::add(batch_loss, item) : item;
            }
            batch_loss = ops::scale(batch_loss, 1.0 / static_cast<double>(stop - start));
            const double value = batch_loss.value();
            if (!std::isfinite(value)) {
                throw NumericError("train_loop: non-finite loss at epoch " +
                                   std::to_string(epoch));
            }
            loss_sum += value * static_cast<double>(stop - start);
            batch_loss.backward();
            opt.step();
        }

        const double train_loss = loss_sum / static_cast<double>(train_size);
        Tensor eval_prompt = reparameterized_prompt(model, /*training=*/false);
        MetricsRecord val =
            evaluate(model, eval_prompt, task, "val", epoch, cfg.config_hash);
        const std::int64_t wall = elapsed_ms(t0);
        const std::int64_t recorded_wall = cfg.record_wall_time ? wall : 0;

        MetricsRecord train_rec;
        train_rec.epoch = epoch;
        train_rec.split = "train";
        train_rec.task = task.name;
        train_rec.metric = "loss";
        train_rec.value = train_loss;
        train_rec.wall_ms = recorded_wall;
        train_rec.config_hash = cfg.config_hash;
        val.wall_ms = recorded_wall;
        result.records.push_back(train_rec);
        result.records.push_back(val);

        if (log.is_open()) {
            log << "epoch " << epoch << " train_loss " << train_loss << " val_"
                << task.metric << " " << val.value << " wall_ms " << wall << "\n";
        }
        if (!run_dir.empty() && cfg.keep_epoch_checkpoints) {
            save_state_checkpoint(run_dir / ("epoch-" + std::to_string(epoch) + ".ckpt"),
                                  trainable, epoch, cfg.config_hash);
        }
        if (val.value > result.best_value) {
            result.best_value = val.value;
            result.best_epoch = epoch;
            result.best_state = snapshot_tensors(trainable);
        }
    }

    // leave the session at the best-validation state before persisting it
    restore_tensors(result.best_state, trainable);
    if (!run_dir.empty()) {
        save_state_checkpoint(run_dir / "best.ckpt", trainable, result.best_epoch,
                              cfg.config_hash);
        if (model.bank) {
            ReparamSpec spec = model.spec;
            PromptBank baked;
            if (model.net) {
                baked = bake(spec, *model.net, *model.bank);
            } else {
                spec.kind = ReparamKind::identity;
                baked = bake(spec, ReparamNet::init(spec, model.bank->d, model.bank->n, 0),
                             *model.bank);
            }
            save_prompt_checkpoint(run_dir / "baked.prompt", baked, nullptr);
        }
    }
    return result;
}

TaskSpec few_shot_subset(const TaskSpec& task, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw ContractError("few_shot_subset: k must be at least 1");
    if (k * task.classes > task.train.size()) {
        throw ContractError("few_shot_subset: need " + std::to_string(k * task.classes) +
                            " examples, train split has " +
                            std::to_string(task.train.size()));
    }
    std::vector<std::vector<std::size_t>> by_class(task.classes);
    for (std::size_t i = 0; i < task.train.size(); ++i) {
        by_class[task.train[i].label].push_back(i);
    }
    Rng rng(derive_seed(seed, "fewshot:" + task.name, k));
    std::vector<std::size_t> picked;
    for (std::size_t c = 0; c < task.classes; ++c) {
        if (by_class[c].size() < k) {
            throw ContractError("few_shot_subset: class " + std::to_string(c) + " has only " +
                                std::to_string(by_class[c].size()) + " examples");
        }
        rng.shuffle(by_class[c]);
        picked.insert(picked.end(), by_class[c].begin(),
                      by_class[c].begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(picked.begin(), picked.end());

    TaskSpec subset = task;
    subset.train.clear();
    subset.subset_ids = picked;
    for (std::size_t i : picked) subset.train.push_back(task.train[i]);
    return subset;
}

TrainResult fine_tune_mode(TuningModel& model, const TaskSpec& task, const TrainConfig& cfg,
                           const std::filesystem::path& run_dir) {
    if (model.method != Method::fine_tune) {
        throw ContractError("fine_tune_mode: model was not built for fine-tuning");
    }
    if (model.backbone->frozen()) {
        throw ContractError("fine_tune_mode: backbone copy must be unfrozen");
    }
    return train_loop(model, task, cfg, run_dir);
}

}  // namespace rpt
