#include "rpt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "rpt/serialize.hpp"

namespace rpt {

namespace {
using json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("cannot format double");
    return std::string(buf, ptr);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("field " + key + ": expected a number, got '" + text + "'");
    }
    return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("field " + key + ": expected a non-negative integer, got '" +
                          text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ConfigError("field " + key + ": expected true or false, got '" + text + "'");
}

struct FieldDef {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<FieldDef>& config_fields() {
    static const std::vector<FieldDef> fields = {
        {"arch", [](const RunConfig& c) { return c.arch; },
         [](RunConfig& c, const std::string& v) { c.arch = v; }},
        {"method", [](const RunConfig& c) { return c.method; },
         [](RunConfig& c, const std::string& v) { c.method = v; }},
        {"prompt.n", [](const RunConfig& c) { return std::to_string(c.prompt_n); },
         [](RunConfig& c, const std::string& v) { c.prompt_n = parse_u64("prompt.n", v); }},
        {"prompt.init", [](const RunConfig& c) { return c.prompt_init; },
         [](RunConfig& c, const std::string& v) { c.prompt_init = v; }},
        {"reparam.m", [](const RunConfig& c) { return std::to_string(c.reparam_m); },
         [](RunConfig& c, const std::string& v) { c.reparam_m = parse_u64("reparam.m", v); }},
        {"reparam.shared", [](const RunConfig& c) { return c.reparam_shared ? "true" : "false"; },
         [](RunConfig& c, const std::string& v) {
             c.reparam_shared = parse_bool("reparam.shared", v);
         }},
        {"reparam.biases", [](const RunConfig& c) { return c.reparam_biases ? "true" : "false"; },
         [](RunConfig& c, const std::string& v) {
             c.reparam_biases = parse_bool("reparam.biases", v);
         }},
        {"reparam.lstm_hidden",
         [](const RunConfig& c) { return std::to_string(c.lstm_hidden); },
         [](RunConfig& c, const std::string& v) {
             c.lstm_hidden = parse_u64("reparam.lstm_hidden", v);
         }},
        {"reparam.lstm_dropout", [](const RunConfig& c) { return format_double(c.lstm_dropout); },
         [](RunConfig& c, const std::string& v) {
             c.lstm_dropout = parse_double("reparam.lstm_dropout", v);
         }},
        {"backbone.checkpoint", [](const RunConfig& c) { return c.backbone_checkpoint; },
         [](RunConfig& c, const std::string& v) { c.backbone_checkpoint = v; }},
        {"backbone.layers", [](const RunConfig& c) { return std::to_string(c.backbone_layers); },
         [](RunConfig& c, const std::string& v) {
             c.backbone_layers = parse_u64("backbone.layers", v);
         }},
        {"backbone.d", [](const RunConfig& c) { return std::to_string(c.backbone_d); },
         [](RunConfig& c, const std::string& v) { c.backbone_d = parse_u64("backbone.d", v); }},
        {"backbone.heads", [](const RunConfig& c) { return std::to_string(c.backbone_heads); },
         [](RunConfig& c, const std::string& v) {
             c.backbone_heads = parse_u64("backbone.heads", v);
         }},
        {"backbone.ffn", [](const RunConfig& c) { return std::to_string(c.backbone_ffn); },
         [](RunConfig& c, const std::string& v) {
             c.backbone_ffn = parse_u64("backbone.ffn", v);
         }},
        {"backbone.vocab", [](const RunConfig& c) { return std::to_string(c.backbone_vocab); },
         [](RunConfig& c, const std::string& v) {
             c.backbone_vocab = parse_u64("backbone.vocab", v);
         }},
        {"backbone.max_len", [](const RunConfig& c) { return std::to_string(c.backbone_max_len); },
         [](RunConfig& c, const std::string& v) {
             c.backbone_max_len = parse_u64("backbone.max_len", v);
         }},
        {"backbone.pretrain_steps",
         [](const RunConfig& c) { return std::to_string(c.pretrain_steps); },
         [](RunConfig& c, const std::string& v) {
             c.pretrain_steps = parse_u64("backbone.pretrain_steps", v);
         }},
        {"backbone.pretrain_seed",
         [](const RunConfig& c) { return std::to_string(c.pretrain_seed); },
         [](RunConfig& c, const std::string& v) {
             c.pretrain_seed = parse_u64("backbone.pretrain_seed", v);
         }},
        {"backbone.pretrain_corpus",
         [](const RunConfig& c) { return std::to_string(c.pretrain_corpus); },
         [](RunConfig& c, const std::string& v) {
             c.pretrain_corpus = parse_u64("backbone.pretrain_corpus", v);
         }},
        {"train.lr",
         [](const RunConfig& c) { return c.lr < 0.0 ? "auto" : format_double(c.lr); },
         [](RunConfig& c, const std::string& v) {
             c.lr = v == "auto" ? -1.0 : parse_double("train.lr", v);
         }},
        {"train.epochs",
         [](const RunConfig& c) {
             return c.epochs < 0 ? "auto" : std::to_string(c.epochs);
         },
         [](RunConfig& c, const std::string& v) {
             c.epochs = v == "auto" ? -1 : static_cast<long>(parse_u64("train.epochs", v));
         }},
        {"train.batch", [](const RunConfig& c) { return std::to_string(c.batch); },
         [](RunConfig& c, const std::string& v) { c.batch = parse_u64("train.batch", v); }},
        {"train.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
         [](RunConfig& c, const std::string& v) { c.seed = parse_u64("train.seed", v); }},
        {"train.weight_decay", [](const RunConfig& c) { return format_double(c.weight_decay); },
         [](RunConfig& c, const std::string& v) {
             c.weight_decay = parse_double("train.weight_decay", v);
         }},
        {"train.beta1", [](const RunConfig& c) { return format_double(c.beta1); },
         [](RunConfig& c, const std::string& v) { c.beta1 = parse_double("train.beta1", v); }},
        {"train.beta2", [](const RunConfig& c) { return format_double(c.beta2); },
         [](RunConfig& c, const std::string& v) { c.beta2 = parse_double("train.beta2", v); }},
        {"train.eps", [](const RunConfig& c) { return format_double(c.eps_opt); },
         [](RunConfig& c, const std::string& v) { c.eps_opt = parse_double("train.eps", v); }},
        {"train.bias_correction",
         [](const RunConfig& c) { return c.bias_correction ? "true" : "false"; },
         [](RunConfig& c, const std::string& v) {
             c.bias_correction = parse_bool("train.bias_correction", v);
         }},
        {"train.grad_clip", [](const RunConfig& c) { return format_double(c.grad_clip); },
         [](RunConfig& c, const std::string& v) {
             c.grad_clip = parse_double("train.grad_clip", v);
         }},
        {"train.keep_epoch_ckpts",
         [](const RunConfig& c) { return c.keep_epoch_ckpts ? "true" : "false"; },
         [](RunConfig& c, const std::string& v) {
             c.keep_epoch_ckpts = parse_bool("train.keep_epoch_ckpts", v);
         }},
        {"train.record_wall_time",
         [](const RunConfig& c) { return c.record_wall_time ? "true" : "false"; },
         [](RunConfig& c, const std::string& v) {
             c.record_wall_time = parse_bool("train.record_wall_time", v);
         }},
        {"fewshot.k", [](const RunConfig& c) { return std::to_string(c.fewshot_k); },
         [](RunConfig& c, const std::string& v) { c.fewshot_k = parse_u64("fewshot.k", v); }},
        {"fewshot.seed", [](const RunConfig& c) { return std::to_string(c.fewshot_seed); },
         [](RunConfig& c, const std::string& v) {
             c.fewshot_seed = parse_u64("fewshot.seed", v);
         }},
        {"tasks.suite_seed", [](const RunConfig& c) { return std::to_string(c.suite_seed); },
         [](RunConfig& c, const std::string& v) {
             c.suite_seed = parse_u64("tasks.suite_seed", v);
         }},
        {"tasks.select", [](const RunConfig& c) { return c.task; },
         [](RunConfig& c, const std::string& v) { c.task = v; }},
    };
    return fields;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::validate() const {
    method_enum();
    arch_enum();
    prompt_init_from_name(prompt_init);
    backbone_config();
    if (method_enum() != Method::fine_tune) {
        if (prompt_n == 0) throw ConfigError("prompt.n must be at least 1 for prompt methods");
        reparam_spec();
    }
    if (lr == 0.0 || (lr < 0.0 && lr != -1.0)) {
        throw ConfigError("train.lr must be positive or auto");
    }
    if (batch == 0) throw ConfigError("train.batch must be at least 1");
    if (epochs == 0 || epochs < -1) throw ConfigError("train.epochs must be positive or auto");
}

double RunConfig::resolved_lr() const {
    if (lr > 0.0) return lr;
    switch (method_enum()) {
        case Method::pt: return 0.3;
        case Method::res_pt:
        case Method::mlp_pt:
        case Method::lstm_pt: return 0.7;
        case Method::fine_tune: return 0.001;
    }
    throw ContractError("unreachable method");
}

std::size_t RunConfig::resolved_epochs() const {
    if (epochs > 0) return static_cast<std::size_t>(epochs);
    if (method_enum() == Method::fine_tune) return 30;
    return prompt_n >= 100 ? 20 : 15;
}

BackboneConfig RunConfig::backbone_config() const {
    BackboneConfig cfg;
    cfg.arch = arch_enum();
    cfg.layers = backbone_layers;
    cfg.d_model = backbone_d;
    cfg.heads = backbone_heads;
    cfg.ffn = backbone_ffn;
    cfg.vocab = backbone_vocab;
    cfg.max_len = backbone_max_len;
    cfg.validate();
    return cfg;
}

ReparamSpec RunConfig::reparam_spec() const {
    ReparamSpec spec;
    spec.kind = method_reparam_kind(method_enum());
    spec.m = reparam_m;
    // a bare prompt has no network, so the sharing flag only means something
    // for the MLP kinds
    spec.shared = spec.is_mlp() ? reparam_shared : true;
    if (spec.kind == ReparamKind::lstm && !reparam_shared) {
        throw ConfigError("separate networks are only defined for MLP reparameterizations");
    }
    spec.biases = reparam_biases;
    spec.lstm_hidden = lstm_hidden;
    spec.lstm_dropout = lstm_dropout;
    spec.validate();
    return spec;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig cfg;
    cfg.lr = resolved_lr();
    cfg.batch = batch;
    cfg.epochs = resolved_epochs();
    cfg.seed = seed;
    cfg.weight_decay = weight_decay;
    cfg.beta1 = beta1;
    cfg.beta2 = beta2;
    cfg.eps_opt = eps_opt;
    cfg.bias_correction = bias_correction;
    cfg.grad_clip = grad_clip;
    cfg.keep_epoch_checkpoints = keep_epoch_ckpts;
    cfg.record_wall_time = record_wall_time;
    cfg.config_hash = config_hash();
    return cfg;
}

std::string RunConfig::to_kv_text(bool resolved) const {
    std::ostringstream out;
    for (const auto& field : config_fields()) {
        std::string value = field.get(*this);
        if (resolved) {
            if (std::string_view(field.key) == "train.lr" && value == "auto") {
                value = format_double(resolved_lr());
            } else if (std::string_view(field.key) == "train.epochs" && value == "auto") {
                value = std::to_string(resolved_epochs());
            }
        }
        out << field.key << " = " << value << "\n";
    }
    return out.str();
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    for (const auto& field : config_fields()) {
        if (key == field.key) {
            field.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown config key: " + key);
}

RunConfig RunConfig::from_kv_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        }
        cfg.apply_override(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::from_kv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_kv_text(ss.str());
}

std::string RunConfig::config_hash() const {
    return sha256_hex(to_kv_text(/*resolved=*/true)).substr(0, 16);
}

std::string RunConfig::run_id(const std::string& task_name) const {
    RunConfig effective = *this;
    effective.task = task_name;
    return method + "-" + task_name + "-s" + std::to_string(seed) + "-" +
           effective.config_hash().substr(0, 8);
}

// ---------------------------------------------------------------------------
// RunContext
// ---------------------------------------------------------------------------

std::filesystem::path default_runs_root() {
    if (const char* env = std::getenv("RPT_RUNS_DIR")) return env;
    return "runs";
}

RunContext::RunContext(std::filesystem::path runs_root) : runs_root_(std::move(runs_root)) {
    std::filesystem::create_directories(runs_root_);
}

std::vector<TaskSpec> RunContext::suite(std::uint64_t seed) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = suite_cache_.find(seed);
    if (it == suite_cache_.end()) {
        it = suite_cache_.emplace(seed, load_or_generate_suite(seed, tasks_dir())).first;
    }
    return it->second;
}

std::shared_ptr<const Backbone> RunContext::get_backbone(const RunConfig& cfg) {
    BackboneConfig bb_cfg = cfg.backbone_config();
    std::string key;
    if (!cfg.backbone_checkpoint.empty()) {
        key = "file:" + cfg.backbone_checkpoint;
    } else {
        key = sha256_hex(bb_cfg.to_json() + "|" + std::to_string(cfg.pretrain_steps) + "|" +
                         std::to_string(cfg.pretrain_seed) + "|" +
                         std::to_string(cfg.pretrain_corpus))
                  .substr(0, 16);
    }

    std::lock_guard<std::mutex> lock(mutex_);
    auto it = backbone_cache_.find(key);
    if (it != backbone_cache_.end()) return it->second;

    std::shared_ptr<Backbone> model;
    if (!cfg.backbone_checkpoint.empty()) {
        model = std::make_shared<Backbone>(Backbone::load(cfg.backbone_checkpoint));
        if (model->config() != bb_cfg) {
            throw ConfigError("backbone checkpoint config does not match run config");
        }
    } else {
        auto cached_path = backbones_dir() / ("auto-" + key + ".ckpt");
        if (std::filesystem::exists(cached_path)) {
            model = std::make_shared<Backbone>(Backbone::load(cached_path));
        } else {
            model = std::make_shared<Backbone>(
                Backbone::init(bb_cfg, derive_seed(cfg.pretrain_seed, "backbone")));
            Vocab vocab;
            vocab.size = bb_cfg.vocab;
            auto corpus =
                generate_pretrain_corpus(cfg.pretrain_seed, cfg.pretrain_corpus, vocab);
            PretrainStats stats =
                pretrain_backbone(*model, corpus, cfg.pretrain_steps, cfg.pretrain_seed);
            log_progress("pretrained backbone " + key + ": steps=" +
                         std::to_string(stats.steps) + " heldout_token_acc=" +
                         format_double(stats.heldout_token_accuracy));
            model->save(cached_path);
        }
    }
    model->freeze();
    backbone_cache_.emplace(key, model);
    return model;
}

void RunContext::log_progress(const std::string& line) {
    std::lock_guard<std::mutex> lock(mutex_);
    std::ofstream log(runs_root_ / "progress.log", std::ios::app);
    log << line << "\n";
}

// ---------------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------------

std::vector<std::string> selected_tasks(const RunConfig& cfg) {
    if (cfg.task == "all") return suite_task_names();
    return {cfg.task};
}

RunResult execute_run(const RunConfig& cfg, const std::string& task_name, RunContext& ctx) {
    RunConfig effective = cfg;
    effective.task = task_name;
    effective.validate();

    auto suite = ctx.suite(effective.suite_seed);
    const TaskSpec* found = nullptr;
    for (const auto& t : suite)
        if (t.name == task_name) found = &t;
    if (!found) throw ConfigError("unknown task: " + task_name);

    TaskSpec task = *found;
    task.kind = effective.arch_enum() == Arch::encoder_decoder ? TaskKind::seq2seq
                                                               : TaskKind::classification;
    if (effective.fewshot_k > 0) {
        task = few_shot_subset(task, effective.fewshot_k, effective.fewshot_seed);
    }

    std::shared_ptr<const Backbone> frozen = ctx.get_backbone(effective);
    TuningModel model;
    const Method method = effective.method_enum();
    if (method == Method::fine_tune) {
        auto copy = std::make_shared<Backbone>(frozen->clone());
        copy->unfreeze();
        model = build_tuning_model(copy, method, ReparamSpec{}, 0,
                                   prompt_init_from_name(effective.prompt_init),
                                   task.classes, effective.seed);
    } else {
        model = build_tuning_model(std::const_pointer_cast<Backbone>(frozen), method,
                                   effective.reparam_spec(), effective.prompt_n,
                                   prompt_init_from_name(effective.prompt_init),
                                   task.classes, effective.seed);
    }

    RunResult result;
    result.run_id = effective.run_id(task_name);
    result.task = task_name;
    result.run_dir = ctx.runs_root() / result.run_id;
    result.fewshot_subset_ids = task.subset_ids;
    std::filesystem::create_directories(result.run_dir);

    {
        std::ofstream snapshot(result.run_dir / "config.snapshot");
        snapshot << effective.to_kv_text(/*resolved=*/true);
        std::ofstream stamp(result.run_dir / "version.stamp");
        stamp << "rpt 0.1.0\ncheckpoint-format 1\n";
        if (!task.subset_ids.empty()) {
            json sub;
            sub["task"] = task_name;
            sub["k"] = effective.fewshot_k;
            sub["ids"] = task.subset_ids;
            std::ofstream subset(result.run_dir / "subset.json");
            subset << sub.dump();
        }
    }

    TrainResult trained = train_loop(model, task, effective.train_config(), result.run_dir);
    write_metrics_jsonl(result.run_dir / "metrics.jsonl", trained.records);
    result.records = std::move(trained.records);
    result.best_epoch = trained.best_epoch;
    result.best_value = trained.best_value;
    return result;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace {

struct PlannedRun {
    RunConfig cfg;
    std::string task;
    std::map<std::string, std::string> coords;
    std::uint64_t seed;
};

struct PlannedResult {
    bool ok = false;
    double best_value = 0.0;
    std::vector<std::size_t> subset_ids;
    std::string error;
};

std::vector<PlannedResult> run_plan(const std::vector<PlannedRun>& plan, std::size_t jobs,
                                    RunContext& ctx) {
    std::vector<PlannedResult> results(plan.size());
    auto worker_body = [&](std::size_t index) {
        const PlannedRun& r = plan[index];
        try {
            RunResult run = execute_run(r.cfg, r.task, ctx);
            results[index].ok = true;
            results[index].best_value = run.best_value;
            results[index].subset_ids = run.fewshot_subset_ids;
            ctx.log_progress("done " + run.run_id + " best=" + format_double(run.best_value));
        } catch (const std::exception& e) {
            results[index].error = e.what();
            ctx.log_progress("failed " + r.cfg.run_id(r.task) + ": " + e.what());
        }
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < plan.size(); ++i) worker_body(i);
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const std::size_t n_workers = std::min(jobs, plan.size());
    workers.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
        workers.emplace_back([&]() {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= plan.size()) break;
                worker_body(i);
            }
        });
    }
    for (auto& t : workers) t.join();
    return results;
}

std::string coords_key(const std::map<std::string, std::string>& coords) {
    std::string key;
    for (const auto& [k, v] : coords) key += k + "=" + v + ";";
    return key;
}

// Aggregates per-(cell, seed) suite averages into cells with mean/stdev over
// seeds. Failed runs become explicit failure markers on their cell.
std::vector<SweepCell> aggregate_cells(const std::vector<PlannedRun>& plan,
                                       const std::vector<PlannedResult>& results) {
    std::vector<std::map<std::string, std::string>> cell_order;
    std::map<std::string, std::size_t> cell_index;
    struct SeedAcc {
        std::vector<double> values;  // per-task best metric
        bool failed = false;
    };
    std::map<std::string, std::map<std::uint64_t, SeedAcc>> acc;

    for (std::size_t i = 0; i < plan.size(); ++i) {
        const std::string key = coords_key(plan[i].coords);
        if (!cell_index.contains(key)) {
            cell_index[key] = cell_order.size();
            cell_order.push_back(plan[i].coords);
        }
        SeedAcc& sa = acc[key][plan[i].seed];
        if (results[i].ok) {
            sa.values.push_back(results[i].best_value);
        } else {
            sa.failed = true;
        }
    }

    std::vector<SweepCell> cells;
    for (const auto& coords : cell_order) {
        const std::string key = coords_key(coords);
        SweepCell cell;
        cell.coords = coords;
        for (const auto& [seed, sa] : acc[key]) {
            if (sa.failed || sa.values.empty()) continue;
            double mean = 0.0;
            for (double v : sa.values) mean += v;
            cell.per_seed_values.push_back(mean / static_cast<double>(sa.values.size()));
        }
        double mean = 0.0;
        for (double v : cell.per_seed_values) mean += v;
        if (!cell.per_seed_values.empty()) {
            mean /= static_cast<double>(cell.per_seed_values.size());
        }
        cell.mean = mean;
        if (cell.per_seed_values.size() >= 2) {
            double ss = 0.0;
            for (double v : cell.per_seed_values) ss += (v - mean) * (v - mean);
            cell.stdev = std::sqrt(ss / static_cast<double>(cell.per_seed_values.size() - 1));
        } else {
            cell.stdev = std::numeric_limits<double>::quiet_NaN();
        }
        cells.push_back(std::move(cell));
    }

    // attach failure markers
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (results[i].ok) continue;
        const std::string key = coords_key(plan[i].coords);
        SweepCell& cell = cells[cell_index[key]];
        cell.failures.push_back("task=" + plan[i].task + " seed=" +
                                std::to_string(plan[i].seed) + ": " + results[i].error);
    }
    return cells;
}

double population_variance(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(values.size());
}

void assign_winners(SweepReport& report, const std::string& axis_coord) {
    std::map<std::string, const SweepCell*> best;
    for (const auto& cell : report.cells) {
        if (cell.failed()) continue;
        const std::string axis_value = cell.coords.at(axis_coord);
        auto it = best.find(axis_value);
        if (it == best.end() || cell.mean > it->second->mean) best[axis_value] = &cell;
    }
    for (const auto& [value, cell] : best) {
        auto method = cell->coords.find("method");
        report.extra["winner." + axis_coord + "=" + value] =
            method != cell->coords.end() ? method->second : coords_key(cell->coords);
    }
}

}  // namespace

std::string SweepReport::to_json() const {
    json j;
    j["axis"] = axis;
    j["grid"] = grid;
    json cells_json = json::array();
    for (const auto& cell : cells) {
        json c;
        c["coords"] = cell.coords;
        c["per_seed_values"] = cell.per_seed_values;
        c["n_seeds"] = cell.per_seed_values.size();
        c["mean"] = cell.mean;
        if (std::isnan(cell.stdev)) {
            c["stdev"] = nullptr;
        } else {
            c["stdev"] = cell.stdev;
        }
        if (cell.trainable_params) c["trainable_params"] = *cell.trainable_params;
        c["failures"] = cell.failures;
        cells_json.push_back(std::move(c));
    }
    j["cells"] = std::move(cells_json);
    j["extra"] = extra;
    return j.dump(2);
}

void SweepReport::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ContractError("cannot open for writing: " + path.string());
    out << to_json() << "\n";
}

const SweepCell* SweepReport::find_cell(
    const std::map<std::string, std::string>& coords) const {
    for (const auto& cell : cells)
        if (cell.coords == coords) return &cell;
    return nullptr;
}

SweepReport sweep_lr(const RunConfig& base, const std::vector<double>& grid,
                     const SweepOptions& opts, RunContext& ctx) {
    if (grid.empty()) throw ConfigError("sweep-lr: empty grid");
    std::vector<PlannedRun> plan;
    SweepReport report;
    report.axis = "lr";
    for (double lr : grid) report.grid.push_back(format_double(lr));

    for (const std::string& method : {std::string("pt"), std::string("res-pt")}) {
        for (double lr : grid) {
            for (std::uint64_t seed : opts.seeds) {
                for (const auto& task : selected_tasks(base)) {
                    PlannedRun run;
                    run.cfg = base;
                    run.cfg.method = method;
                    run.cfg.lr = lr;
                    run.cfg.seed = seed;
                    run.cfg.keep_epoch_ckpts = false;
                    run.task = task;
                    run.seed = seed;
                    run.coords = {{"lr", format_double(lr)}, {"method", method}};
                    plan.push_back(std::move(run));
                }
            }
        }
    }
    auto results = run_plan(plan, opts.jobs, ctx);
    report.cells = aggregate_cells(plan, results);

    for (const std::string& method : {std::string("pt"), std::string("res-pt")}) {
        std::vector<double> cell_means;
        for (const auto& cell : report.cells) {
            if (cell.coords.at("method") == method && !cell.failed()) {
                cell_means.push_back(cell.mean);
            }
        }
        report.extra["lr_variance." + method] = format_double(population_variance(cell_means));
    }
    assign_winners(report, "lr");
    report.save(ctx.runs_root() / "sweep-lr.report.json");
    return report;
}

SweepReport ablate_width(const RunConfig& base, const std::vector<std::size_t>& widths,
                         const SweepOptions& opts, RunContext& ctx) {
    if (base.method != "res-pt") {
        throw ConfigError("ablate-width: base config must use method res-pt");
    }
    if (widths.empty()) throw ConfigError("ablate-width: empty grid");
    std::vector<PlannedRun> plan;
    SweepReport report;
    report.axis = "m";
    for (std::size_t m : widths) report.grid.push_back(std::to_string(m));

    for (std::size_t m : widths) {
        for (std::uint64_t seed : opts.seeds) {
            for (const auto& task : selected_tasks(base)) {
                PlannedRun run;
                run.cfg = base;
                run.cfg.reparam_m = m;
                run.cfg.seed = seed;
                run.cfg.keep_epoch_ckpts = false;
                run.task = task;
                run.seed = seed;
                run.coords = {{"m", std::to_string(m)}};
                plan.push_back(std::move(run));
            }
        }
    }
    auto results = run_plan(plan, opts.jobs, ctx);
    report.cells = aggregate_cells(plan, results);
    for (auto& cell : report.cells) {
        RunConfig cfg = base;
        cfg.reparam_m = parse_u64("m", cell.coords.at("m"));
        cell.trainable_params =
            count_params(cfg.reparam_spec(), cfg.backbone_d, cfg.prompt_n).trainable;
    }
    assign_winners(report, "m");
    report.save(ctx.runs_root() / "ablate-width.report.json");
    return report;
}

SweepReport ablate_sharing(const RunConfig& base, const SweepOptions& opts, RunContext& ctx) {
    if (base.method != "res-pt") {
        throw ConfigError("ablate-sharing: base config must use method res-pt");
    }
    std::vector<PlannedRun> plan;
    SweepReport report;
    report.axis = "variant";
    report.grid = {"shared", "separate"};

    // small regime: 100 examples per class, the CB-scale analogue
    for (const std::string& variant : {std::string("shared"), std::string("separate")}) {
        for (const std::string& size : {std::string("small"), std::string("large")}) {
            for (std::uint64_t seed : opts.seeds) {
                for (const auto& task : selected_tasks(base)) {
                    PlannedRun run;
                    run.cfg = base;
                    run.cfg.reparam_shared = variant == "shared";
                    run.cfg.fewshot_k = size == "small" ? 100 : 0;
                    run.cfg.seed = seed;
                    run.cfg.keep_epoch_ckpts = false;
                    run.task = task;
                    run.seed = seed;
                    run.coords = {{"variant", variant}, {"size", size}};
                    plan.push_back(std::move(run));
                }
            }
        }
    }
    auto results = run_plan(plan, opts.jobs, ctx);
    report.cells = aggregate_cells(plan, results);
    for (auto& cell : report.cells) {
        RunConfig cfg = base;
        cfg.reparam_shared = cell.coords.at("variant") == "shared";
        cell.trainable_params =
            count_params(cfg.reparam_spec(), cfg.backbone_d, cfg.prompt_n).trainable;
    }
    assign_winners(report, "variant");
    report.save(ctx.runs_root() / "ablate-sharing.report.json");
    return report;
}

SweepReport ablate_prompt_len(const RunConfig& base, const std::vector<std::size_t>& lens,
                              const SweepOptions& opts, RunContext& ctx) {
    if (lens.empty()) throw ConfigError("ablate-prompt-len: empty grid");
    std::vector<PlannedRun> plan;
    SweepReport report;
    report.axis = "n";
    for (std::size_t n : lens) report.grid.push_back(std::to_string(n));

    for (const std::string& method : {std::string("pt"), std::string("res-pt")}) {
        for (std::size_t n : lens) {
            for (std::uint64_t seed : opts.seeds) {
                for (const auto& task : selected_tasks(base)) {
                    PlannedRun run;
                    run.cfg = base;
                    run.cfg.method = method;
                    run.cfg.prompt_n = n;
                    run.cfg.seed = seed;
                    run.cfg.keep_epoch_ckpts = false;
                    run.task = task;
                    run.seed = seed;
                    run.coords = {{"n", std::to_string(n)}, {"method", method}};
                    plan.push_back(std::move(run));
                }
            }
        }
    }
    auto results = run_plan(plan, opts.jobs, ctx);
    report.cells = aggregate_cells(plan, results);
    assign_winners(report, "n");
    report.save(ctx.runs_root() / "ablate-prompt-len.report.json");
    return report;
}

SweepReport fewshot_sweep(const RunConfig& base, const std::vector<std::size_t>& ks,
                          const SweepOptions& opts, RunContext& ctx) {
    if (ks.empty()) throw ConfigError("fewshot: empty grid");
    std::vector<PlannedRun> plan;
    SweepReport report;
    report.axis = "k";
    for (std::size_t k : ks) report.grid.push_back(std::to_string(k));

    for (const std::string& method : {std::string("pt"), std::string("res-pt")}) {
        for (std::size_t k : ks) {
            for (std::uint64_t seed : opts.seeds) {
                for (const auto& task : selected_tasks(base)) {
                    PlannedRun run;
                    run.cfg = base;
                    run.cfg.method = method;
                    run.cfg.fewshot_k = k;
                    run.cfg.seed = seed;
                    run.cfg.keep_epoch_ckpts = false;
                    run.task = task;
                    run.seed = seed;
                    run.coords = {{"k", std::to_string(k)}, {"method", method}};
                    plan.push_back(std::move(run));
                }
            }
        }
    }
    auto results = run_plan(plan, opts.jobs, ctx);
    report.cells = aggregate_cells(plan, results);

    // the fixed subset contract: both methods must have seen identical ids
    std::map<std::string, std::vector<std::size_t>> subset_by_task_k;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (!results[i].ok) continue;
        const std::string key = plan[i].task + ".k=" + plan[i].coords.at("k");
        auto it = subset_by_task_k.find(key);
        if (it == subset_by_task_k.end()) {
            subset_by_task_k[key] = results[i].subset_ids;
            json ids = results[i].subset_ids;
            report.extra["subset." + key] = ids.dump();
        } else if (it->second != results[i].subset_ids) {
            throw ContractError("few-shot subset differs between methods for " + key);
        }
    }
    assign_winners(report, "k");
    report.save(ctx.runs_root() / "fewshot.report.json");
    return report;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

ReportOutput write_report(const std::vector<std::filesystem::path>& run_dirs,
                          const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    ReportOutput output;
    output.summary_csv = out_dir / "summary.csv";
    output.plot_data_csv = out_dir / "plot_data.csv";

    struct RunData {
        RunConfig cfg;
        std::vector<MetricsRecord> records;
    };
    std::vector<RunData> runs;
    for (const auto& dir : run_dirs) {
        try {
            RunData data;
            data.cfg = RunConfig::from_kv_file(dir / "config.snapshot");
            data.records = read_metrics_jsonl(dir / "metrics.jsonl");
            if (data.records.empty()) throw ContractError("metrics.jsonl is empty");
            runs.push_back(std::move(data));
        } catch (const std::exception& e) {
            output.skipped.push_back(dir.string() + ": " + e.what());
        }
    }

    // summary: per (task, method) mean/stdev of best val metric + best epoch
    struct Best {
        double value;
        std::size_t epoch;
    };
    std::map<std::pair<std::string, std::string>, std::vector<Best>> summary;
    for (const auto& run : runs) {
        Best best{-1.0, 0};
        for (const auto& r : run.records) {
            if (r.split != "val") continue;
            if (r.value > best.value) best = {r.value, r.epoch};
        }
        summary[{run.cfg.task, run.cfg.method}].push_back(best);
    }

    {
        std::ofstream out(output.summary_csv, std::ios::trunc);
        out << "task,method,runs,best_val_mean,best_val_stdev,best_epoch_mean\n";
        for (const auto& [key, bests] : summary) {
            double mean = 0.0, epoch_mean = 0.0;
            for (const auto& b : bests) {
                mean += b.value;
                epoch_mean += static_cast<double>(b.epoch);
            }
            mean /= static_cast<double>(bests.size());
            epoch_mean /= static_cast<double>(bests.size());
            double stdev = 0.0;
            if (bests.size() >= 2) {
                double ss = 0.0;
                for (const auto& b : bests) ss += (b.value - mean) * (b.value - mean);
                stdev = std::sqrt(ss / static_cast<double>(bests.size() - 1));
            }
            out << key.first << "," << key.second << "," << bests.size() << ","
                << format_double(mean) << ","
                << (bests.size() >= 2 ? format_double(stdev) : "") << ","
                << format_double(epoch_mean) << "\n";
        }
    }

    // plot data: epoch series per (task, method, split, metric)
    struct SeriesKey {
        std::string task, method, split, metric;
        std::size_t epoch;
        auto operator<=>(const SeriesKey&) const = default;
    };
    std::map<SeriesKey, std::vector<double>> series;
    for (const auto& run : runs) {
        for (const auto& r : run.records) {
            series[{r.task, run.cfg.method, r.split, r.metric, r.epoch}].push_back(r.value);
        }
    }
    {
        std::ofstream out(output.plot_data_csv, std::ios::trunc);
        out << "task,method,split,metric,epoch,mean,stdev,n\n";
        for (const auto& [key, values] : series) {
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double stdev = 0.0;
            if (values.size() >= 2) {
                double ss = 0.0;
                for (double v : values) ss += (v - mean) * (v - mean);
                stdev = std::sqrt(ss / static_cast<double>(values.size() - 1));
            }
            out << key.task << "," << key.method << "," << key.split << "," << key.metric
                << "," << key.epoch << "," << format_double(mean) << ","
                << (values.size() >= 2 ? format_double(stdev) : "") << "," << values.size()
                << "\n";
        }
    }

    if (!output.skipped.empty()) {
        std::ofstream out(out_dir / "report.footer.txt", std::ios::trunc);
        for (const auto& s : output.skipped) out << "skipped: " << s << "\n";
    }
    return output;
}

}  // namespace rpt
