#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rpt/trainer.hpp"

namespace rpt {

// Full experiment configuration, serializable to the flat key=value config
// format. lr and epochs support "auto": per-method defaults (0.3 for pt, 0.7
// for the reparameterized methods) and the 15/20/30 epoch protocol keyed on
// prompt length and fine-tuning.
struct RunConfig {
    std::string arch = "encoder-only";
    std::string method = "res-pt";

    std::size_t prompt_n = 10;
    std::string prompt_init = "sampled-vocab";

    std::size_t reparam_m = 64;
    bool reparam_shared = true;
    bool reparam_biases = false;
    std::size_t lstm_hidden = 300;
    double lstm_dropout = 0.05;

    std::string backbone_checkpoint;  // empty: pretrain on demand and cache
    std::size_t backbone_layers = 2;
    std::size_t backbone_d = 64;
    std::size_t backbone_heads = 4;
    std::size_t backbone_ffn = 128;
    std::size_t backbone_vocab = 64;
    std::size_t backbone_max_len = 128;
    std::size_t pretrain_steps = 500;
    std::uint64_t pretrain_seed = 99;
    std::size_t pretrain_corpus = 1500;

    double lr = -1.0;  // auto
    long epochs = -1;  // auto
    std::size_t batch = 8;
    std::uint64_t seed = 1;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_opt = 1e-8;
    bool bias_correction = true;
    double grad_clip = 0.0;
    bool keep_epoch_ckpts = true;
    bool record_wall_time = false;

    std::size_t fewshot_k = 0;  // 0: full train split
    std::uint64_t fewshot_seed = 7;

    std::uint64_t suite_seed = 17;
    std::string task = "all";

    bool operator==(const RunConfig&) const = default;

    void validate() const;
    double resolved_lr() const;
    std::size_t resolved_epochs() const;
    Method method_enum() const { return method_from_name(method); }
    Arch arch_enum() const { return arch_from_name(arch); }
    BackboneConfig backbone_config() const;
    ReparamSpec reparam_spec() const;
    TrainConfig train_config() const;

    // Canonical key=value serialization. resolved=true substitutes the
    // resolved lr/epochs; the config hash is taken over that form.
    std::string to_kv_text(bool resolved = false) const;
    static RunConfig from_kv_text(const std::string& text);
    static RunConfig from_kv_file(const std::filesystem::path& path);
    void apply_override(const std::string& key, const std::string& value);
    std::string config_hash() const;
    std::string run_id(const std::string& task_name) const;
};

// Shared context for a batch of runs: output root plus task and backbone
// caches. get_backbone returns a frozen instance shared across runs.
class RunContext {
public:
    explicit RunContext(std::filesystem::path runs_root);

    const std::filesystem::path& runs_root() const { return runs_root_; }
    std::filesystem::path tasks_dir() const { return runs_root_ / "tasks"; }
    std::filesystem::path backbones_dir() const { return runs_root_ / "backbones"; }

    std::vector<TaskSpec> suite(std::uint64_t seed);
    std::shared_ptr<const Backbone> get_backbone(const RunConfig& cfg);

    void log_progress(const std::string& line);

private:
    std::filesystem::path runs_root_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const Backbone>> backbone_cache_;
    std::map<std::uint64_t, std::vector<TaskSpec>> suite_cache_;
};

// Reads RPT_RUNS_DIR, falling back to ./runs.
std::filesystem::path default_runs_root();

struct RunResult {
    std::string run_id;
    std::filesystem::path run_dir;
    std::string task;
    std::vector<MetricsRecord> records;
    std::size_t best_epoch = 0;
    double best_value = 0.0;
    std::vector<std::size_t> fewshot_subset_ids;
};

// Executes one (config, task) training run: snapshots the config, trains,
// writes metrics.jsonl / checkpoints / baked.prompt into the run directory.
RunResult execute_run(const RunConfig& cfg, const std::string& task_name, RunContext& ctx);

// Expands cfg.task ("all" or a name) against the suite.
std::vector<std::string> selected_tasks(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
    std::map<std::string, std::string> coords;  // axis value, method, ...
    std::vector<double> per_seed_values;        // suite-average best metric per seed
    double mean = 0.0;
    double stdev = 0.0;  // present (non-NaN) iff >= 2 seeds
    std::optional<std::size_t> trainable_params;
    std::vector<std::string> failures;  // explicit markers, never dropped

    bool failed() const { return per_seed_values.empty(); }
};

struct SweepReport {
    std::string axis;
    std::vector<std::string> grid;
    std::vector<SweepCell> cells;
    std::map<std::string, std::string> extra;  // axis-specific aggregates

    std::string to_json() const;
    void save(const std::filesystem::path& path) const;
    const SweepCell* find_cell(const std::map<std::string, std::string>& coords) const;
};

struct SweepOptions {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::size_t jobs = 1;
};

SweepReport sweep_lr(const RunConfig& base, const std::vector<double>& grid,
                     const SweepOptions& opts, RunContext& ctx);
SweepReport ablate_width(const RunConfig& base, const std::vector<std::size_t>& widths,
                         const SweepOptions& opts, RunContext& ctx);
SweepReport ablate_sharing(const RunConfig& base, const SweepOptions& opts, RunContext& ctx);
SweepReport ablate_prompt_len(const RunConfig& base, const std::vector<std::size_t>& lens,
                              const SweepOptions& opts, RunContext& ctx);
SweepReport fewshot_sweep(const RunConfig& base, const std::vector<std::size_t>& ks,
                          const SweepOptions& opts, RunContext& ctx);

inline const std::vector<double>& default_lr_grid() {
    static const std::vector<double> grid = {0.001, 0.01, 0.03, 0.3, 10.0};
    return grid;
}
inline const std::vector<std::size_t>& default_width_grid() {
    static const std::vector<std::size_t> grid = {5, 10, 50, 100, 400, 1500};
    return grid;
}
inline const std::vector<std::size_t>& default_prompt_len_grid() {
    static const std::vector<std::size_t> grid = {2, 10, 100};
    return grid;
}
inline const std::vector<std::size_t>& default_fewshot_grid() {
    static const std::vector<std::size_t> grid = {5, 20, 100};
    return grid;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

// Aggregates run directories into summary.csv (per task and method: mean and
// stdev of the best validation metric plus mean best epoch) and
// plot_data.csv (per-epoch metric series for the convergence view). Corrupt
// or metrics-less directories are listed in the report footer.
struct ReportOutput {
    std::filesystem::path summary_csv;
    std::filesystem::path plot_data_csv;
    std::vector<std::string> skipped;
};

ReportOutput write_report(const std::vector<std::filesystem::path>& run_dirs,
                          const std::filesystem::path& out_dir);

}  // namespace rpt
