// Command-line harness for the prompt tuning laboratory. Subcommands mirror
// the experiment protocols: train / evaluate / bake for single runs,
// sweep-lr / ablate-* / fewshot for the comparison grids, report for
// aggregation and pretrain-backbone for producing frozen backbones.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>

#include "rpt/harness.hpp"
#include "rpt/serialize.hpp"

namespace {

rpt::RunConfig load_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
    rpt::RunConfig cfg;
    if (!config_path.empty()) cfg = rpt::RunConfig::from_kv_file(config_path);
    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw rpt::ConfigError("override must look like key=value, got '" + kv + "'");
        }
        cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void print_cells(const rpt::SweepReport& report) {
    std::cout << "axis: " << report.axis << "\n";
    for (const auto& cell : report.cells) {
        std::cout << "  ";
        for (const auto& [k, v] : cell.coords) std::cout << k << "=" << v << " ";
        if (cell.failed()) {
            std::cout << "FAILED";
        } else {
            std::cout << "mean=" << cell.mean;
            if (cell.per_seed_values.size() >= 2) std::cout << " stdev=" << cell.stdev;
            std::cout << " seeds=" << cell.per_seed_values.size();
        }
        if (cell.trainable_params) std::cout << " trainable=" << *cell.trainable_params;
        for (const auto& f : cell.failures) std::cout << "\n    failure: " << f;
        std::cout << "\n";
    }
    for (const auto& [k, v] : report.extra) std::cout << "  " << k << " = " << v << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"residual prompt tuning laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string runs_dir;
    std::size_t jobs = 1;
    std::vector<std::uint64_t> seeds;

    auto add_common = [&](CLI::App* cmd, bool with_seeds) {
        cmd->add_option("--config,-c", config_path, "key=value config file");
        cmd->add_option("--set,set", overrides, "config overrides (key=value)");
        cmd->add_option("--runs-dir", runs_dir,
                        "output root (default: $RPT_RUNS_DIR or ./runs)");
        if (with_seeds) {
            cmd->add_option("--jobs", jobs, "concurrent runs");
            cmd->add_option("--seeds", seeds, "seeds for the sweep (default 1..5)");
        }
    };

    auto* cmd_train = app.add_subcommand("train", "train one configuration");
    add_common(cmd_train, false);

    auto* cmd_eval = app.add_subcommand("evaluate", "evaluate a finished run directory");
    std::string eval_run, eval_split = "val", eval_use = "baked";
    cmd_eval->add_option("--run", eval_run, "run directory")->required();
    cmd_eval->add_option("--split", eval_split, "train or val");
    cmd_eval->add_option("--use", eval_use, "baked or best");
    cmd_eval->add_option("--runs-dir", runs_dir, "output root");

    auto* cmd_bake = app.add_subcommand("bake", "re-bake baked.prompt from best.ckpt");
    std::string bake_run;
    cmd_bake->add_option("--run", bake_run, "run directory")->required();
    cmd_bake->add_option("--runs-dir", runs_dir, "output root");

    auto* cmd_pretrain = app.add_subcommand("pretrain-backbone",
                                            "pretrain and save a backbone checkpoint");
    std::string pretrain_out;
    add_common(cmd_pretrain, false);
    cmd_pretrain->add_option("--out", pretrain_out, "output checkpoint path")->required();

    auto* cmd_sweep_lr = app.add_subcommand("sweep-lr", "pt vs res-pt across learning rates");
    std::vector<double> lr_grid;
    add_common(cmd_sweep_lr, true);
    cmd_sweep_lr->add_option("--grid", lr_grid, "learning rates");

    auto* cmd_width = app.add_subcommand("ablate-width", "res-pt across MLP widths");
    std::vector<std::size_t> width_grid;
    add_common(cmd_width, true);
    cmd_width->add_option("--widths", width_grid, "bottleneck widths");

    auto* cmd_sharing = app.add_subcommand("ablate-sharing", "shared vs separate networks");
    add_common(cmd_sharing, true);

    auto* cmd_len = app.add_subcommand("ablate-prompt-len", "pt vs res-pt across prompt lengths");
    std::vector<std::size_t> len_grid;
    add_common(cmd_len, true);
    cmd_len->add_option("--lens", len_grid, "prompt lengths");

    auto* cmd_fewshot = app.add_subcommand("fewshot", "pt vs res-pt on k-shot subsets");
    std::vector<std::size_t> k_grid;
    add_common(cmd_fewshot, true);
    cmd_fewshot->add_option("--ks", k_grid, "samples per class");

    auto* cmd_report = app.add_subcommand("report", "aggregate run directories");
    std::vector<std::string> report_dirs;
    std::string report_out = "report";
    cmd_report->add_option("--runs", report_dirs, "run directories")->required();
    cmd_report->add_option("--out", report_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        auto runs_root = runs_dir.empty() ? rpt::default_runs_root()
                                          : std::filesystem::path(runs_dir);
        rpt::SweepOptions opts;
        opts.jobs = jobs;
        if (!seeds.empty()) opts.seeds = seeds;

        if (cmd_train->parsed()) {
            rpt::RunConfig cfg = load_config(config_path, overrides);
            rpt::RunContext ctx(runs_root);
            for (const auto& task : rpt::selected_tasks(cfg)) {
                rpt::RunResult run = rpt::execute_run(cfg, task, ctx);
                std::cout << run.run_dir.string() << " best_epoch=" << run.best_epoch
                          << " best=" << run.best_value << "\n";
            }
        } else if (cmd_eval->parsed()) {
            rpt::RunConfig cfg = rpt::RunConfig::from_kv_file(
                std::filesystem::path(eval_run) / "config.snapshot");
            rpt::RunContext ctx(runs_root);
            auto suite = ctx.suite(cfg.suite_seed);
            const rpt::TaskSpec* task = nullptr;
            for (const auto& t : suite)
                if (t.name == cfg.task) task = &t;
            if (!task) throw rpt::ConfigError("task from snapshot not in suite: " + cfg.task);
            rpt::TaskSpec eval_task = *task;
            eval_task.kind = cfg.arch_enum() == rpt::Arch::encoder_decoder
                                 ? rpt::TaskKind::seq2seq
                                 : rpt::TaskKind::classification;

            auto frozen = ctx.get_backbone(cfg);
            rpt::TuningModel model = rpt::build_tuning_model(
                std::const_pointer_cast<rpt::Backbone>(frozen), cfg.method_enum(),
                cfg.method_enum() == rpt::Method::fine_tune ? rpt::ReparamSpec{}
                                                            : cfg.reparam_spec(),
                cfg.prompt_n, rpt::prompt_init_from_name(cfg.prompt_init),
                eval_task.classes, cfg.seed);

            rpt::Tensor prompt_rows;
            if (eval_use == "baked") {
                auto loaded = rpt::load_prompt_checkpoint(
                    std::filesystem::path(eval_run) / "baked.prompt");
                prompt_rows = loaded.bank.P;
            } else {
                auto ckpt = rpt::load_checkpoint(std::filesystem::path(eval_run) / "best.ckpt");
                for (auto* p : model.trainable_params()) {
                    const rpt::NamedTensor* stored = ckpt.find(p->name);
                    if (!stored) throw rpt::ContractError("best.ckpt missing " + p->name);
                    std::copy(stored->tensor.data().begin(), stored->tensor.data().end(),
                              p->tensor.data_mut().begin());
                }
                prompt_rows = rpt::reparameterized_prompt(model, false);
            }
            if (eval_use == "baked") {
                // the head still comes from the trained checkpoint
                auto ckpt = rpt::load_checkpoint(std::filesystem::path(eval_run) / "best.ckpt");
                if (auto* head = model.own_params.find("head.w")) {
                    const rpt::NamedTensor* stored = ckpt.find("head.w");
                    if (stored) {
                        std::copy(stored->tensor.data().begin(), stored->tensor.data().end(),
                                  head->tensor.data_mut().begin());
                    }
                }
            }
            rpt::MetricsRecord record = rpt::evaluate(model, prompt_rows, eval_task,
                                                      eval_split, 0, cfg.config_hash());
            std::cout << record.to_json_line() << "\n";
        } else if (cmd_bake->parsed()) {
            auto run_dir = std::filesystem::path(bake_run);
            rpt::RunConfig cfg = rpt::RunConfig::from_kv_file(run_dir / "config.snapshot");
            if (cfg.method_enum() == rpt::Method::fine_tune) {
                throw rpt::ConfigError("fine-tune runs have no prompt to bake");
            }
            auto ckpt = rpt::load_checkpoint(run_dir / "best.ckpt");
            const rpt::NamedTensor* prompt = ckpt.find("prompt.P");
            if (!prompt) throw rpt::ContractError("best.ckpt missing prompt.P");

            rpt::PromptBank bank;
            bank.P = prompt->tensor;
            bank.n = prompt->tensor.extent(0);
            bank.d = prompt->tensor.extent(1);
            bank.init = rpt::prompt_init_from_name(cfg.prompt_init);
            bank.seed = cfg.seed;

            rpt::ReparamSpec spec = cfg.method_enum() == rpt::Method::pt
                                        ? rpt::ReparamSpec{.kind = rpt::ReparamKind::identity}
                                        : cfg.reparam_spec();
            rpt::ReparamNet net = rpt::ReparamNet::init(spec, bank.d, bank.n, 0);
            for (auto& p : net.params().all()) {
                const rpt::NamedTensor* stored = ckpt.find(p.name);
                if (!stored) throw rpt::ContractError("best.ckpt missing " + p.name);
                std::copy(stored->tensor.data().begin(), stored->tensor.data().end(),
                          p.tensor.data_mut().begin());
            }
            rpt::PromptBank baked = rpt::bake(spec, net, bank);
            rpt::save_prompt_checkpoint(run_dir / "baked.prompt", baked, nullptr);
            std::cout << (run_dir / "baked.prompt").string() << "\n";
        } else if (cmd_pretrain->parsed()) {
            rpt::RunConfig cfg = load_config(config_path, overrides);
            rpt::Backbone model = rpt::Backbone::init(
                cfg.backbone_config(), rpt::derive_seed(cfg.pretrain_seed, "backbone"));
            rpt::Vocab vocab;
            vocab.size = cfg.backbone_vocab;
            auto corpus = rpt::generate_pretrain_corpus(cfg.pretrain_seed,
                                                        cfg.pretrain_corpus, vocab);
            rpt::PretrainStats stats =
                rpt::pretrain_backbone(model, corpus, cfg.pretrain_steps, cfg.pretrain_seed);
            model.save(pretrain_out);
            std::cout << pretrain_out << " steps=" << stats.steps
                      << " heldout_token_acc=" << stats.heldout_token_accuracy << "\n";
        } else if (cmd_sweep_lr->parsed()) {
            rpt::RunConfig cfg = load_config(config_path, overrides);
            rpt::RunContext ctx(runs_root);
            auto grid = lr_grid.empty() ? rpt::default_lr_grid() : lr_grid;
            print_cells(rpt::sweep_lr(cfg, grid, opts, ctx));
        } else if (cmd_width->parsed()) {
            rpt::RunConfig cfg = load_config(config_path, overrides);
            rpt::RunContext ctx(runs_root);
            auto grid = width_grid.empty() ? rpt::default_width_grid() : width_grid;
            print_cells(rpt::ablate_width(cfg, grid, opts, ctx));
        } else if (cmd_sharing->parsed()) {
            rpt::RunConfig cfg = load_config(config_path, overrides);
            rpt::RunContext ctx(runs_root);
            print_cells(rpt::ablate_sharing(cfg, opts, ctx));
        } else if (cmd_len->parsed()) {
            rpt::RunConfig cfg = load_config(config_path, overrides);
            rpt::RunContext ctx(runs_root);
            auto grid = len_grid.empty() ? rpt::default_prompt_len_grid() : len_grid;
            print_cells(rpt::ablate_prompt_len(cfg, grid, opts, ctx));
        } else if (cmd_fewshot->parsed()) {
            rpt::RunConfig cfg = load_config(config_path, overrides);
            rpt::RunContext ctx(runs_root);
            auto grid = k_grid.empty() ? rpt::default_fewshot_grid() : k_grid;
            print_cells(rpt::fewshot_sweep(cfg, grid, opts, ctx));
        } else if (cmd_report->parsed()) {
            std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
            rpt::ReportOutput out = rpt::write_report(dirs, report_out);
            std::cout << out.summary_csv.string() << "\n" << out.plot_data_csv.string() << "\n";
            for (const auto& s : out.skipped) std::cout << "skipped: " << s << "\n";
        }
        return 0;
    } catch (const rpt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const rpt::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
