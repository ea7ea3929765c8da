#include "test_helpers.hpp"

#include <mutex>

namespace rpt::test {

// Integration tests share one desk-scale backbone per architecture. The
// pretraining protocol matches the harness defaults in test_run_config().
std::shared_ptr<const Backbone> test_backbone(Arch arch) {
    static std::mutex mutex;
    static std::map<Arch, std::shared_ptr<const Backbone>> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(arch);
    if (it != cache.end()) return it->second;

    RunConfig cfg = test_run_config();
    cfg.arch = arch_name(arch);
    static RunContext ctx(std::filesystem::path("test-cache"));
    auto model = ctx.get_backbone(cfg);
    cache.emplace(arch, model);
    return model;
}

RunConfig test_run_config() {
    RunConfig cfg;
    cfg.suite_seed = 17;
    return cfg;
}

}  // namespace rpt::test
