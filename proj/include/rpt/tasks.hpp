#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rpt/rng.hpp"

namespace rpt {

// Fixed synthetic vocabulary. Ids below first_content are reserved for
// structural markers, the two verbalizer words and the sentence descriptors;
// everything above is plain content.
struct Vocab {
    std::size_t size = 64;

    static constexpr std::size_t pad = 0;
    static constexpr std::size_t cls = 1;
    static constexpr std::size_t sep = 2;
    static constexpr std::size_t eos = 3;
    static constexpr std::size_t mask = 4;
    static constexpr std::size_t lbl0 = 5;
    static constexpr std::size_t lbl1 = 6;
    static constexpr std::size_t desc1 = 7;
    static constexpr std::size_t desc2 = 8;
    static constexpr std::size_t first_content = 9;

    // Content ids with a generator-specific meaning.
    static constexpr std::size_t parity_mark = 9;
    static constexpr std::size_t bigram_a = 10;
    static constexpr std::size_t bigram_b = 11;
    static constexpr std::size_t majority_a = 12;
    static constexpr std::size_t majority_b = 13;
    static constexpr std::size_t first_filler = 14;
};

enum class TaskKind { classification, seq2seq };

struct Example {
    std::vector<std::size_t> sentence1;
    std::vector<std::size_t> sentence2;  // empty for single-sentence tasks
    std::size_t label = 0;

    bool is_pair() const { return !sentence2.empty(); }
};

// Label -> token sequence for the text-to-text formulation.
struct Verbalizer {
    std::vector<std::vector<std::size_t>> sequences;  // indexed by label

    const std::vector<std::size_t>& tokens(std::size_t label) const;
    std::optional<std::size_t> match(const std::vector<std::size_t>& decoded) const;
    std::size_t max_len() const;
};

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::classification;
    std::size_t classes = 2;
    std::vector<Example> train;
    std::vector<Example> val;
    Verbalizer verbalizer;
    std::string metric = "accuracy";
    std::uint64_t seed = 0;
    // indices into the parent train split when this task is a few-shot subset
    std::vector<std::size_t> subset_ids;

    void validate() const;
};

// Deterministic 4-task suite: parity of marked tokens, ordered-bigram
// containment, majority token, and sentence-pair permutation consistency.
// Balanced classes, train >= 400 and val >= 100 per task.
std::vector<TaskSpec> generate_suite(std::uint64_t seed, const Vocab& vocab = Vocab{});

TaskSpec generate_task(const std::string& name, std::uint64_t seed,
                       const Vocab& vocab = Vocab{});

const std::vector<std::string>& suite_task_names();

// Unlabeled sequences for backbone pretraining, drawn from the same sentence
// generators plus the verbalizer words as ordinary tokens.
std::vector<std::vector<std::size_t>> generate_pretrain_corpus(std::uint64_t seed,
                                                               std::size_t count,
                                                               const Vocab& vocab = Vocab{});

// ---------------------------------------------------------------------------
// Input formatting
// ---------------------------------------------------------------------------

struct Slot {
    bool is_prompt = false;
    std::size_t index = 0;  // token id, or prompt row for prompt slots

    bool operator==(const Slot&) const = default;
};

struct SequenceRecipe {
    std::vector<Slot> slots;  // padded_len entries; tail beyond real_len is [PAD]
    std::size_t real_len = 0;
    std::size_t prompt_len = 0;
    std::size_t cls_pos = 0;                  // encoder-only layout
    std::vector<std::size_t> label_tokens;    // encoder-decoder layout

    std::vector<std::uint8_t> attention_mask() const;
    // Same content with trailing padding removed; forward passes on the
    // trimmed recipe are bitwise-identical because padded keys carry exactly
    // zero attention weight.
    SequenceRecipe trimmed() const;

    bool operator==(const SequenceRecipe&) const = default;
};

// [CLS] P'_0..P'_{n-1} S1 ([SEP] S2) [EOS], padded to max_len. The prompt
// sits between [CLS] and the first sentence; pair tasks keep a single [SEP].
SequenceRecipe format_encoder_only(std::size_t prompt_len, const Example& ex,
                                   std::size_t max_len, const Vocab& vocab = Vocab{});

// P'_0..P'_{n-1} [DESC1] S1 ([DESC2] S2) [EOS], padded to max_len, plus the
// verbalized label tokens.
SequenceRecipe format_encoder_decoder(std::size_t prompt_len, const Example& ex,
                                      const Verbalizer& verbalizer, std::size_t max_len,
                                      const Vocab& vocab = Vocab{});

// ---------------------------------------------------------------------------
// Disk cache
// ---------------------------------------------------------------------------

void save_task(const std::filesystem::path& path, const TaskSpec& task);
TaskSpec load_task(const std::filesystem::path& path);

// Loads the suite from `dir` if cached there, generating and caching it
// otherwise. Cache key is (suite seed, task name).
std::vector<TaskSpec> load_or_generate_suite(std::uint64_t seed,
                                             const std::filesystem::path& dir,
                                             const Vocab& vocab = Vocab{});

}  // namespace rpt
