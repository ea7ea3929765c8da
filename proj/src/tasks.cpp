#include "rpt/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "rpt/errors.hpp"

namespace rpt {

namespace {

using json = nlohmann::ordered_json;

std::size_t filler_token(Rng& rng, const Vocab& vocab) {
    return Vocab::first_filler + rng.below(vocab.size - Vocab::first_filler);
}

std::vector<std::size_t> filler_sentence(Rng& rng, const Vocab& vocab, std::size_t lo,
                                         std::size_t hi) {
    std::size_t len = lo + rng.below(hi - lo + 1);
    std::vector<std::size_t> s(len);
    for (auto& t : s) t = filler_token(rng, vocab);
    return s;
}

Verbalizer default_verbalizer() {
    Verbalizer v;
    v.sequences = {{Vocab::lbl0, Vocab::eos}, {Vocab::lbl1, Vocab::eos}};
    return v;
}

// parity: label = parity of the number of mark tokens in the sentence.
Example gen_parity(Rng& rng, const Vocab& vocab, std::size_t label) {
    Example ex;
    ex.sentence1 = filler_sentence(rng, vocab, 6, 10);
    std::size_t count = label == 0 ? 2 * rng.below(2)       // 0 or 2
                                   : 1 + 2 * rng.below(2);  // 1 or 3
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t pos = rng.below(ex.sentence1.size() + 1);
        ex.sentence1.insert(ex.sentence1.begin() + static_cast<std::ptrdiff_t>(pos),
                            Vocab::parity_mark);
    }
    ex.label = label;
    return ex;
}

// contain: label = 1 iff the ordered bigram (a, b) appears adjacently.
// Negatives carry the reversed bigram or both tokens far apart, so the bag
// of tokens alone does not give the answer away.
Example gen_contain(Rng& rng, const Vocab& vocab, std::size_t label) {
    Example ex;
    ex.sentence1 = filler_sentence(rng, vocab, 8, 12);
    auto& s = ex.sentence1;
    if (label == 1) {
        std::size_t pos = rng.below(s.size() - 1);
        s[pos] = Vocab::bigram_a;
        s[pos + 1] = Vocab::bigram_b;
    } else if (rng.below(2) == 0) {
        std::size_t pos = rng.below(s.size() - 1);
        s[pos] = Vocab::bigram_b;
        s[pos + 1] = Vocab::bigram_a;
    } else {
        std::size_t pos_a = rng.below(s.size());
        std::size_t pos_b = rng.below(s.size());
        while (pos_b + 1 == pos_a || pos_a + 1 == pos_b || pos_a == pos_b) {
            pos_b = rng.below(s.size());
        }
        s[pos_a] = Vocab::bigram_a;
        s[pos_b] = Vocab::bigram_b;
    }
    if (label == 0) {
        // scrub accidental positive bigrams introduced by the filler
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            while (s[i] == Vocab::bigram_a && s[i + 1] == Vocab::bigram_b) {
                s[i + 1] = filler_token(rng, vocab);
            }
        }
    }
    ex.label = label;
    return ex;
}

// majority: label = 1 iff token A outnumbers token B (margin >= 2).
Example gen_majority(Rng& rng, const Vocab& vocab, std::size_t label) {
    Example ex;
    const std::size_t total = 8;
    std::size_t margin = 2 + 2 * rng.below(2);  // 2 or 4
    std::size_t a = (total + margin) / 2;
    std::size_t b = total - a;
    if (label == 0) std::swap(a, b);
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < a; ++i) s.push_back(Vocab::majority_a);
    for (std::size_t i = 0; i < b; ++i) s.push_back(Vocab::majority_b);
    auto filler = filler_sentence(rng, vocab, 3, 5);
    s.insert(s.end(), filler.begin(), filler.end());
    rng.shuffle(s);
    ex.sentence1 = std::move(s);
    ex.label = label;
    return ex;
}

// pairperm: label = 1 iff sentence2 is a permutation of sentence1.
Example gen_pairperm(Rng& rng, const Vocab& vocab, std::size_t label) {
    Example ex;
    ex.sentence1 = filler_sentence(rng, vocab, 6, 9);
    if (label == 1) {
        ex.sentence2 = ex.sentence1;
        rng.shuffle(ex.sentence2);
    } else {
        auto sorted1 = ex.sentence1;
        std::sort(sorted1.begin(), sorted1.end());
        do {
            ex.sentence2.assign(ex.sentence1.size(), 0);
            for (auto& t : ex.sentence2) t = filler_token(rng, vocab);
            auto sorted2 = ex.sentence2;
            std::sort(sorted2.begin(), sorted2.end());
            if (sorted2 != sorted1) break;
        } while (true);
    }
    ex.label = label;
    return ex;
}

using GenFn = Example (*)(Rng&, const Vocab&, std::size_t);

GenFn generator_for(const std::string& name) {
    if (name == "parity") return gen_parity;
    if (name == "contain") return gen_contain;
    if (name == "majority") return gen_majority;
    if (name == "pairperm") return gen_pairperm;
    throw ConfigError("unknown task name: " + name);
}

std::vector<Example> gen_balanced(GenFn gen, Rng& rng, const Vocab& vocab,
                                  std::size_t count) {
    std::vector<Example> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(gen(rng, vocab, i % 2));
    rng.shuffle(out);
    return out;
}

}  // namespace

const std::vector<std::size_t>& Verbalizer::tokens(std::size_t label) const {
    if (label >= sequences.size()) {
        throw IndexError("verbalizer: label " + std::to_string(label) + " out of range");
    }
    return sequences[label];
}

std::optional<std::size_t> Verbalizer::match(const std::vector<std::size_t>& decoded) const {
    for (std::size_t c = 0; c < sequences.size(); ++c) {
        if (decoded == sequences[c]) return c;
    }
    return std::nullopt;
}

std::size_t Verbalizer::max_len() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n = std::max(n, s.size());
    return n;
}

void TaskSpec::validate() const {
    if (val.empty()) throw ContractError("task " + name + ": empty validation split");
    if (classes < 2) throw ConfigError("task " + name + ": needs at least 2 classes");
    if (verbalizer.sequences.size() != classes) {
        throw ContractError("task " + name + ": verbalizer does not cover all classes");
    }
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t o = c + 1; o < classes; ++o) {
            if (verbalizer.sequences[c] == verbalizer.sequences[o]) {
                throw ContractError("task " + name + ": verbalizer is not injective");
            }
        }
    }
    auto check = [&](const std::vector<Example>& split, const char* which) {
        for (const auto& ex : split) {
            if (ex.label >= classes) {
                throw ContractError("task " + name + ": label out of range in " + which);
            }
        }
    };
    check(train, "train");
    check(val, "val");
}

const std::vector<std::string>& suite_task_names() {
    static const std::vector<std::string> names = {"parity", "contain", "majority",
                                            "pairperm"};
    return names;
}

TaskSpec generate_task(const std::string& name, std::uint64_t seed, const Vocab& vocab) {
    if (vocab.size < Vocab::first_filler + 8) {
        throw ConfigError("vocabulary too small for the synthetic generators");
    }
    GenFn gen = generator_for(name);
    Rng rng(derive_seed(seed, "task:" + name));
    TaskSpec task;
    task.name = name;
    task.seed = seed;
    task.verbalizer = default_verbalizer();
    task.train = gen_balanced(gen, rng, vocab, 400);
    task.val = gen_balanced(gen, rng, vocab, 100);
    task.validate();
    return task;
}

std::vector<TaskSpec> generate_suite(std::uint64_t seed, const Vocab& vocab) {
    std::vector<TaskSpec> suite;
    for (const auto& name : suite_task_names()) suite.push_back(generate_task(name, seed, vocab));
    return suite;
}

std::vector<std::vector<std::size_t>> generate_pretrain_corpus(std::uint64_t seed,
                                                               std::size_t count,
                                                               const Vocab& vocab) {
    Rng rng(derive_seed(seed, "pretrain-corpus"));
    std::vector<std::vector<std::size_t>> corpus;
    corpus.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t family = rng.below(5);
        Example ex;
        switch (family) {
            case 0: ex = gen_parity(rng, vocab, rng.below(2)); break;
            case 1: ex = gen_contain(rng, vocab, rng.below(2)); break;
            case 2: ex = gen_majority(rng, vocab, rng.below(2)); break;
            case 3: ex = gen_pairperm(rng, vocab, rng.below(2)); break;
            default: ex.sentence1 = filler_sentence(rng, vocab, 8, 20); break;
        }
        std::vector<std::size_t> seq = ex.sentence1;
        if (ex.is_pair()) {
            seq.push_back(Vocab::sep);
            seq.insert(seq.end(), ex.sentence2.begin(), ex.sentence2.end());
        }
        // verbalizer words show up as ordinary tokens so their embeddings are
        // trained, mirroring how "True"/"False" are plain vocabulary to T5
        for (auto& t : seq) {
            if (rng.uniform01() < 0.03) t = rng.below(2) == 0 ? Vocab::lbl0 : Vocab::lbl1;
        }
        corpus.push_back(std::move(seq));
    }
    return corpus;
}

std::vector<std::uint8_t> SequenceRecipe::attention_mask() const {
    std::vector<std::uint8_t> mask(slots.size(), 0);
    for (std::size_t i = 0; i < real_len; ++i) mask[i] = 1;
    return mask;
}

SequenceRecipe SequenceRecipe::trimmed() const {
    SequenceRecipe copy = *this;
    copy.slots.resize(real_len);
    return copy;
}

namespace {

// Shared tail assembly: sentences with optional separator, closing [EOS],
// truncation from sentence tails only, then [PAD] fill.
void append_sentences_and_pad(SequenceRecipe& recipe, const Example& ex,
                              std::size_t sep_token, std::size_t max_len,
                              const Vocab& vocab, const char* where) {
    const std::size_t prefix = recipe.slots.size();
    std::size_t overhead = prefix + 1;  // closing [EOS]
    if (ex.is_pair()) overhead += 1;    // separator / descriptor
    if (overhead + 1 > max_len) {
        throw ConfigError(std::string(where) + ": prompt and markers leave no room within "
                          "max_len " + std::to_string(max_len));
    }
    std::size_t budget = max_len - overhead;
    std::size_t len1 = ex.sentence1.size();
    std::size_t len2 = ex.sentence2.size();
    // Over-length inputs lose sentence-tail tokens, second sentence first;
    // markers, prompt slots and [EOS] always survive.
    if (len1 + len2 > budget) {
        std::size_t excess = len1 + len2 - budget;
        std::size_t cut2 = std::min(excess, len2 > 1 ? len2 - 1 : 0);
        len2 -= cut2;
        excess -= cut2;
        if (excess > 0) {
            if (excess >= len1) {
                throw LengthError(std::string(where) + ": input cannot fit within max_len " +
                                  std::to_string(max_len));
            }
            len1 -= excess;
        }
    }
    for (std::size_t i = 0; i < len1; ++i) recipe.slots.push_back({false, ex.sentence1[i]});
    if (ex.is_pair()) {
        recipe.slots.push_back({false, sep_token});
        for (std::size_t i = 0; i < len2; ++i) recipe.slots.push_back({false, ex.sentence2[i]});
    }
    recipe.slots.push_back({false, Vocab::eos});
    recipe.real_len = recipe.slots.size();
    while (recipe.slots.size() < max_len) recipe.slots.push_back({false, Vocab::pad});
    (void)vocab;
}

}  // namespace

SequenceRecipe format_encoder_only(std::size_t prompt_len, const Example& ex,
                                   std::size_t max_len, const Vocab& vocab) {
    if (prompt_len + 3 > max_len) {
        throw ConfigError("format_encoder_only: prompt length " + std::to_string(prompt_len) +
                          " does not fit within max_len " + std::to_string(max_len));
    }
    SequenceRecipe recipe;
    recipe.prompt_len = prompt_len;
    recipe.cls_pos = 0;
    recipe.slots.push_back({false, Vocab::cls});
    for (std::size_t i = 0; i < prompt_len; ++i) recipe.slots.push_back({true, i});
    append_sentences_and_pad(recipe, ex, Vocab::sep, max_len, vocab, "format_encoder_only");
    return recipe;
}

SequenceRecipe format_encoder_decoder(std::size_t prompt_len, const Example& ex,
                                      const Verbalizer& verbalizer, std::size_t max_len,
                                      const Vocab& vocab) {
    if (prompt_len + 3 > max_len) {
        throw ConfigError("format_encoder_decoder: prompt length " + std::to_string(prompt_len) +
                          " does not fit within max_len " + std::to_string(max_len));
    }
    SequenceRecipe recipe;
    recipe.prompt_len = prompt_len;
    for (std::size_t i = 0; i < prompt_len; ++i) recipe.slots.push_back({true, i});
    recipe.slots.push_back({false, Vocab::desc1});
    append_sentences_and_pad(recipe, ex, Vocab::desc2, max_len, vocab,
                             "format_encoder_decoder");
    recipe.label_tokens = verbalizer.tokens(ex.label);
    return recipe;
}

// ---------------------------------------------------------------------------
// Disk cache
// ---------------------------------------------------------------------------

void save_task(const std::filesystem::path& path, const TaskSpec& task) {
    json j;
    j["name"] = task.name;
    j["kind"] = task.kind == TaskKind::classification ? "classification" : "seq2seq";
    j["classes"] = task.classes;
    j["metric"] = task.metric;
    j["seed"] = task.seed;
    j["verbalizer"] = task.verbalizer.sequences;
    auto dump_split = [](const std::vector<Example>& split) {
        json out = json::array();
        for (const auto& ex : split) {
            json e;
            e["s1"] = ex.sentence1;
            e["s2"] = ex.sentence2;
            e["label"] = ex.label;
            out.push_back(std::move(e));
        }
        return out;
    };
    j["train"] = dump_split(task.train);
    j["val"] = dump_split(task.val);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ContractError("cannot open for writing: " + path.string());
    out << j.dump();
}

TaskSpec load_task(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open: " + path.string());
    json j = json::parse(in);
    TaskSpec task;
    task.name = j.at("name").get<std::string>();
    task.kind = j.at("kind").get<std::string>() == "seq2seq" ? TaskKind::seq2seq
                                                             : TaskKind::classification;
    task.classes = j.at("classes").get<std::size_t>();
    task.metric = j.at("metric").get<std::string>();
    task.seed = j.at("seed").get<std::uint64_t>();
    task.verbalizer.sequences =
        j.at("verbalizer").get<std::vector<std::vector<std::size_t>>>();
    auto read_split = [](const json& arr) {
        std::vector<Example> out;
        out.reserve(arr.size());
        for (const auto& e : arr) {
            Example ex;
            ex.sentence1 = e.at("s1").get<std::vector<std::size_t>>();
            ex.sentence2 = e.at("s2").get<std::vector<std::size_t>>();
            ex.label = e.at("label").get<std::size_t>();
            out.push_back(std::move(ex));
        }
        return out;
    };
    task.train = read_split(j.at("train"));
    task.val = read_split(j.at("val"));
    task.validate();
    return task;
}

std::vector<TaskSpec> load_or_generate_suite(std::uint64_t seed,
                                             const std::filesystem::path& dir,
                                             const Vocab& vocab) {
    std::vector<TaskSpec> suite;
    for (const auto& name : suite_task_names()) {
        auto path = dir / (std::to_string(seed) + "-" + name + ".json");
        if (std::filesystem::exists(path)) {
            suite.push_back(load_task(path));
        } else {
            suite.push_back(generate_task(name, seed, vocab));
            save_task(path, suite.back());
        }
    }
    return suite;
}

}  // namespace rpt
