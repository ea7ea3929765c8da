#include "rpt/backbone.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "rpt/optim.hpp"
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

std::string arch_name(Arch arch) {
    return arch == Arch::encoder_only ? "encoder-only" : "encoder-decoder";
}

Arch arch_from_name(const std::string& name) {
    if (name == "encoder-only") return Arch::encoder_only;
    if (name == "encoder-decoder") return Arch::encoder_decoder;
    throw ConfigError("unknown architecture: " + name);
}

void BackboneConfig::validate() const {
    if (heads == 0 || d_model == 0 || vocab == 0 || max_len == 0) {
        throw ConfigError("backbone config: zero-sized dimension");
    }
    if (d_model % heads != 0) {
        throw ConfigError("backbone config: d_model " + std::to_string(d_model) +
                          " not divisible by heads " + std::to_string(heads));
    }
    if (ln_eps <= 0.0) throw ConfigError("backbone config: ln_eps must be positive");
}

std::string BackboneConfig::to_json() const {
    json j;
    j["arch"] = arch_name(arch);
    j["layers"] = layers;
    j["d_model"] = d_model;
    j["heads"] = heads;
    j["ffn"] = ffn;
    j["vocab"] = vocab;
    j["max_len"] = max_len;
    j["ln_eps"] = ln_eps;
    return j.dump();
}

BackboneConfig BackboneConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    BackboneConfig cfg;
    cfg.arch = arch_from_name(j.at("arch").get<std::string>());
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ffn = j.at("ffn").get<std::size_t>();
    cfg.vocab = j.at("vocab").get<std::size_t>();
    cfg.max_len = j.at("max_len").get<std::size_t>();
    cfg.ln_eps = j.at("ln_eps").get<double>();
    cfg.validate();
    return cfg;
}

Backbone Backbone::init(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Backbone model;
    model.cfg_ = cfg;
    model.build_parameters(seed);
    model.bind_handles();
    return model;
}

void Backbone::build_parameters(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "backbone-init"));
    const std::size_t d = cfg_.d_model;
    const double proj = 1.0 / std::sqrt(static_cast<double>(d));
    const double ffn_proj = 1.0 / std::sqrt(static_cast<double>(cfg_.ffn));

    params_.add("backbone.tok_emb", uniform_tensor({cfg_.vocab, d}, -0.5, 0.5, rng));
    params_.add("backbone.pos_emb", uniform_tensor({cfg_.max_len, d}, -0.1, 0.1, rng));

    auto add_attn = [&](const std::string& prefix) {
        params_.add(prefix + ".wq", uniform_tensor({d, d}, -proj, proj, rng));
        params_.add(prefix + ".bq", Tensor::zeros({d}));
        params_.add(prefix + ".wk", uniform_tensor({d, d}, -proj, proj, rng));
        params_.add(prefix + ".bk", Tensor::zeros({d}));
        params_.add(prefix + ".wv", uniform_tensor({d, d}, -proj, proj, rng));
        params_.add(prefix + ".bv", Tensor::zeros({d}));
        params_.add(prefix + ".wo", uniform_tensor({d, d}, -proj, proj, rng));
        params_.add(prefix + ".bo", Tensor::zeros({d}));
    };
    auto add_block = [&](const std::string& prefix, bool with_cross) {
        params_.add(prefix + ".ln1.g", Tensor::filled({d}, 1.0));
        params_.add(prefix + ".ln1.b", Tensor::zeros({d}));
        add_attn(prefix + ".attn");
        if (with_cross) {
            params_.add(prefix + ".ln_cross.g", Tensor::filled({d}, 1.0));
            params_.add(prefix + ".ln_cross.b", Tensor::zeros({d}));
            add_attn(prefix + ".cross");
        }
        params_.add(prefix + ".ln2.g", Tensor::filled({d}, 1.0));
        params_.add(prefix + ".ln2.b", Tensor::zeros({d}));
        params_.add(prefix + ".ffn.w_in", uniform_tensor({d, cfg_.ffn}, -proj, proj, rng));
        params_.add(prefix + ".ffn.b_in", Tensor::zeros({cfg_.ffn}));
        params_.add(prefix + ".ffn.w_out",
                    uniform_tensor({cfg_.ffn, d}, -ffn_proj, ffn_proj, rng));
        params_.add(prefix + ".ffn.b_out", Tensor::zeros({d}));
    };

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        add_block("backbone.enc." + std::to_string(l), false);
    }
    if (cfg_.arch == Arch::encoder_decoder) {
        params_.add("backbone.dec_pos_emb", uniform_tensor({cfg_.max_len, d}, -0.1, 0.1, rng));
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            add_block("backbone.dec." + std::to_string(l), true);
        }
    }
}

void Backbone::bind_handles() {
    tok_emb_ = params_.at("backbone.tok_emb").tensor;
    pos_emb_ = params_.at("backbone.pos_emb").tensor;

    auto bind_attn = [&](const std::string& prefix) {
        Attn a;
        a.wq = params_.at(prefix + ".wq").tensor;
        a.bq = params_.at(prefix + ".bq").tensor;
        a.wk = params_.at(prefix + ".wk").tensor;
        a.bk = params_.at(prefix + ".bk").tensor;
        a.wv = params_.at(prefix + ".wv").tensor;
        a.bv = params_.at(prefix + ".bv").tensor;
        a.wo = params_.at(prefix + ".wo").tensor;
        a.bo = params_.at(prefix + ".bo").tensor;
        return a;
    };
    auto bind_block = [&](const std::string& prefix, bool with_cross) {
        Block b;
        b.ln1_g = params_.at(prefix + ".ln1.g").tensor;
        b.ln1_b = params_.at(prefix + ".ln1.b").tensor;
        b.self_attn = bind_attn(prefix + ".attn");
        if (with_cross) {
            b.ln_cross_g = params_.at(prefix + ".ln_cross.g").tensor;
            b.ln_cross_b = params_.at(prefix + ".ln_cross.b").tensor;
            b.cross_attn = bind_attn(prefix + ".cross");
        }
        b.ln2_g = params_.at(prefix + ".ln2.g").tensor;
        b.ln2_b = params_.at(prefix + ".ln2.b").tensor;
        b.w_in = params_.at(prefix + ".ffn.w_in").tensor;
        b.b_in = params_.at(prefix + ".ffn.b_in").tensor;
        b.w_out = params_.at(prefix + ".ffn.w_out").tensor;
        b.b_out = params_.at(prefix + ".ffn.b_out").tensor;
        return b;
    };

    enc_blocks_.clear();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        enc_blocks_.push_back(bind_block("backbone.enc." + std::to_string(l), false));
    }
    dec_blocks_.clear();
    if (cfg_.arch == Arch::encoder_decoder) {
        dec_pos_emb_ = params_.at("backbone.dec_pos_emb").tensor;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            dec_blocks_.push_back(bind_block("backbone.dec." + std::to_string(l), true));
        }
    }
}

Backbone Backbone::clone() const {
    Backbone copy;
    copy.cfg_ = cfg_;
    copy.frozen_ = frozen_;
    for (const auto& p : params_.all()) {
        copy.params_.add(p.name, p.tensor.detached_copy(), p.trainable);
    }
    copy.bind_handles();
    return copy;
}

void Backbone::freeze() {
    for (auto& p : params_.all()) p.set_trainable(false);
    frozen_ = true;
}

void Backbone::unfreeze() {
    for (auto& p : params_.all()) p.set_trainable(true);
    frozen_ = false;
}

std::string Backbone::parameter_fingerprint() const {
    return sha256_hex(encode_parameters(params_.all()));
}

const Tensor& Backbone::token_embeddings() const { return tok_emb_; }

Tensor Backbone::embed(const SequenceRecipe& recipe, const Tensor& prompt_rows) const {
    const std::size_t d = cfg_.d_model;
    if (recipe.slots.size() > cfg_.max_len) {
        throw LengthError("sequence length " + std::to_string(recipe.slots.size()) +
                          " exceeds max_len " + std::to_string(cfg_.max_len));
    }
    Tensor out;
    std::size_t i = 0;
    const std::size_t total = recipe.slots.size();
    while (i < total) {
        Tensor segment;
        if (recipe.slots[i].is_prompt) {
            if (!prompt_rows.defined()) {
                throw ContractError("recipe has prompt slots but no prompt rows given");
            }
            std::size_t start = recipe.slots[i].index;
            std::size_t len = 0;
            while (i + len < total && recipe.slots[i + len].is_prompt) ++len;
            if (start + len > prompt_rows.extent(0)) {
                throw DimensionError("prompt slot range exceeds prompt matrix " +
                                     shape_to_string(prompt_rows.shape()));
            }
            segment = ops::slice_rows(prompt_rows, start, len);
            i += len;
        } else {
            std::vector<std::size_t> ids;
            while (i < total && !recipe.slots[i].is_prompt) {
                ids.push_back(recipe.slots[i].index);
                ++i;
            }
            segment = ops::embedding_lookup(tok_emb_, ids);
        }
        out = out.defined() ? ops::concat_seq(out, segment) : segment;
    }
    if (!out.defined()) out = Tensor::zeros({0, d});
    return out;
}

Tensor Backbone::attention(const Attn& w, const Tensor& q_in, const Tensor& kv_in,
                           const std::vector<std::uint8_t>& keep) const {
    const std::size_t d = cfg_.d_model;
    const std::size_t heads = cfg_.heads;
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor q = ops::add_rowwise(ops::matmul(q_in, w.wq), w.bq);
    Tensor k = ops::add_rowwise(ops::matmul(kv_in, w.wk), w.bk);
    Tensor v = ops::add_rowwise(ops::matmul(kv_in, w.wv), w.bv);

    Tensor merged;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = ops::slice_cols(q, h * dh, dh);
        Tensor kh = ops::slice_cols(k, h * dh, dh);
        Tensor vh = ops::slice_cols(v, h * dh, dh);
        Tensor scores = ops::scale(ops::matmul_bt(qh, kh), inv_sqrt);
        Tensor probs = ops::masked_rows_softmax(scores, keep);
        Tensor ctx = ops::matmul(probs, vh);
        merged = merged.defined() ? ops::concat_cols(merged, ctx) : ctx;
    }
    return ops::add_rowwise(ops::matmul(merged, w.wo), w.bo);
}

Tensor Backbone::encode(const Tensor& x, const std::vector<std::uint8_t>& mask) const {
    const std::size_t len = x.extent(0);
    if (len > cfg_.max_len) {
        throw LengthError("sequence length " + std::to_string(len) + " exceeds max_len " +
                          std::to_string(cfg_.max_len));
    }
    if (mask.size() != len) {
        throw DimensionError("attention mask length " + std::to_string(mask.size()) +
                             " does not match sequence length " + std::to_string(len));
    }

    Tensor h = ops::add(x, ops::slice_rows(pos_emb_, 0, len));

    // every query may attend to every unpadded key
    std::vector<std::uint8_t> keep(len * len);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j) keep[i * len + j] = mask[j];

    for (const Block& b : enc_blocks_) {
        Tensor a = ops::layer_norm(h, b.ln1_g, b.ln1_b, cfg_.ln_eps);
        h = ops::add(h, attention(b.self_attn, a, a, keep));
        Tensor f = ops::layer_norm(h, b.ln2_g, b.ln2_b, cfg_.ln_eps);
        Tensor inner = ops::relu(ops::add_rowwise(ops::matmul(f, b.w_in), b.b_in));
        h = ops::add(h, ops::add_rowwise(ops::matmul(inner, b.w_out), b.b_out));
    }
    return h;
}

Tensor Backbone::classify_logits(const Tensor& hidden, std::size_t cls_pos,
                                 const Tensor& head_w) const {
    if (head_w.rank() != 2 || head_w.extent(1) != cfg_.d_model) {
        throw DimensionError("classification head must be [classes x d_model], got " +
                             shape_to_string(head_w.shape()));
    }
    if (head_w.extent(0) < 2) {
        throw ConfigError("classification head needs at least 2 classes");
    }
    Tensor h_cls = ops::slice_rows(hidden, cls_pos, 1);
    Tensor logits = ops::matmul_bt(h_cls, head_w);  // [1 x C]
    return ops::reshape(logits, {head_w.extent(0)});
}

Tensor Backbone::encode_classify(const Tensor& x, const std::vector<std::uint8_t>& mask,
                                 std::size_t cls_pos, const Tensor& head_w) const {
    Tensor hidden = encode(x, mask);
    return ops::softmax(classify_logits(hidden, cls_pos, head_w), 0);
}

Tensor Backbone::decode_hidden(const Tensor& enc_hidden,
                               const std::vector<std::uint8_t>& enc_mask,
                               const std::vector<std::size_t>& dec_ids) const {
    if (cfg_.arch != Arch::encoder_decoder) {
        throw ContractError("decode on an encoder-only backbone");
    }
    const std::size_t t = dec_ids.size();
    Tensor h = ops::add(ops::embedding_lookup(tok_emb_, dec_ids),
                        ops::slice_rows(dec_pos_emb_, 0, t));

    std::vector<std::uint8_t> causal(t * t, 0);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j <= i; ++j) causal[i * t + j] = 1;

    const std::size_t enc_len = enc_hidden.extent(0);
    std::vector<std::uint8_t> cross(t * enc_len);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < enc_len; ++j) cross[i * enc_len + j] = enc_mask[j];

    for (const Block& b : dec_blocks_) {
        Tensor a = ops::layer_norm(h, b.ln1_g, b.ln1_b, cfg_.ln_eps);
        h = ops::add(h, attention(b.self_attn, a, a, causal));
        Tensor c = ops::layer_norm(h, b.ln_cross_g, b.ln_cross_b, cfg_.ln_eps);
        h = ops::add(h, attention(b.cross_attn, c, enc_hidden, cross));
        Tensor f = ops::layer_norm(h, b.ln2_g, b.ln2_b, cfg_.ln_eps);
        Tensor inner = ops::relu(ops::add_rowwise(ops::matmul(f, b.w_in), b.b_in));
        h = ops::add(h, ops::add_rowwise(ops::matmul(inner, b.w_out), b.b_out));
    }
    return h;
}

Tensor Backbone::seq2seq_logits(const Tensor& enc_x,
                                const std::vector<std::uint8_t>& enc_mask,
                                const std::vector<std::size_t>& label_tokens) const {
    if (label_tokens.empty()) {
        throw ContractError("seq2seq: empty label token sequence");
    }
    for (std::size_t id : label_tokens) {
        if (id >= cfg_.vocab) {
            throw IndexError("seq2seq: label token " + std::to_string(id) +
                             " out of vocabulary");
        }
    }
    Tensor enc_hidden = encode(enc_x, enc_mask);
    // teacher forcing with [PAD] as the decoder start token
    std::vector<std::size_t> dec_ids;
    dec_ids.push_back(Vocab::pad);
    dec_ids.insert(dec_ids.end(), label_tokens.begin(), label_tokens.end() - 1);
    Tensor dec_hidden = decode_hidden(enc_hidden, enc_mask, dec_ids);
    return ops::matmul_bt(dec_hidden, tok_emb_);  // [T x V], tied output layer
}

Tensor Backbone::seq2seq_nll(const Tensor& enc_x, const std::vector<std::uint8_t>& enc_mask,
                             const std::vector<std::size_t>& label_tokens) const {
    Tensor logits = seq2seq_logits(enc_x, enc_mask, label_tokens);
    Tensor loss;
    for (std::size_t t = 0; t < label_tokens.size(); ++t) {
        Tensor row = ops::reshape(ops::slice_rows(logits, t, 1), {cfg_.vocab});
        Tensor nll = ops::cross_entropy(row, label_tokens[t]);
        loss = loss.defined() ? ops::add(loss, nll) : nll;
    }
    return loss;
}

std::vector<std::size_t> Backbone::greedy_decode(const Tensor& enc_x,
                                                 const std::vector<std::uint8_t>& enc_mask,
                                                 std::size_t max_steps) const {
    NoGradGuard no_grad;
    Tensor enc_hidden = encode(enc_x, enc_mask);
    std::vector<std::size_t> emitted;
    for (std::size_t step = 0; step < max_steps; ++step) {
        std::vector<std::size_t> dec_ids;
        dec_ids.push_back(Vocab::pad);
        dec_ids.insert(dec_ids.end(), emitted.begin(), emitted.end());
        Tensor dec_hidden = decode_hidden(enc_hidden, enc_mask, dec_ids);
        Tensor last = ops::slice_rows(dec_hidden, dec_ids.size() - 1, 1);
        Tensor logits = ops::matmul_bt(last, tok_emb_);
        auto row = logits.data();
        std::size_t best = 0;
        for (std::size_t v = 1; v < cfg_.vocab; ++v)
            if (row[v] > row[best]) best = v;
        emitted.push_back(best);
        if (best == Vocab::eos) break;
    }
    return emitted;
}

void Backbone::save(const std::filesystem::path& path) const {
    Checkpoint ckpt;
    json meta;
    meta["config"] = json::parse(cfg_.to_json());
    meta["frozen"] = frozen_;
    ckpt.meta_json = meta.dump();
    for (const auto& p : params_.all()) ckpt.tensors.push_back({p.name, p.tensor});
    save_checkpoint(path, ckpt);
}

Backbone Backbone::load(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    json meta = json::parse(ckpt.meta_json);
    BackboneConfig cfg = BackboneConfig::from_json(meta.at("config").dump());
    Backbone model = Backbone::init(cfg, 0);
    if (ckpt.tensors.size() != model.params_.all().size()) {
        throw ContractError("backbone checkpoint has " + std::to_string(ckpt.tensors.size()) +
                            " tensors, expected " +
                            std::to_string(model.params_.all().size()));
    }
    for (auto& p : model.params_.all()) {
        const NamedTensor* stored = ckpt.find(p.name);
        if (!stored) throw ContractError("backbone checkpoint missing tensor " + p.name);
        if (stored->tensor.shape() != p.tensor.shape()) {
            throw DimensionError("backbone checkpoint tensor " + p.name + " has shape " +
                                 shape_to_string(stored->tensor.shape()) + ", expected " +
                                 shape_to_string(p.tensor.shape()));
        }
        std::copy(stored->tensor.data().begin(), stored->tensor.data().end(),
                  p.tensor.data_mut().begin());
    }
    if (meta.at("frozen").get<bool>()) model.freeze();
    return model;
}

// ---------------------------------------------------------------------------
// Synthetic pretraining
// ---------------------------------------------------------------------------

namespace {

struct MaskedBatchItem {
    std::vector<std::size_t> input_ids;
    std::vector<std::size_t> targets;    // original ids at masked positions
    std::vector<std::size_t> positions;  // masked positions
};

MaskedBatchItem mask_sequence(const std::vector<std::size_t>& seq, Rng& rng) {
    MaskedBatchItem item;
    item.input_ids = seq;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (rng.uniform01() < 0.15) {
            item.positions.push_back(i);
            item.targets.push_back(seq[i]);
            item.input_ids[i] = Vocab::mask;
        }
    }
    if (item.positions.empty()) {
        std::size_t i = rng.below(seq.size());
        item.positions.push_back(i);
        item.targets.push_back(seq[i]);
        item.input_ids[i] = Vocab::mask;
    }
    return item;
}

}  // namespace

PretrainStats pretrain_backbone(Backbone& model,
                                const std::vector<std::vector<std::size_t>>& corpus,
                                std::size_t steps, std::uint64_t seed, double lr) {
    if (corpus.empty()) throw ContractError("pretrain: empty corpus");
    PretrainStats stats;
    stats.steps = steps;
    if (steps == 0) return stats;

    const bool enc_dec = model.config().arch == Arch::encoder_decoder;
    const std::size_t batch = 16;
    // last tenth of the corpus is held out for the accuracy probe
    const std::size_t train_count = std::max<std::size_t>(1, corpus.size() * 9 / 10);

    std::vector<Parameter*> trainable;
    model.params().append_pointers(trainable);
    OptimConfig ocfg;
    ocfg.lr = lr;
    ocfg.weight_decay = 0.01;
    AdamW opt(trainable, ocfg);
    Rng rng(derive_seed(seed, "pretrain"));

    auto mlm_loss = [&](const std::vector<std::size_t>& seq, Rng& r) {
        MaskedBatchItem item = mask_sequence(seq, r);
        SequenceRecipe recipe;
        for (std::size_t id : item.input_ids) recipe.slots.push_back({false, id});
        recipe.real_len = recipe.slots.size();
        Tensor x = model.embed(recipe, Tensor());
        Tensor h = model.encode(x, recipe.attention_mask());
        Tensor loss;
        for (std::size_t k = 0; k < item.positions.size(); ++k) {
            Tensor row = ops::slice_rows(h, item.positions[k], 1);
            Tensor logits = ops::reshape(ops::matmul_bt(row, model.token_embeddings()),
                                         {model.config().vocab});
            Tensor nll = ops::cross_entropy(logits, item.targets[k]);
            loss = loss.defined() ? ops::add(loss, nll) : nll;
        }
        return ops::scale(loss, 1.0 / static_cast<double>(item.positions.size()));
    };

    auto span_loss = [&](const std::vector<std::size_t>& seq, Rng& r) {
        std::size_t span_len = 1 + r.below(std::min<std::size_t>(3, seq.size()));
        std::size_t start = r.below(seq.size() - span_len + 1);
        std::vector<std::size_t> input_ids(seq.begin(), seq.begin() + start);
        input_ids.push_back(Vocab::mask);
        input_ids.insert(input_ids.end(), seq.begin() + start + span_len, seq.end());
        std::vector<std::size_t> label(seq.begin() + start, seq.begin() + start + span_len);
        label.push_back(Vocab::eos);

        SequenceRecipe recipe;
        for (std::size_t id : input_ids) recipe.slots.push_back({false, id});
        recipe.real_len = recipe.slots.size();
        Tensor x = model.embed(recipe, Tensor());
        Tensor nll = model.seq2seq_nll(x, recipe.attention_mask(), label);
        return ops::scale(nll, 1.0 / static_cast<double>(label.size()));
    };

    double last_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
        opt.zero_grad();
        Tensor batch_loss;
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& seq = corpus[rng.below(train_count)];
            Tensor item_loss = enc_dec ? span_loss(seq, rng) : mlm_loss(seq, rng);
            batch_loss = batch_loss.defined() ? ops::add(batch_loss, item_loss) : item_loss;
        }
        batch_loss = ops::scale(batch_loss, 1.0 / static_cast<double>(batch));
        last_loss = batch_loss.value();
        if (!std::isfinite(last_loss)) throw NumericError("pretrain: non-finite loss");
        batch_loss.backward();
        opt.step();
    }
    stats.final_loss = last_loss;

    // held-out probe: masked-token (or span-token) prediction accuracy
    NoGradGuard no_grad;
    Rng probe_rng(derive_seed(seed, "pretrain-probe"));
    std::size_t correct = 0, total = 0;
    for (std::size_t i = train_count; i < corpus.size() && total < 200; ++i) {
        const auto& seq = corpus[i];
        if (enc_dec) {
            std::size_t span_len = 1;
            std::size_t start = probe_rng.below(seq.size());
            std::vector<std::size_t> input_ids(seq.begin(), seq.begin() + start);
            input_ids.push_back(Vocab::mask);
            input_ids.insert(input_ids.end(), seq.begin() + start + span_len, seq.end());
            SequenceRecipe recipe;
            for (std::size_t id : input_ids) recipe.slots.push_back({false, id});
            recipe.real_len = recipe.slots.size();
            Tensor x = model.embed(recipe, Tensor());
            auto decoded = model.greedy_decode(x, recipe.attention_mask(), 1);
            correct += !decoded.empty() && decoded[0] == seq[start] ? 1 : 0;
            ++total;
        } else {
            MaskedBatchItem item = mask_sequence(seq, probe_rng);
            SequenceRecipe recipe;
            for (std::size_t id : item.input_ids) recipe.slots.push_back({false, id});
            recipe.real_len = recipe.slots.size();
            Tensor x = model.embed(recipe, Tensor());
            Tensor h = model.encode(x, recipe.attention_mask());
            for (std::size_t k = 0; k < item.positions.size(); ++k) {
                Tensor row = ops::slice_rows(h, item.positions[k], 1);
                Tensor logits = ops::matmul_bt(row, model.token_embeddings());
                auto vals = logits.data();
                std::size_t best = 0;
                for (std::size_t v = 1; v < model.config().vocab; ++v)
                    if (vals[v] > vals[best]) best = v;
                correct += best == item.targets[k] ? 1 : 0;
                ++total;
            }
        }
    }
    stats.heldout_token_accuracy =
        total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    return stats;
}

}  // namespace rpt
