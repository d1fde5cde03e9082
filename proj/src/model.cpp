#include "vpit/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vpit {

void ModelConfig::validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || d_v == 0 || vocab_size == 0 || m < 2 ||
        max_len == 0)
        throw std::invalid_argument("model config: all dimensions must be positive (m >= 2)");
    if (d_model % heads != 0)
        throw std::invalid_argument("model config: d_model must be divisible by heads");
}

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "model-init"));
    ModelParams p;
    p.config = cfg;
    size_t d = cfg.d_model, v = cfg.vocab_size, dv = cfg.d_v, h = 4 * cfg.d_model;
    double sd = 1.0 / std::sqrt(static_cast<double>(d));

    p.tok_embed = Tensor::randn({v, d}, rng, 0.05);
    p.pos_embed = Tensor::randn({cfg.max_len, d}, rng, 0.05);
    p.adapter_w1 = Tensor::randn({dv, d}, rng, 1.0 / std::sqrt(static_cast<double>(dv)));
    p.adapter_b1 = Tensor::zeros({d});
    p.adapter_w2 = Tensor::randn({d, d}, rng, sd);
    p.adapter_b2 = Tensor::zeros({d});
    for (size_t l = 0; l < cfg.layers; ++l) {
        LayerParams lp;
        lp.attn_gain = Tensor::full({d}, 1.0);
        lp.wq = Tensor::randn({d, d}, rng, sd);
        lp.wk = Tensor::randn({d, d}, rng, sd);
        lp.wv = Tensor::randn({d, d}, rng, sd);
        lp.wo = Tensor::randn({d, d}, rng, sd * 0.5);
        lp.bq = Tensor::zeros({d});
        lp.bk = Tensor::zeros({d});
        lp.bv = Tensor::zeros({d});
        lp.bo = Tensor::zeros({d});
        lp.ffn_gain = Tensor::full({d}, 1.0);
        lp.w1 = Tensor::randn({d, h}, rng, sd);
        lp.b1 = Tensor::zeros({h});
        lp.w2 = Tensor::randn({h, d}, rng, 0.5 / std::sqrt(static_cast<double>(h)));
        lp.b2 = Tensor::zeros({d});
        p.trunk.push_back(std::move(lp));
    }
    p.final_gain = Tensor::full({d}, 1.0);
    p.lang_w = Tensor::randn({d, v}, rng, sd);
    p.lang_b = Tensor::zeros({v});
    p.vis_w = Tensor::randn({d, dv}, rng, sd);
    p.vis_b = Tensor::zeros({dv});

    for (const char* g : {"embedding", "adapter", "trunk", "lang_head", "vision_head"})
        p.frozen[g] = false;
    for (auto& nt : p.named_tensors()) nt.tensor.set_requires_grad(true);
    return p;
}

std::vector<ModelParams::Named> ModelParams::named_tensors() const {
    std::vector<Named> out;
    out.push_back({"embedding", "tok_embed", tok_embed});
    out.push_back({"embedding", "pos_embed", pos_embed});
    out.push_back({"adapter", "adapter_w1", adapter_w1});
    out.push_back({"adapter", "adapter_b1", adapter_b1});
    out.push_back({"adapter", "adapter_w2", adapter_w2});
    out.push_back({"adapter", "adapter_b2", adapter_b2});
    for (size_t l = 0; l < trunk.size(); ++l) {
        const auto& lp = trunk[l];
        std::string prefix = "layer" + std::to_string(l) + ".";
        out.push_back({"trunk", prefix + "attn_gain", lp.attn_gain});
        out.push_back({"trunk", prefix + "wq", lp.wq});
        out.push_back({"trunk", prefix + "wk", lp.wk});
        out.push_back({"trunk", prefix + "wv", lp.wv});
        out.push_back({"trunk", prefix + "wo", lp.wo});
        out.push_back({"trunk", prefix + "bq", lp.bq});
        out.push_back({"trunk", prefix + "bk", lp.bk});
        out.push_back({"trunk", prefix + "bv", lp.bv});
        out.push_back({"trunk", prefix + "bo", lp.bo});
        out.push_back({"trunk", prefix + "ffn_gain", lp.ffn_gain});
        out.push_back({"trunk", prefix + "w1", lp.w1});
        out.push_back({"trunk", prefix + "b1", lp.b1});
        out.push_back({"trunk", prefix + "w2", lp.w2});
        out.push_back({"trunk", prefix + "b2", lp.b2});
    }
    out.push_back({"trunk", "final_gain", final_gain});
    out.push_back({"lang_head", "lang_w", lang_w});
    out.push_back({"lang_head", "lang_b", lang_b});
    out.push_back({"vision_head", "vis_w", vis_w});
    out.push_back({"vision_head", "vis_b", vis_b});
    return out;
}

std::vector<Tensor> ModelParams::trainable() const {
    std::vector<Tensor> out;
    for (const auto& nt : named_tensors()) {
        if (!is_frozen(nt.group)) out.push_back(nt.tensor);
    }
    return out;
}

void ModelParams::set_frozen(const std::string& group, bool value) {
    if (!frozen.count(group)) throw std::invalid_argument("unknown parameter group: " + group);
    frozen[group] = value;
    for (auto& nt : named_tensors()) {
        if (nt.group == group) nt.tensor.set_requires_grad(!value);
    }
}

bool ModelParams::is_frozen(const std::string& group) const {
    auto it = frozen.find(group);
    return it != frozen.end() && it->second;
}

uint64_t ModelParams::group_hash(const std::string& group) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& nt : named_tensors()) {
        if (nt.group == group) h = hash_doubles(nt.tensor.data(), h);
    }
    return h;
}

uint64_t ModelParams::weights_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& nt : named_tensors()) h = hash_doubles(nt.tensor.data(), h);
    return h;
}

Tensor adapter_project(const Tensor& tokens, const ModelParams& params) {
    if (tokens.cols() != params.config.d_v)
        throw std::invalid_argument("adapter_project: token dimension mismatch");
    Tensor h = gelu(add_rowvec(matmul(tokens, params.adapter_w1), params.adapter_b1));
    return add_rowvec(matmul(h, params.adapter_w2), params.adapter_b2);
}

namespace {

Tensor trunk_block(const Tensor& x_in, const LayerParams& lp, size_t heads) {
    size_t d = x_in.cols();
    size_t dh = d / heads;
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor x = x_in;
    Tensor h = mul_rowvec(rmsnorm_rows(x), lp.attn_gain);
    Tensor q = add_rowvec(matmul(h, lp.wq), lp.bq);
    Tensor k = add_rowvec(matmul(h, lp.wk), lp.bk);
    Tensor v = add_rowvec(matmul(h, lp.wv), lp.bv);
    std::vector<Tensor> ctx;
    ctx.reserve(heads);
    for (size_t hd = 0; hd < heads; ++hd) {
        Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
        Tensor kh = slice_cols(k, hd * dh, (hd + 1) * dh);
        Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
        Tensor attn = causal_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
        ctx.push_back(matmul(attn, vh));
    }
    x = add(x, add_rowvec(matmul(concat_cols(ctx), lp.wo), lp.bo));
    Tensor f = mul_rowvec(rmsnorm_rows(x), lp.ffn_gain);
    Tensor ff = add_rowvec(matmul(gelu(add_rowvec(matmul(f, lp.w1), lp.b1)), lp.w2), lp.b2);
    return add(x, ff);
}

}  // namespace

SeqOutput forward_seq(const MMSequence& seq, size_t len, const ModelParams& params) {
    const ModelConfig& cfg = params.config;
    if (len == 0 || len > seq.length())
        throw std::invalid_argument("forward_seq: bad length");
    if (len > cfg.max_len) throw std::invalid_argument("forward_seq: sequence too long");

    // split positions by kind, embed each side, then restore order
    std::vector<size_t> text_ids;
    std::vector<double> vis_data;
    std::vector<size_t> order(len);
    size_t text_count = 0, vis_count = 0;
    for (size_t t = 0; t < len; ++t) {
        const MMItem& it = seq.items[t];
        if (it.is_visual) {
            if (it.vec.size() != cfg.d_v)
                throw std::invalid_argument("forward_seq: visual vector dimension mismatch");
            vis_data.insert(vis_data.end(), it.vec.begin(), it.vec.end());
            ++vis_count;
        } else {
            if (it.id < 0 || static_cast<size_t>(it.id) >= cfg.vocab_size)
                throw std::invalid_argument("forward_seq: token id out of range");
            text_ids.push_back(static_cast<size_t>(it.id));
            ++text_count;
        }
    }
    size_t ti = 0, vi = 0;
    for (size_t t = 0; t < len; ++t) {
        order[t] = seq.items[t].is_visual ? text_count + vi++ : ti++;
    }

    Tensor text_emb = gather_rows(params.tok_embed, text_ids);  // [0,d] impossible: BOS present
    Tensor x;
    if (vis_count > 0) {
        Tensor vis = Tensor::from_data({vis_count, cfg.d_v}, std::move(vis_data));
        Tensor vis_emb = adapter_project(vis, params);
        x = gather_rows(concat_rows({text_emb, vis_emb}), order);
    } else {
        x = gather_rows(text_emb, order);
    }
    std::vector<size_t> pos_idx(len);
    for (size_t t = 0; t < len; ++t) pos_idx[t] = t;
    x = add(x, gather_rows(params.pos_embed, pos_idx));

    for (const auto& lp : params.trunk) x = trunk_block(x, lp, cfg.heads);
    Tensor f = mul_rowvec(rmsnorm_rows(x), params.final_gain);

    SeqOutput out;
    out.text_logits = add_rowvec(matmul(f, params.lang_w), params.lang_b);
    out.visual_pred = add_rowvec(matmul(f, params.vis_w), params.vis_b);
    return out;
}

std::vector<SeqOutput> forward(const Batch& batch, const ModelParams& params) {
    std::vector<SeqOutput> out;
    out.reserve(batch.seqs.size());
    for (size_t i = 0; i < batch.seqs.size(); ++i)
        out.push_back(forward_seq(batch.seqs[i], batch.lengths[i], params));
    return out;
}

namespace {

size_t argmax_row(const Tensor& t, size_t row) {
    size_t c = t.cols();
    const double* p = t.data().data() + row * c;
    size_t best = 0;
    for (size_t j = 1; j < c; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

int sample_text_token(const Tensor& logits, size_t row, double temperature, Rng& rng) {
    size_t c = logits.cols();
    std::vector<double> z(logits.data().begin() + static_cast<long>(row * c),
                          logits.data().begin() + static_cast<long>((row + 1) * c));
    // PAD and BOS are never valid mid-sequence
    z[Vocab::kPad] = -1e30;
    z[Vocab::kBos] = -1e30;
    if (temperature <= 0.0) {
        size_t best = 0;
        for (size_t j = 1; j < c; ++j)
            if (z[j] > z[best]) best = j;
        return static_cast<int>(best);
    }
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double total = 0.0;
    for (double& v : z) {
        v = std::exp((v - mx) / temperature);
        total += v;
    }
    double u = rng.uniform() * total;
    double acc = 0.0;
    for (size_t j = 0; j < c; ++j) {
        acc += z[j];
        if (u < acc) return static_cast<int>(j);
    }
    return static_cast<int>(c - 1);
}

}  // namespace

MMSequence generate(const MMSequence& prompt, const ModelParams& params, const GenConfig& cfg) {
    if (prompt.items.empty()) throw std::invalid_argument("generate: empty prompt");
    if (cfg.m_max == 0) throw std::invalid_argument("generate: m_max must be positive");
    std::string why;
    if (!boundary_integrity(prompt, params.config.m, false, &why))
        throw std::invalid_argument("generate: malformed prompt: " + why);
    if (prompt.items.back().is_visual)
        throw std::invalid_argument("generate: prompt must end inside a text span");

    Rng rng(derive_seed(cfg.seed, "generate"));
    MMSequence seq = prompt;
    bool vision_mode = false;
    size_t run_len = 0;
    int round = prompt.items.back().round;

    for (size_t step = 0; step < cfg.max_new; ++step) {
        if (seq.length() >= params.config.max_len) break;
        SeqOutput out = forward_seq(seq, seq.length(), params);
        size_t last = seq.length() - 1;

        if (vision_mode) {
            // consult the language head for the stop token every step
            if (argmax_row(out.text_logits, last) == Vocab::kImgEnd || run_len >= cfg.m_max) {
                MMItem it;
                it.id = Vocab::kImgEnd;
                it.round = round;
                seq.items.push_back(std::move(it));
                vision_mode = false;
                run_len = 0;
            } else {
                MMItem it;
                it.is_visual = true;
                it.vec.assign(out.visual_pred.data().begin() + static_cast<long>(last * params.config.d_v),
                              out.visual_pred.data().begin() +
                                  static_cast<long>((last + 1) * params.config.d_v));
                it.round = round;
                seq.items.push_back(std::move(it));
                ++run_len;
            }
        } else {
            int id = sample_text_token(out.text_logits, last, cfg.temperature, rng);
            MMItem it;
            it.id = id;
            it.round = round;
            seq.items.push_back(std::move(it));
            if (id == Vocab::kImgStart) {
                vision_mode = true;
                run_len = 0;
            } else if (id == Vocab::kEos) {
                break;
            }
        }
    }
    // a run cut off by max_new still gets its closing boundary
    if (vision_mode && seq.length() < params.config.max_len) {
        MMItem it;
        it.id = Vocab::kImgEnd;
        it.round = round;
        seq.items.push_back(std::move(it));
    }
    return seq;
}

// ---- checkpoints ----

namespace {

constexpr char kCkptMagic[8] = {'V', 'P', 'I', 'T', 'C', 'K', 'P', '1'};

void put_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ofstream& f, const std::string& s) {
    put_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::ifstream& f) {
    uint32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw std::runtime_error("checkpoint: truncated");
    return v;
}
uint64_t get_u64(std::ifstream& f) {
    uint64_t v;
    f.read(reinterpret_cast<char*>(&v), 8);
    if (!f) throw std::runtime_error("checkpoint: truncated");
    return v;
}
std::string get_str(std::ifstream& f) {
    uint32_t n = get_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw std::runtime_error("checkpoint: truncated");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kCkptMagic, 8);
    put_u32(f, 1);
    const ModelConfig& c = params.config;
    for (uint64_t v : {c.d_model, c.layers, c.heads, c.d_v, c.vocab_size, c.m, c.max_len})
        put_u64(f, v);
    auto named = params.named_tensors();
    put_u32(f, static_cast<uint32_t>(named.size()));
    for (const auto& nt : named) {
        put_str(f, nt.group);
        put_str(f, nt.name);
        f.put(params.is_frozen(nt.group) ? 1 : 0);
        put_u32(f, static_cast<uint32_t>(nt.tensor.shape().size()));
        for (size_t d : nt.tensor.shape()) put_u64(f, d);
        f.write(reinterpret_cast<const char*>(nt.tensor.data().data()),
                static_cast<std::streamsize>(nt.tensor.numel() * sizeof(double)));
    }
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic");
    if (get_u32(f) != 1) throw std::runtime_error("load_checkpoint: bad version");
    ModelConfig cfg;
    cfg.d_model = get_u64(f);
    cfg.layers = get_u64(f);
    cfg.heads = get_u64(f);
    cfg.d_v = get_u64(f);
    cfg.vocab_size = get_u64(f);
    cfg.m = get_u64(f);
    cfg.max_len = get_u64(f);
    ModelParams params = ModelParams::init(cfg, 0);
    uint32_t count = get_u32(f);
    auto named = params.named_tensors();
    if (count != named.size()) throw std::runtime_error("load_checkpoint: tensor count mismatch");
    std::map<std::string, bool> frozen;
    for (uint32_t i = 0; i < count; ++i) {
        std::string group = get_str(f);
        std::string name = get_str(f);
        int fz = f.get();
        if (fz < 0) throw std::runtime_error("load_checkpoint: truncated");
        frozen[group] = fz != 0;
        const auto& nt = named[i];
        if (nt.group != group || nt.name != name)
            throw std::runtime_error("load_checkpoint: unexpected tensor " + group + "/" + name);
        uint32_t ndim = get_u32(f);
        std::vector<size_t> shape(ndim);
        for (auto& d : shape) d = get_u64(f);
        if (shape != nt.tensor.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(nt.tensor.data().data()),
               static_cast<std::streamsize>(nt.tensor.numel() * sizeof(double)));
        if (!f) throw std::runtime_error("load_checkpoint: truncated tensor data");
    }
    for (const auto& [group, fz] : frozen) params.set_frozen(group, fz);
    return params;
}

}  // namespace vpit
