#include "windformer/model.hpp"

#include <cmath>

#include "windformer/errors.hpp"
#include "windformer/rng.hpp"

namespace windformer {

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

std::string ModelConfig::variant_name() const {
    if (rep_by_attn) return "rep_by_attn";
    if (no_dev) return "no_dev";
    if (no_edv) return "no_edv";
    if (no_esc) return "no_esc";
    if (no_esvc) return "no_esvc";
    if (no_evc) return "no_evc";
    return "full";
}

void ModelConfig::validate() const {
    if (turbines < 1 || exo_vars < 1 || embed_dim < 1 || model_dim < 1 || layers < 1 ||
        lookback < 1 || horizon < 1 || heads < 1 || ffn_mult < 1 || slots_per_day < 1)
        throw ConfigError("model dimensions must all be positive");
    if (model_dim % heads != 0)
        throw ConfigError("heads (" + std::to_string(heads) + ") must divide model_dim (" +
                          std::to_string(model_dim) + ")");
    int flags = int(rep_by_attn) + int(no_dev) + int(no_edv) + int(no_esc) + int(no_esvc) +
                int(no_evc);
    if (flags > 1) throw ConfigError("at most one ablation flag may be active per run");
    if (h_prime_cfg != 0 && (h_prime_cfg < 1 || h_prime_cfg > lookback + horizon))
        throw ConfigError("h_prime must lie in [1, lookback + horizon]");
    if (no_dev && h_prime() != lookback)
        throw ConfigError("no_dev shares the static encoder, which requires h_prime == lookback");
    if (dropout != 0.0)
        throw ConfigError("dropout is a reserved hook and must stay 0");
}

ModelConfig ModelConfig::toy() {
    ModelConfig cfg;
    cfg.turbines = 3;
    cfg.exo_vars = 2;
    cfg.embed_dim = 2;
    cfg.model_dim = 8;
    cfg.layers = 1;
    cfg.lookback = 8;
    cfg.horizon = 2;
    cfg.heads = 2;
    return cfg;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

void ModelParams::add(const ValuePtr& p) {
    if (by_name.count(p->name))
        throw ConfigError("duplicate parameter name " + p->name);
    order.push_back(p);
    by_name.emplace(p->name, p);
}

const ValuePtr& ModelParams::at(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
}

void ModelParams::zero_grads() {
    for (auto& p : order) p->zero_grad();
}

int64_t ModelParams::total_elements() const {
    int64_t n = 0;
    for (const auto& p : order) n += p->numel();
    return n;
}

namespace {

ValuePtr make_affine_weight(Rng& rng, int64_t fan_in, int64_t fan_out, std::string name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> d(static_cast<size_t>(fan_in * fan_out));
    for (auto& v : d) v = rng.uniform(-bound, bound);
    return Value::leaf(Shape{fan_in, fan_out}, std::move(d), true, std::move(name));
}

ValuePtr make_table(Rng& rng, int64_t rows, int64_t cols, std::string name) {
    std::vector<double> d(static_cast<size_t>(rows * cols));
    for (auto& v : d) v = rng.normal(0.0, 0.02);
    return Value::leaf(Shape{rows, cols}, std::move(d), true, std::move(name));
}

void add_mlp(ModelParams& mp, Rng& rng, const std::string& prefix, int64_t d_in,
             int64_t hidden, int64_t d_out, bool with_proj) {
    mp.add(make_affine_weight(rng, d_in, hidden, prefix + ".w1"));
    mp.add(Value::zeros(Shape{hidden}, true, prefix + ".b1"));
    mp.add(make_affine_weight(rng, hidden, d_out, prefix + ".w2"));
    mp.add(Value::zeros(Shape{d_out}, true, prefix + ".b2"));
    if (with_proj) mp.add(make_affine_weight(rng, d_in, d_out, prefix + ".proj"));
}

void add_attn(ModelParams& mp, Rng& rng, const std::string& prefix, int64_t dim) {
    for (const char* part : {"wq", "wk", "wv", "wo"})
        mp.add(make_affine_weight(rng, dim, dim, prefix + "." + part));
    for (const char* part : {"bq", "bk", "bv", "bo"})
        mp.add(Value::zeros(Shape{dim}, true, prefix + "." + part));
}

void add_ln(ModelParams& mp, const std::string& prefix, int64_t dim) {
    mp.add(Value::leaf(Shape{dim}, std::vector<double>(static_cast<size_t>(dim), 1.0), true,
                       prefix + ".gamma"));
    mp.add(Value::zeros(Shape{dim}, true, prefix + ".beta"));
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams mp;
    Rng rng(seed);
    const int64_t D = cfg.model_dim;
    const int64_t H = cfg.lookback;

    add_mlp(mp, rng, "embed.en", H, D, D, H != D);
    add_mlp(mp, rng, "embed.sex", H, D, D, H != D);
    if (!cfg.no_edv) {
        if (!cfg.no_dev) add_mlp(mp, rng, "embed.dex", cfg.h_prime(), D, D, cfg.h_prime() != D);
        mp.add(make_table(rng, cfg.slots_per_day, cfg.embed_dim, "tables.diurnal"));
        mp.add(make_table(rng, 12, cfg.embed_dim, "tables.monthly"));
        mp.add(make_table(rng, 366, cfg.embed_dim, "tables.yearly"));
    }

    const int64_t S = cfg.exo_tokens();
    for (int64_t l = 0; l < cfg.layers; ++l) {
        const std::string lp = "layer" + std::to_string(l);
        if (cfg.ext_var_attn()) {
            add_attn(mp, rng, lp + ".ext.var_attn", D);
            add_ln(mp, lp + ".ext.var_ln", D);
        }
        if (cfg.ext_spatial_attn()) {
            add_attn(mp, rng, lp + ".ext.sp_attn", D);
            add_ln(mp, lp + ".ext.sp_ln", D);
        }
        add_mlp(mp, rng, lp + ".ext.ffn", D, cfg.ffn_mult * D, D, false);
        add_ln(mp, lp + ".ext.ffn_ln", D);

        add_attn(mp, rng, lp + ".ent.sp_attn", D);
        add_ln(mp, lp + ".ent.sp_ln", D);
        if (cfg.rep_by_attn) {
            add_attn(mp, rng, lp + ".ent.cross_attn", D);
        } else {
            add_mlp(mp, rng, lp + ".ent.fusion", (1 + S) * D, D, D, true);
        }
        add_mlp(mp, rng, lp + ".ent.ffn", D, cfg.ffn_mult * D, D, false);
        add_ln(mp, lp + ".ent.ffn_ln", D);
    }

    add_mlp(mp, rng, "head", D, D, cfg.horizon, false);
    return mp;
}

AttnParams attn_params(const ModelParams& p, const std::string& prefix) {
    return AttnParams{p.at(prefix + ".wq"), p.at(prefix + ".bq"), p.at(prefix + ".wk"),
                      p.at(prefix + ".bk"), p.at(prefix + ".wv"), p.at(prefix + ".bv"),
                      p.at(prefix + ".wo"), p.at(prefix + ".bo")};
}

MlpParams mlp_params(const ModelParams& p, const std::string& prefix, bool with_proj) {
    MlpParams mp{p.at(prefix + ".w1"), p.at(prefix + ".b1"), p.at(prefix + ".w2"),
                 p.at(prefix + ".b2"), nullptr};
    if (with_proj) mp.proj = p.at(prefix + ".proj");
    return mp;
}

LnParams ln_params(const ModelParams& p, const std::string& prefix) {
    return LnParams{p.at(prefix + ".gamma"), p.at(prefix + ".beta")};
}

// ---------------------------------------------------------------------------
// building blocks
// ---------------------------------------------------------------------------

void expect_shape(const ValuePtr& v, const Shape& want, const char* site) {
    if (v->shape != want)
        throw ShapeError(std::string("shape ledger: ") + site + " is " + v->shape.str() +
                         ", expected " + want.str());
}

namespace {

ValuePtr affine(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b) {
    return add(matmul(x, w), b);
}

ValuePtr post_norm(const ValuePtr& x, const ValuePtr& sub, const LnParams& ln, double eps) {
    return layer_norm(add(x, sub), ln.gamma, ln.beta, eps);
}

}  // namespace

ValuePtr residual_mlp(const MlpParams& p, const ValuePtr& x, Activation act) {
    auto hidden = activate(affine(x, p.w1, p.b1), act);
    auto y = affine(hidden, p.w2, p.b2);
    auto res = p.proj ? matmul(x, p.proj) : x;
    return add(y, res);
}

ValuePtr feed_forward(const MlpParams& p, const ValuePtr& x, Activation act) {
    return affine(activate(affine(x, p.w1, p.b1), act), p.w2, p.b2);
}

ValuePtr multi_head_attention(const AttnParams& p, const ValuePtr& q_in,
                              const ValuePtr& kv_in, int64_t heads) {
    if (q_in->shape.rank() != 3 || kv_in->shape.rank() != 3)
        throw ShapeError("multi_head_attention expects rank-3 inputs, got " +
                         q_in->shape.str() + " and " + kv_in->shape.str());
    const int64_t G = q_in->shape[0];
    const int64_t Sq = q_in->shape[1];
    const int64_t Skv = kv_in->shape[1];
    const int64_t D = q_in->shape[2];
    if (kv_in->shape[0] != G || kv_in->shape[2] != D)
        throw ShapeError("multi_head_attention group/width mismatch: " + q_in->shape.str() +
                         " vs " + kv_in->shape.str());
    const int64_t dh = D / heads;

    auto split_heads = [&](const ValuePtr& x, int64_t S) {
        // [G, S, D] -> [G*heads, S, dh]
        auto r = reshape(x, Shape{G, S, heads, dh});
        auto t = transpose(r, 1, 2);
        return reshape(t, Shape{G * heads, S, dh});
    };
    auto q = split_heads(affine(q_in, p.wq, p.bq), Sq);
    auto k = split_heads(affine(kv_in, p.wk, p.bk), Skv);
    auto v = split_heads(affine(kv_in, p.wv, p.bv), Skv);

    auto scores = scale(matmul(q, transpose(k, 1, 2)),
                        1.0 / std::sqrt(static_cast<double>(dh)));
    auto weights = softmax_lastdim(scores);
    auto ctx = matmul(weights, v);  // [G*heads, Sq, dh]
    auto merged = reshape(transpose(reshape(ctx, Shape{G, heads, Sq, dh}), 1, 2),
                          Shape{G, Sq, D});
    return affine(merged, p.wo, p.bo);
}

// ---------------------------------------------------------------------------
// embeddings
// ---------------------------------------------------------------------------

ValuePtr en_var_emb(const ModelParams& p, const ModelConfig& cfg, const ValuePtr& x) {
    const int64_t B = x->shape[0], N = cfg.turbines, H = cfg.lookback;
    expect_shape(x, Shape{B, H, N, 1}, "en_var_emb input");
    // one token per turbine from its whole lookback series
    auto series = reshape(transpose(x, 1, 2), Shape{B, N, 1, H});
    auto tok = residual_mlp(mlp_params(p, "embed.en", H != cfg.model_dim), series,
                            cfg.activation);
    expect_shape(tok, Shape{B, N, 1, cfg.model_dim}, "V_en");
    return tok;
}

ValuePtr sex_var_emb(const ModelParams& p, const ModelConfig& cfg, const ValuePtr& zs) {
    const int64_t B = zs->shape[0], N = cfg.turbines, H = cfg.lookback, C = cfg.exo_vars;
    expect_shape(zs, Shape{B, H, N, C}, "sex_var_emb input");
    // [B,H,N,C] -> [B,N,C,H]: one shared map embeds every variable's series
    auto series = transpose(transpose(zs, 1, 2), 2, 3);
    auto tok = residual_mlp(mlp_params(p, "embed.sex", H != cfg.model_dim), series,
                            cfg.activation);
    expect_shape(tok, Shape{B, N, C, cfg.model_dim}, "V_sex");
    return tok;
}

ValuePtr build_dynamic_features(const ModelParams& p, const ModelConfig& cfg,
                                const WindowBatch& batch) {
    const int64_t B = batch.batch, Hp = cfg.h_prime(), Ce = cfg.embed_dim;
    if (batch.h_prime != Hp)
        throw ShapeError("batch h_prime " + std::to_string(batch.h_prime) +
                         " does not match config h_prime " + std::to_string(Hp));
    Shape idx_shape{B, Hp};
    auto ft = embedding_lookup(p.at("tables.diurnal"), batch.slot_indices(), idx_shape,
                               "diurnal");
    auto fm = embedding_lookup(p.at("tables.monthly"), batch.month_indices(), idx_shape,
                               "monthly");
    auto fy = embedding_lookup(p.at("tables.yearly"), batch.doy_indices(), idx_shape,
                               "yearly");
    auto zd = concat({ft, fm, fy}, 2);  // [B, H', 3*C_e]
    expect_shape(zd, Shape{B, Hp, 3 * Ce}, "Z_d pre-broadcast");
    // one farm clock: identical across turbines
    auto across = repeat_axis(reshape(zd, Shape{B, Hp, 1, 3 * Ce}), 2, cfg.turbines);
    expect_shape(across, Shape{B, Hp, cfg.turbines, 3 * Ce}, "Z_d");
    return across;
}

ValuePtr dex_var_emb(const ModelParams& p, const ModelConfig& cfg, const ValuePtr& zd) {
    const int64_t B = zd->shape[0], N = cfg.turbines, Hp = cfg.h_prime();
    const int64_t Cd = cfg.dyn_channels();
    expect_shape(zd, Shape{B, Hp, N, Cd}, "dex_var_emb input");
    auto series = transpose(transpose(zd, 1, 2), 2, 3);  // [B,N,Cd,H']
    // under no_dev the static encoder serves both variable families
    const char* prefix = cfg.no_dev ? "embed.sex" : "embed.dex";
    auto tok = residual_mlp(mlp_params(p, prefix, Hp != cfg.model_dim), series,
                            cfg.activation);
    expect_shape(tok, Shape{B, N, Cd, cfg.model_dim}, "V_dex");
    return tok;
}

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

ValuePtr ext_block_forward(const ModelParams& p, const ModelConfig& cfg,
                           const ValuePtr& hex_in, int64_t layer) {
    const int64_t B = hex_in->shape[0], N = cfg.turbines, S = cfg.exo_tokens(),
                  D = cfg.model_dim;
    expect_shape(hex_in, Shape{B, N, S, D}, "H_ex input");
    const std::string lp = "layer" + std::to_string(layer) + ".ext";
    auto h = hex_in;

    if (cfg.ext_var_attn()) {
        // attention across the variable-token axis, independently per turbine
        auto flat = reshape(h, Shape{B * N, S, D});
        auto att = multi_head_attention(attn_params(p, lp + ".var_attn"), flat, flat,
                                        cfg.heads);
        auto mixed = reshape(att, Shape{B, N, S, D});
        h = post_norm(h, mixed, ln_params(p, lp + ".var_ln"), cfg.ln_eps);
        expect_shape(h, Shape{B, N, S, D}, "H_v_ex");
    }

    if (cfg.ext_spatial_attn()) {
        // transpose the leading two data axes so attention runs across turbines
        auto ht = transpose(h, 1, 2);  // [B, S, N, D]
        expect_shape(ht, Shape{B, S, N, D}, "H_v_ex transposed");
        auto flat = reshape(ht, Shape{B * S, N, D});
        auto att = multi_head_attention(attn_params(p, lp + ".sp_attn"), flat, flat,
                                        cfg.heads);
        auto mixed = reshape(att, Shape{B, S, N, D});
        auto normed = post_norm(ht, mixed, ln_params(p, lp + ".sp_ln"), cfg.ln_eps);
        h = transpose(normed, 1, 2);
        expect_shape(h, Shape{B, N, S, D}, "H_s_ex");
    }

    auto ff = feed_forward(mlp_params(p, lp + ".ffn", false), h, cfg.activation);
    h = post_norm(h, ff, ln_params(p, lp + ".ffn_ln"), cfg.ln_eps);
    expect_shape(h, Shape{B, N, S, D}, "H_ex output");
    return h;
}

ValuePtr ent_block_forward(const ModelParams& p, const ModelConfig& cfg,
                           const ValuePtr& hen_in, const ValuePtr& hex_layer,
                           int64_t layer) {
    const int64_t B = hen_in->shape[0], N = cfg.turbines, S = cfg.exo_tokens(),
                  D = cfg.model_dim;
    expect_shape(hen_in, Shape{B, N, 1, D}, "H_en input");
    expect_shape(hex_layer, Shape{B, N, S, D}, "H_ex for fusion");
    const std::string lp = "layer" + std::to_string(layer) + ".ent";

    // spatial attention over turbines
    auto ht = transpose(hen_in, 1, 2);  // [B, 1, N, D]
    expect_shape(ht, Shape{B, 1, N, D}, "H_en transposed");
    auto flat = reshape(ht, Shape{B, N, D});
    auto att = multi_head_attention(attn_params(p, lp + ".sp_attn"), flat, flat, cfg.heads);
    auto normed = post_norm(ht, reshape(att, Shape{B, 1, N, D}),
                            ln_params(p, lp + ".sp_ln"), cfg.ln_eps);
    auto hs = transpose(normed, 1, 2);  // [B, N, 1, D]
    expect_shape(hs, Shape{B, N, 1, D}, "H_s_en");

    ValuePtr fused;
    if (cfg.rep_by_attn) {
        // query: the endogenous token; keys/values: that turbine's exo tokens
        auto q = reshape(hs, Shape{B * N, 1, D});
        auto kv = reshape(hex_layer, Shape{B * N, S, D});
        auto ca = multi_head_attention(attn_params(p, lp + ".cross_attn"), q, kv,
                                       cfg.heads);
        fused = add(hs, reshape(ca, Shape{B, N, 1, D}));
    } else {
        // flatten both streams per turbine and fuse through the residual MLP
        auto en_flat = reshape(hs, Shape{B, N, D});
        auto ex_flat = reshape(hex_layer, Shape{B, N, S * D});
        auto cat = concat({en_flat, ex_flat}, 2);  // [B, N, (1+S)*D]
        auto out = residual_mlp(mlp_params(p, lp + ".fusion", true), cat, cfg.activation);
        fused = reshape(out, Shape{B, N, 1, D});
    }
    expect_shape(fused, Shape{B, N, 1, D}, "H_v_en");

    auto ff = feed_forward(mlp_params(p, lp + ".ffn", false), fused, cfg.activation);
    auto out = post_norm(fused, ff, ln_params(p, lp + ".ffn_ln"), cfg.ln_eps);
    expect_shape(out, Shape{B, N, 1, D}, "H_en output");
    return out;
}

// ---------------------------------------------------------------------------
// full network
// ---------------------------------------------------------------------------

ValuePtr model_forward(const ModelParams& p, const ModelConfig& cfg,
                       const WindowBatch& batch, const NormStats& stats) {
    cfg.validate();
    const int64_t B = batch.batch, N = cfg.turbines, D = cfg.model_dim;
    if (batch.turbines != N || batch.lookback != cfg.lookback ||
        batch.exo_vars != cfg.exo_vars)
        throw ShapeError("batch geometry (N=" + std::to_string(batch.turbines) +
                         ", H=" + std::to_string(batch.lookback) +
                         ", C=" + std::to_string(batch.exo_vars) +
                         ") does not match the model config");

    auto v_en = en_var_emb(p, cfg, batch.X);
    auto v_sex = sex_var_emb(p, cfg, batch.Zs);

    ValuePtr hex;
    if (cfg.no_edv) {
        hex = v_sex;  // exo stream carries only the static variables
    } else {
        auto zd = build_dynamic_features(p, cfg, batch);
        auto v_dex = dex_var_emb(p, cfg, zd);
        hex = concat({v_dex, v_sex}, 2);  // dynamic tokens first
    }
    expect_shape(hex, Shape{B, N, cfg.exo_tokens(), D}, "H_ex^0");

    auto hen = v_en;
    for (int64_t l = 0; l < cfg.layers; ++l) {
        hex = ext_block_forward(p, cfg, hex, l);
        hen = ent_block_forward(p, cfg, hen, hex, l);  // same-layer pairing
    }

    // head: per-turbine map of the endogenous token to P steps
    auto tokens = reshape(hen, Shape{B, N, D});
    auto head = mlp_params(p, "head", false);
    auto hidden = activate(add(matmul(tokens, head.w1), head.b1), cfg.activation);
    auto steps = add(matmul(hidden, head.w2), head.b2);  // [B, N, P]
    auto y_std = reshape(transpose(steps, 1, 2), Shape{B, cfg.horizon, N, 1});

    // de-normalize so the loss and metrics live in kW
    auto y_kw = add_scalar(scale(y_std, stats.power_std), stats.power_mean);
    expect_shape(y_kw, Shape{B, cfg.horizon, N, 1}, "Y_hat");
    return y_kw;
}

}  // namespace windformer
