#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "windformer/data.hpp"
#include "windformer/ops.hpp"
#include "windformer/value.hpp"

namespace windformer {

// Architecture and ablation switches. At most one ablation flag may be set.
struct ModelConfig {
    int64_t turbines = 8;         // N
    int64_t exo_vars = 2;         // C
    int64_t embed_dim = 16;       // C_e, per-table width of the time embeddings
    int64_t model_dim = 64;       // D
    int64_t layers = 3;           // L
    int64_t lookback = 36;        // H
    int64_t horizon = 12;         // P
    int64_t heads = 4;
    int64_t ffn_mult = 4;
    int64_t slots_per_day = 144;  // diurnal table rows; 86400s / cadence
    int64_t h_prime_cfg = 0;      // 0 -> lookback; may extend to lookback+horizon
    Activation activation = Activation::Relu;
    double ln_eps = 1e-5;
    double dropout = 0.0;  // reserved hook; anything nonzero is rejected

    // ablation switches
    bool rep_by_attn = false;  // fusion by cross-attention instead of the MLP
    bool no_dev = false;       // dynamic exo shares the static exo encoder
    bool no_edv = false;       // no dynamic exo variables at all
    bool no_esc = false;       // no spatial attention in the exo block
    bool no_esvc = false;      // no attention at all in the exo block
    bool no_evc = false;       // no variable attention in the exo block

    int64_t h_prime() const { return h_prime_cfg > 0 ? h_prime_cfg : lookback; }
    int64_t dyn_channels() const { return no_edv ? 0 : 3 * embed_dim; }  // C_d
    int64_t exo_tokens() const { return exo_vars + dyn_channels(); }     // C + C_d
    bool ext_var_attn() const { return !(no_evc || no_esvc); }
    bool ext_spatial_attn() const { return !(no_esc || no_esvc); }

    std::string variant_name() const;
    void validate() const;
    static ModelConfig toy();  // small everything, for gradient checks
};

// Named learnable arrays in a stable creation order (the order doubles as the
// deterministic init order).
struct ModelParams {
    std::vector<ValuePtr> order;
    std::unordered_map<std::string, ValuePtr> by_name;

    void add(const ValuePtr& p);
    const ValuePtr& at(const std::string& name) const;
    bool has(const std::string& name) const { return by_name.count(name) > 0; }
    void zero_grads();
    int64_t total_elements() const;

    // affine weights ~ U(+-1/sqrt(fan_in)), biases zero, tables ~ N(0, 0.02)
    static ModelParams init(const ModelConfig& cfg, uint64_t seed);
};

struct AttnParams {
    ValuePtr wq, bq, wk, bk, wv, bv, wo, bo;
};
struct MlpParams {
    ValuePtr w1, b1, w2, b2;
    ValuePtr proj;  // null when the residual is the identity
};
struct LnParams {
    ValuePtr gamma, beta;
};

AttnParams attn_params(const ModelParams& p, const std::string& prefix);
MlpParams mlp_params(const ModelParams& p, const std::string& prefix, bool with_proj);
LnParams ln_params(const ModelParams& p, const std::string& prefix);

// Two affine maps around an activation plus a residual connection; the
// residual is projected when the widths differ. Maps the last axis.
ValuePtr residual_mlp(const MlpParams& p, const ValuePtr& x, Activation act);

// Position-wise two-layer map on the last axis, no residual inside; call
// sites wrap it as LN(x + feed_forward(x)).
ValuePtr feed_forward(const MlpParams& p, const ValuePtr& x, Activation act);

// Scaled dot-product attention over the second-to-last axis of q/kv shaped
// [G, S, D]; leading axes beyond rank 3 must be pre-flattened.
ValuePtr multi_head_attention(const AttnParams& p, const ValuePtr& q_in,
                              const ValuePtr& kv_in, int64_t heads);

// Embeddings. Channel independent: one token per variable per turbine.
ValuePtr en_var_emb(const ModelParams& p, const ModelConfig& cfg, const ValuePtr& x);
ValuePtr sex_var_emb(const ModelParams& p, const ModelConfig& cfg, const ValuePtr& zs);
// Table lookups concatenated to [B, H', N, C_d], identical across turbines.
ValuePtr build_dynamic_features(const ModelParams& p, const ModelConfig& cfg,
                                const WindowBatch& batch);
ValuePtr dex_var_emb(const ModelParams& p, const ModelConfig& cfg, const ValuePtr& zd);

// One exogenous-stream layer: variable attention, spatial attention, FFN,
// each with post-norm residual; ablation switches skip sublayers.
ValuePtr ext_block_forward(const ModelParams& p, const ModelConfig& cfg,
                           const ValuePtr& hex_in, int64_t layer);

// One endogenous-stream layer: spatial attention, exo fusion, FFN.
ValuePtr ent_block_forward(const ModelParams& p, const ModelConfig& cfg,
                           const ValuePtr& hen_in, const ValuePtr& hex_layer,
                           int64_t layer);

// Full network: embeddings -> L x (ext, ent) -> head; output in kW.
ValuePtr model_forward(const ModelParams& p, const ModelConfig& cfg,
                       const WindowBatch& batch, const NormStats& stats);

// Shape-ledger assertion; throws ShapeError naming the site.
void expect_shape(const ValuePtr& v, const Shape& want, const char* site);

}  // namespace windformer
