#include "windformer/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "windformer/errors.hpp"

namespace windformer {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_doubles(const std::vector<double>& vs) {
    std::string out;
    for (size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ",";
        out += fmt_double(vs[i]);
    }
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ',')) out.push_back(std::stod(cur));
    return out;
}

}  // namespace

void write_tensor_file(const std::string& prefix,
                       const std::vector<std::pair<std::string, std::string>>& meta,
                       const std::vector<NamedTensor>& tensors) {
    std::ofstream man(prefix + ".manifest");
    if (!man) throw DataError("cannot write " + prefix + ".manifest");
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw DataError("cannot write " + prefix + ".bin");

    man << "windformer.checkpoint\n";
    man << "version 1\n";
    man << "endian little\n";
    man << "dtype f64\n";
    for (const auto& [k, v] : meta) man << "meta " << k << " " << v << "\n";

    int64_t offset = 0;
    for (const auto& t : tensors) {
        man << "tensor " << t.name << " " << t.shape.rank();
        for (int64_t d : t.shape.dims) man << " " << d;
        man << " " << offset << "\n";
        const auto bytes = static_cast<std::streamsize>(t.data.size() * sizeof(double));
        bin.write(reinterpret_cast<const char*>(t.data.data()), bytes);
        offset += bytes;
    }
    if (!man || !bin) throw DataError("failed writing checkpoint " + prefix);
}

TensorFile read_tensor_file(const std::string& prefix) {
    std::ifstream man(prefix + ".manifest");
    if (!man) throw DataError("cannot open " + prefix + ".manifest");
    std::string line;
    if (!std::getline(man, line) || line != "windformer.checkpoint")
        throw DataError(prefix + ".manifest is not a checkpoint manifest");

    TensorFile tf;
    struct Entry {
        std::string name;
        Shape shape;
        int64_t offset;
    };
    std::vector<Entry> entries;
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string kind;
        is >> kind;
        if (kind == "version") {
            int v;
            is >> v;
            if (v != 1) throw DataError("unsupported checkpoint version in " + prefix);
        } else if (kind == "endian") {
            std::string e;
            is >> e;
            if (e != "little") throw DataError("unsupported endianness in " + prefix);
        } else if (kind == "dtype") {
            std::string d;
            is >> d;
            if (d != "f64") throw DataError("unsupported dtype in " + prefix);
        } else if (kind == "meta") {
            std::string key, value;
            is >> key;
            std::getline(is, value);
            if (!value.empty() && value[0] == ' ') value.erase(0, 1);
            tf.meta[key] = value;
        } else if (kind == "tensor") {
            Entry e;
            int64_t rank;
            is >> e.name >> rank;
            std::vector<int64_t> dims(static_cast<size_t>(rank));
            for (auto& d : dims) is >> d;
            is >> e.offset;
            if (!is) throw DataError("malformed tensor line in " + prefix + ".manifest");
            e.shape = Shape(dims);
            entries.push_back(std::move(e));
        } else {
            throw DataError("unknown manifest line '" + line + "' in " + prefix);
        }
    }

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw DataError("cannot open " + prefix + ".bin");
    for (const auto& e : entries) {
        NamedTensor t;
        t.name = e.name;
        t.shape = e.shape;
        t.data.resize(static_cast<size_t>(e.shape.numel()));
        bin.seekg(e.offset);
        bin.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!bin) throw DataError("truncated payload reading " + e.name + " from " + prefix);
        tf.tensors.push_back(std::move(t));
    }
    return tf;
}

namespace {

std::vector<std::pair<std::string, std::string>> config_meta(const ModelConfig& cfg,
                                                             const NormStats& stats) {
    std::vector<std::pair<std::string, std::string>> meta;
    meta.emplace_back("turbines", std::to_string(cfg.turbines));
    meta.emplace_back("exo_vars", std::to_string(cfg.exo_vars));
    meta.emplace_back("embed_dim", std::to_string(cfg.embed_dim));
    meta.emplace_back("model_dim", std::to_string(cfg.model_dim));
    meta.emplace_back("layers", std::to_string(cfg.layers));
    meta.emplace_back("lookback", std::to_string(cfg.lookback));
    meta.emplace_back("horizon", std::to_string(cfg.horizon));
    meta.emplace_back("heads", std::to_string(cfg.heads));
    meta.emplace_back("ffn_mult", std::to_string(cfg.ffn_mult));
    meta.emplace_back("slots_per_day", std::to_string(cfg.slots_per_day));
    meta.emplace_back("h_prime_cfg", std::to_string(cfg.h_prime_cfg));
    meta.emplace_back("activation",
                      cfg.activation == Activation::Relu ? "relu" : "gelu");
    meta.emplace_back("ln_eps", fmt_double(cfg.ln_eps));
    meta.emplace_back("variant", cfg.variant_name());
    meta.emplace_back("power_mean", fmt_double(stats.power_mean));
    meta.emplace_back("power_std", fmt_double(stats.power_std));
    meta.emplace_back("exo_mean", join_doubles(stats.exo_mean));
    meta.emplace_back("exo_std", join_doubles(stats.exo_std));
    std::string zv;
    for (size_t i = 0; i < stats.zero_variance.size(); ++i) {
        if (i) zv += ",";
        zv += stats.zero_variance[i] ? "1" : "0";
    }
    meta.emplace_back("zero_variance", zv);
    return meta;
}

}  // namespace

void save_checkpoint(const std::string& prefix, const ModelParams& params,
                     const ModelConfig& cfg, const NormStats& stats) {
    std::vector<NamedTensor> tensors;
    tensors.reserve(params.order.size());
    for (const auto& p : params.order)
        tensors.push_back(NamedTensor{p->name, p->shape, p->data});
    write_tensor_file(prefix, config_meta(cfg, stats), tensors);
}

LoadedCheckpoint load_checkpoint(const std::string& prefix) {
    TensorFile tf = read_tensor_file(prefix);
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = tf.meta.find(key);
        if (it == tf.meta.end())
            throw DataError("checkpoint " + prefix + " lacks meta key " + key);
        return it->second;
    };

    LoadedCheckpoint out;
    ModelConfig& cfg = out.config;
    cfg.turbines = std::stoll(need("turbines"));
    cfg.exo_vars = std::stoll(need("exo_vars"));
    cfg.embed_dim = std::stoll(need("embed_dim"));
    cfg.model_dim = std::stoll(need("model_dim"));
    cfg.layers = std::stoll(need("layers"));
    cfg.lookback = std::stoll(need("lookback"));
    cfg.horizon = std::stoll(need("horizon"));
    cfg.heads = std::stoll(need("heads"));
    cfg.ffn_mult = std::stoll(need("ffn_mult"));
    cfg.slots_per_day = std::stoll(need("slots_per_day"));
    cfg.h_prime_cfg = std::stoll(need("h_prime_cfg"));
    cfg.activation = need("activation") == "gelu" ? Activation::Gelu : Activation::Relu;
    cfg.ln_eps = std::stod(need("ln_eps"));
    const std::string variant = need("variant");
    cfg.rep_by_attn = variant == "rep_by_attn";
    cfg.no_dev = variant == "no_dev";
    cfg.no_edv = variant == "no_edv";
    cfg.no_esc = variant == "no_esc";
    cfg.no_esvc = variant == "no_esvc";
    cfg.no_evc = variant == "no_evc";
    cfg.validate();

    out.stats.power_mean = std::stod(need("power_mean"));
    out.stats.power_std = std::stod(need("power_std"));
    out.stats.exo_mean = split_doubles(need("exo_mean"));
    out.stats.exo_std = split_doubles(need("exo_std"));
    out.stats.zero_variance.clear();
    for (double v : split_doubles(need("zero_variance")))
        out.stats.zero_variance.push_back(v != 0.0 ? 1 : 0);

    // rebuild the parameter set from the config, then overwrite every buffer
    out.params = ModelParams::init(cfg, 0);
    size_t assigned = 0;
    for (const auto& t : tf.tensors) {
        auto it = out.params.by_name.find(t.name);
        if (it == out.params.by_name.end())
            throw DataError("checkpoint tensor " + t.name + " not part of this architecture");
        if (it->second->shape != t.shape)
            throw DataError("checkpoint tensor " + t.name + " has shape " + t.shape.str() +
                            ", expected " + it->second->shape.str());
        it->second->data = t.data;
        ++assigned;
    }
    if (assigned != out.params.order.size())
        throw DataError("checkpoint " + prefix + " misses " +
                        std::to_string(out.params.order.size() - assigned) + " tensors");
    return out;
}

}  // namespace windformer
