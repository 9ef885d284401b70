#include "dhue/inn.hpp"

#include <cmath>
#include <fmt/format.h>

#include "dhue/archive.hpp"
#include "dhue/error.hpp"
#include "dhue/random.hpp"
#include "json.hpp"

namespace dhue {

using ad::Var;

Nonlinearity parse_nonlinearity(const std::string& id) {
    if (id == "leaky_relu") return Nonlinearity::leaky_relu;
    if (id == "tanh") return Nonlinearity::tanh;
    throw ConfigError("unknown nonlinearity '" + id + "'");
}

const char* to_string(Nonlinearity n) { return n == Nonlinearity::tanh ? "tanh" : "leaky_relu"; }

void HidingConfig::validate() const {
    if (channels != 1 && channels != 3) throw ConfigError("hiding model channels must be 1 or 3");
    if (blocks < 1) throw ConfigError("hiding model needs at least one coupling block");
    if (subnet.width < 1 || subnet.depth < 1) throw ConfigError("sub-network width and depth must be positive");
    if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
}

std::vector<Tensor*> HidingModelParams::tensors() {
    std::vector<Tensor*> out;
    for (auto& b : blocks)
        for (SubnetParams* s : {&b.phi, &b.rho, &b.eta})
            for (auto& l : s->layers) {
                out.push_back(&l.weight);
                out.push_back(&l.bias);
            }
    return out;
}

std::vector<const Tensor*> HidingModelParams::tensors() const {
    auto mut = const_cast<HidingModelParams*>(this)->tensors();
    return {mut.begin(), mut.end()};
}

std::size_t HidingModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* t : tensors()) n += t->size();
    return n;
}

namespace {

SubnetParams init_subnet(const HidingConfig& cfg, Rng& rng, const InitOptions& opts) {
    const int io = 4 * cfg.channels;
    SubnetParams net;
    int in = io;
    for (int layer = 0; layer < cfg.subnet.depth; ++layer) {
        const bool last = layer + 1 == cfg.subnet.depth;
        const int out = last ? io : cfg.subnet.width;
        ConvParams p{Tensor(Shape{out, in, 3, 3}), Tensor(Shape{1, out, 1, 1})};
        if (!(last && opts.zero_final_layer)) {
            std::normal_distribution<double> dist(0.0, opts.weight_scale * std::sqrt(2.0 / (in * 9.0)));
            for (auto& v : p.weight.vec()) v = dist(rng);
            if (last) {
                for (auto& v : p.bias.vec()) v = dist(rng);
            }
        }
        net.layers.push_back(std::move(p));
        in += out;
    }
    return net;
}

void check_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw NumericError(fmt::format("{} produced non-finite values", what));
}

}  // namespace

HidingModelParams init_params(const HidingConfig& config, std::uint64_t seed, InitOptions opts) {
    config.validate();
    HidingModelParams m;
    m.config = config;
    m.seed = seed;
    Rng rng(seed);
    for (int i = 0; i < config.blocks; ++i) {
        CouplingBlockParams b;
        b.phi = init_subnet(config, rng, opts);
        b.rho = init_subnet(config, rng, opts);
        b.eta = init_subnet(config, rng, opts);
        b.alpha = config.alpha;
        m.blocks.push_back(std::move(b));
    }
    return m;
}

Tensor sample_latent(const Shape& packed_shape, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor t(packed_shape);
    for (auto& v : t.vec()) v = dist(rng);
    return t;
}

SubbandStack sample_latent(int channels, int height, int width, std::uint64_t seed) {
    SubbandStack s(channels, height, width);
    s.packed() = sample_latent(s.packed().shape(), seed);
    return s;
}

// ---------------------------------------------------------------------------

BoundHidingModel::BoundHidingModel(const HidingModelParams& params, bool trainable) : config_(params.config) {
    auto bind = [&](const Tensor& t) {
        Var v = trainable ? ad::parameter(t) : ad::constant(t);
        flat_.push_back(v);
        return v;
    };
    auto bind_subnet = [&](const SubnetParams& s) {
        Subnet net;
        for (const auto& l : s.layers) {
            net.weights.push_back(bind(l.weight));
            net.biases.push_back(bind(l.bias));
        }
        return net;
    };
    for (const auto& b : params.blocks) {
        Block blk;
        blk.phi = bind_subnet(b.phi);
        blk.rho = bind_subnet(b.rho);
        blk.eta = bind_subnet(b.eta);
        blk.alpha = b.alpha;
        blocks_.push_back(std::move(blk));
    }
}

Var BoundHidingModel::run_subnet(const Subnet& net, const Var& x) const {
    std::vector<Var> feats{x};
    const std::size_t depth = net.weights.size();
    for (std::size_t i = 0; i < depth; ++i) {
        Var in = feats.size() == 1 ? feats[0] : ad::concat_channels(feats);
        Var y = ad::conv2d(in, net.weights[i], net.biases[i]);
        if (i + 1 == depth) return y;
        y = config_.subnet.nonlinearity == Nonlinearity::tanh ? ad::tanh(y) : ad::leaky_relu(y, 0.2);
        feats.push_back(std::move(y));
    }
    return feats.back();
}

Var BoundHidingModel::log_scale(const Block& b, const Var& zc) const {
    Var r = run_subnet(b.rho, zc);
    return ad::scale(ad::tanh(ad::scale(r, b.alpha / kLogScaleBound)), kLogScaleBound);
}

std::pair<Var, Var> BoundHidingModel::block_forward(std::size_t i, const Var& zc_prev, const Var& zh_prev) const {
    const Block& b = blocks_.at(i);
    Var zc = ad::add(zc_prev, run_subnet(b.phi, zh_prev));
    Var s = log_scale(b, zc);
    Var zh = ad::add(ad::mul(zh_prev, ad::exp(s)), run_subnet(b.eta, zc));
    return {zc, zh};
}

std::pair<Var, Var> BoundHidingModel::block_inverse(std::size_t i, const Var& zc, const Var& zh) const {
    const Block& b = blocks_.at(i);
    Var s = log_scale(b, zc);
    Var zh_prev = ad::mul(ad::sub(zh, run_subnet(b.eta, zc)), ad::exp(ad::scale(s, -1.0)));
    Var zc_prev = ad::sub(zc, run_subnet(b.phi, zh_prev));
    return {zc_prev, zh_prev};
}

BoundHidingModel::Hidden BoundHidingModel::forward_hide(const Var& x_c, const Var& x_h) const {
    if (!(x_c.shape() == x_h.shape())) {
        throw ShapeError("forward_hide: clean " + x_c.shape().str() + " vs hidden " + x_h.shape().str());
    }
    if (x_c.shape().c != config_.channels) throw ShapeError("forward_hide: channel count does not match model");
    Var zc0 = ad::dwt(x_c);
    Var zc = zc0;
    Var zh = ad::dwt(x_h);
    for (std::size_t i = 0; i < blocks_.size(); ++i) std::tie(zc, zh) = block_forward(i, zc, zh);
    Var x_ue = ad::add(x_c, ad::idwt(ad::sub(zc, zc0)));
    return {x_ue, zh};
}

BoundHidingModel::Revealed BoundHidingModel::reveal(const Var& x_ue, const Var& r) const {
    if (x_ue.shape().c != config_.channels) throw ShapeError("reveal: channel count does not match model");
    Var zc = ad::dwt(x_ue);
    if (!(r.shape() == zc.shape())) throw ShapeError("reveal: latent " + r.shape().str() + " vs " + zc.shape().str());
    Var zr = r;
    for (std::size_t i = blocks_.size(); i-- > 0;) std::tie(zc, zr) = block_inverse(i, zc, zr);
    return {ad::idwt(zc), ad::idwt(zr)};
}

// ---------------------------------------------------------------------------

namespace {

HidingModelParams single_block_model(const CouplingBlockParams& block, const HidingConfig& config) {
    HidingModelParams m;
    m.config = config;
    m.config.blocks = 1;
    m.blocks.push_back(block);
    return m;
}

void check_pair(const SubbandStack& a, const SubbandStack& b, int channels) {
    if (!a.same_layout(b)) throw ShapeError("coupling block inputs differ in layout");
    if (a.source_channels() != channels) throw ShapeError("sub-band stack channels do not match model");
}

}  // namespace

std::pair<SubbandStack, SubbandStack> block_forward(const SubbandStack& zc_prev, const SubbandStack& zh_prev,
                                                    const CouplingBlockParams& block, const HidingConfig& config) {
    check_pair(zc_prev, zh_prev, config.channels);
    BoundHidingModel m(single_block_model(block, config), false);
    auto [zc, zh] = m.block_forward(0, ad::constant(zc_prev.packed()), ad::constant(zh_prev.packed()));
    check_finite(zc.value(), "block_forward");
    check_finite(zh.value(), "block_forward");
    return {SubbandStack(zc.value()), SubbandStack(zh.value())};
}

std::pair<SubbandStack, SubbandStack> block_inverse(const SubbandStack& zc, const SubbandStack& zh,
                                                    const CouplingBlockParams& block, const HidingConfig& config) {
    check_pair(zc, zh, config.channels);
    BoundHidingModel m(single_block_model(block, config), false);
    auto [a, b] = m.block_inverse(0, ad::constant(zc.packed()), ad::constant(zh.packed()));
    check_finite(a.value(), "block_inverse");
    check_finite(b.value(), "block_inverse");
    return {SubbandStack(a.value()), SubbandStack(b.value())};
}

HideResult forward_hide(const ImageTensor& x_c, const ImageTensor& x_h, const HidingModelParams& model) {
    require_same_shape(x_c, x_h, "forward_hide");
    require_even(x_c);
    BoundHidingModel m(model, false);
    auto h = m.forward_hide(ad::constant(x_c.to_tensor()), ad::constant(x_h.to_tensor()));
    check_finite(h.x_ue_raw.value(), "forward_hide");
    check_finite(h.z_h_final.value(), "forward_hide");
    return {ImageTensor::from_tensor(h.x_ue_raw.value()), SubbandStack(h.z_h_final.value())};
}

RevealResult reveal(const ImageTensor& x_ue, const SubbandStack& r, const HidingModelParams& model) {
    require_even(x_ue);
    if (r.source_channels() != x_ue.channels() || r.source_height() != x_ue.height() ||
        r.source_width() != x_ue.width()) {
        throw ShapeError("reveal: latent does not match image " + x_ue.shape_str());
    }
    BoundHidingModel m(model, false);
    auto out = m.reveal(ad::constant(x_ue.to_tensor()), ad::constant(r.packed()));
    check_finite(out.x_c_rev.value(), "reveal");
    check_finite(out.x_h_rev.value(), "reveal");
    return {ImageTensor::from_tensor(out.x_c_rev.value()), ImageTensor::from_tensor(out.x_h_rev.value())};
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const HidingModelParams& model) {
    nlohmann::json alphas = nlohmann::json::array();
    for (const auto& b : model.blocks) alphas.push_back(b.alpha);
    nlohmann::json header{
        {"channels", model.config.channels},
        {"blocks", model.config.blocks},
        {"alpha", model.config.alpha},
        {"block_alphas", alphas},
        {"subnet", {{"width", model.config.subnet.width},
                    {"depth", model.config.subnet.depth},
                    {"nonlinearity", to_string(model.config.subnet.nonlinearity)}}},
        {"seed", model.seed},
    };
    TensorArchive a{"INN1", kInnCheckpointVersion, header.dump(), {}};
    for (const Tensor* t : model.tensors()) a.tensors.push_back(*t);
    write_archive(path, a);
}

HidingModelParams load_checkpoint(const std::filesystem::path& path) {
    TensorArchive a = read_archive(path, "INN1", kInnCheckpointVersion);
    HidingConfig cfg;
    std::vector<double> alphas;
    std::uint64_t seed = 0;
    try {
        auto h = nlohmann::json::parse(a.header);
        cfg.channels = h.at("channels").get<int>();
        cfg.blocks = h.at("blocks").get<int>();
        cfg.alpha = h.at("alpha").get<double>();
        cfg.subnet.width = h.at("subnet").at("width").get<int>();
        cfg.subnet.depth = h.at("subnet").at("depth").get<int>();
        cfg.subnet.nonlinearity = parse_nonlinearity(h.at("subnet").at("nonlinearity").get<std::string>());
        alphas = h.at("block_alphas").get<std::vector<double>>();
        seed = h.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("bad checkpoint header in {}: {}", path.string(), e.what()));
    }
    HidingModelParams m = init_params(cfg, seed);
    if (alphas.size() != m.blocks.size()) throw FormatError("checkpoint alpha count does not match block count");
    for (std::size_t i = 0; i < alphas.size(); ++i) m.blocks[i].alpha = alphas[i];
    auto slots = m.tensors();
    if (slots.size() != a.tensors.size()) throw FormatError("checkpoint tensor count does not match its config");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!(slots[i]->shape() == a.tensors[i].shape())) throw FormatError("checkpoint tensor shape mismatch");
        *slots[i] = std::move(a.tensors[i]);
    }
    return m;
}

}  // namespace dhue
