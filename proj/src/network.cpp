#include "certsmooth/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "certsmooth/rng.hpp"

namespace certsmooth {

// --- layers and architecture strings --------------------------------------

LayerSpec LayerSpec::conv(std::size_t channels, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad)
{
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.out_channels = channels;
    l.kernel_h = kh;
    l.kernel_w = kw;
    l.stride = stride;
    l.padding = pad;
    return l;
}

LayerSpec LayerSpec::dense(std::size_t features)
{
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.out_features = features;
    return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::flatten()
{
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    return l;
}

namespace {

std::vector<LayerSpec> cnn3_layers(std::size_t width, std::size_t classes)
{
    return {LayerSpec::conv(width, 5, 5, 2, 2), LayerSpec::relu(), LayerSpec::conv(width, 4, 4, 2, 1),
            LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(classes)};
}

std::vector<std::string> split(std::string_view s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::size_t parse_count(const std::string& s, std::string_view what)
{
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (s.empty() || pos != s.size() || s[0] == '-')
        throw ArchitectureError("architecture: bad " + std::string(what) + " '" + s + "'");
    return static_cast<std::size_t>(v);
}

LayerSpec parse_layer(const std::string& tok)
{
    auto parts = split(tok, ':');
    if (parts[0] == "relu" && parts.size() == 1)
        return LayerSpec::relu();
    if (parts[0] == "flatten" && parts.size() == 1)
        return LayerSpec::flatten();
    if (parts[0] == "dense" && parts.size() == 2)
        return LayerSpec::dense(parse_count(parts[1], "dense width"));
    if (parts[0] == "conv" && parts.size() == 5) {
        auto k = split(parts[2], 'x');
        if (k.size() != 2)
            throw ArchitectureError("architecture: conv kernel must be HxW in '" + tok + "'");
        return LayerSpec::conv(parse_count(parts[1], "conv channels"), parse_count(k[0], "kernel height"),
                               parse_count(k[1], "kernel width"), parse_count(parts[3], "stride"),
                               parse_count(parts[4], "padding"));
    }
    throw ArchitectureError("architecture: unknown layer '" + tok + "'");
}

std::string layer_token(const LayerSpec& l)
{
    switch (l.kind) {
    case LayerKind::Conv:
        return "conv:" + std::to_string(l.out_channels) + ":" + std::to_string(l.kernel_h) + "x" +
               std::to_string(l.kernel_w) + ":" + std::to_string(l.stride) + ":" + std::to_string(l.padding);
    case LayerKind::Dense:
        return "dense:" + std::to_string(l.out_features);
    case LayerKind::Relu:
        return "relu";
    case LayerKind::Flatten:
        return "flatten";
    }
    return {};
}

}  // namespace

ArchitectureSpec ArchitectureSpec::cnn3_tiny(FeatureShape input, std::size_t classes)
{
    return {"cnn3-tiny", input, cnn3_layers(2, classes), classes};
}

ArchitectureSpec ArchitectureSpec::cnn3(FeatureShape input, std::size_t classes)
{
    return {"cnn3", input, cnn3_layers(8, classes), classes};
}

ArchitectureSpec ArchitectureSpec::mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes)
{
    ArchitectureSpec s;
    s.input = {1, 1, inputs};
    for (auto h : hidden) {
        s.layers.push_back(LayerSpec::dense(h));
        s.layers.push_back(LayerSpec::relu());
    }
    s.layers.push_back(LayerSpec::dense(classes));
    s.classes = classes;
    return s;
}

ArchitectureSpec ArchitectureSpec::parse(std::string_view text)
{
    std::istringstream is{std::string(text)};
    std::vector<std::string> toks{std::istream_iterator<std::string>(is), std::istream_iterator<std::string>()};
    if (toks.empty())
        throw ArchitectureError("architecture: empty string");

    ArchitectureSpec s;
    s.name = toks[0];
    bool have_in = false, have_classes = false, have_layers = false;
    for (std::size_t i = 1; i < toks.size(); ++i) {
        auto eq = toks[i].find('=');
        if (eq == std::string::npos)
            throw ArchitectureError("architecture: expected key=value, got '" + toks[i] + "'");
        auto key = toks[i].substr(0, eq);
        auto val = toks[i].substr(eq + 1);
        if (key == "in") {
            auto d = split(val, 'x');
            if (d.size() == 1)
                s.input = {1, 1, parse_count(d[0], "input size")};
            else if (d.size() == 3)
                s.input = {parse_count(d[0], "channels"), parse_count(d[1], "height"), parse_count(d[2], "width")};
            else
                throw ArchitectureError("architecture: input must be N or CxHxW, got '" + val + "'");
            have_in = true;
        } else if (key == "classes") {
            s.classes = parse_count(val, "class count");
            have_classes = true;
        } else if (key == "layers") {
            for (const auto& t : split(val, ','))
                s.layers.push_back(parse_layer(t));
            have_layers = true;
        } else {
            throw ArchitectureError("architecture: unknown key '" + key + "'");
        }
    }
    if (!have_in || !have_classes)
        throw ArchitectureError("architecture: 'in=' and 'classes=' are required");
    if (!have_layers) {
        if (s.name == "cnn3-tiny")
            s.layers = cnn3_layers(2, s.classes);
        else if (s.name == "cnn3")
            s.layers = cnn3_layers(8, s.classes);
        else
            throw ArchitectureError("architecture: '" + s.name + "' is not a preset; give layers=...");
    }
    s.validate();
    return s;
}

std::string ArchitectureSpec::canonical() const
{
    std::ostringstream os;
    os << name << " in=";
    if (input.channels == 1 && input.height == 1)
        os << input.width;
    else
        os << input.channels << 'x' << input.height << 'x' << input.width;
    os << " classes=" << classes;
    const bool preset = (name == "cnn3-tiny" && layers == cnn3_layers(2, classes)) ||
                        (name == "cnn3" && layers == cnn3_layers(8, classes));
    if (!preset) {
        os << " layers=";
        for (std::size_t i = 0; i < layers.size(); ++i)
            os << (i ? "," : "") << layer_token(layers[i]);
    }
    return os.str();
}

std::vector<FeatureShape> ArchitectureSpec::layer_shapes() const
{
    if (input.size() == 0)
        throw ArchitectureError("architecture: empty input shape");
    if (classes == 0)
        throw ArchitectureError("architecture: class count must be positive");
    if (layers.empty())
        throw ArchitectureError("architecture: no layers");
    std::vector<FeatureShape> shapes;
    FeatureShape cur = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        switch (l.kind) {
        case LayerKind::Conv: {
            if (l.out_channels == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0)
                throw ArchitectureError("architecture: layer " + std::to_string(i) + " has a zero conv parameter");
            if (cur.height + 2 * l.padding < l.kernel_h || cur.width + 2 * l.padding < l.kernel_w)
                throw ArchitectureError("architecture: conv layer " + std::to_string(i) + " kernel exceeds its " +
                                        std::to_string(cur.height) + "x" + std::to_string(cur.width) + " input");
            cur = {l.out_channels, (cur.height + 2 * l.padding - l.kernel_h) / l.stride + 1,
                   (cur.width + 2 * l.padding - l.kernel_w) / l.stride + 1};
            break;
        }
        case LayerKind::Dense:
            if (l.out_features == 0)
                throw ArchitectureError("architecture: dense layer " + std::to_string(i) + " has zero width");
            cur = {1, 1, l.out_features};
            break;
        case LayerKind::Relu:
            break;
        case LayerKind::Flatten:
            cur = {1, 1, cur.size()};
            break;
        }
        shapes.push_back(cur);
    }
    auto last = std::find_if(layers.rbegin(), layers.rend(),
                             [](const LayerSpec& l) { return l.kind != LayerKind::Flatten; });
    if (last == layers.rend() || !last->is_affine())
        throw ArchitectureError("architecture: the last layer must be conv or dense");
    if (cur.size() != classes)
        throw ArchitectureError("architecture: network produces " + std::to_string(cur.size()) +
                                " outputs but classes=" + std::to_string(classes));
    return shapes;
}

// --- parameters -----------------------------------------------------------

namespace {

struct AffineCounts {
    std::size_t weights = 0;
    std::size_t biases = 0;
};

AffineCounts affine_counts(const LayerSpec& l, const FeatureShape& in)
{
    if (l.kind == LayerKind::Conv)
        return {l.out_channels * in.channels * l.kernel_h * l.kernel_w, l.out_channels};
    return {l.out_features * in.size(), l.out_features};
}

}  // namespace

ParamVector::ParamVector(const ArchitectureSpec& spec)
{
    auto shapes = spec.layer_shapes();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (!spec.layers[i].is_affine())
            continue;
        const FeatureShape in = i == 0 ? spec.input : shapes[i - 1];
        auto c = affine_counts(spec.layers[i], in);
        table_.push_back({i, false, offset, c.weights});
        offset += c.weights;
        table_.push_back({i, true, offset, c.biases});
        offset += c.biases;
    }
    values.assign(offset, Real{0});
}

std::vector<std::vector<Real>> ParamVector::unflatten() const
{
    std::vector<std::vector<Real>> parts;
    for (const auto& s : table_) {
        auto sl = slice(s);
        parts.emplace_back(sl.begin(), sl.end());
    }
    return parts;
}

ParamVector ParamVector::flatten(const ArchitectureSpec& spec, const std::vector<std::vector<Real>>& parts)
{
    ParamVector p(spec);
    if (parts.size() != p.table_.size())
        throw DimensionError("flatten: expected " + std::to_string(p.table_.size()) + " parameter blocks, got " +
                             std::to_string(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& s = p.table_[i];
        if (parts[i].size() != s.count)
            throw DimensionError("flatten: block " + std::to_string(i) + " needs " + std::to_string(s.count) +
                                 " values, got " + std::to_string(parts[i].size()));
        std::copy(parts[i].begin(), parts[i].end(), p.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    return p;
}

std::size_t param_count(const ArchitectureSpec& spec) { return ParamVector(spec).size(); }

// --- lowering -------------------------------------------------------------

std::shared_ptr<const Lowering> lower(const ArchitectureSpec& spec)
{
    auto shapes = spec.layer_shapes();
    ParamVector pv(spec);
    auto low = std::make_shared<Lowering>();
    low->input_dim = spec.input.size();
    low->output_dim = spec.classes;

    std::size_t slice = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const FeatureShape in = i == 0 ? spec.input : shapes[i - 1];
        const FeatureShape out = shapes[i];
        if (l.kind == LayerKind::Relu) {
            low->steps.push_back({StepKind::Relu, 0, out.size()});
            continue;
        }
        if (!l.is_affine())
            continue;

        const std::size_t w_off = pv.table()[slice].offset;
        const std::size_t b_off = pv.table()[slice + 1].offset;
        slice += 2;

        AffineLowering a;
        a.layer = i;
        auto pat = std::make_shared<SparsePattern>();
        pat->rows = out.size();
        pat->cols = in.size();
        pat->row_ptr.reserve(out.size() + 1);
        pat->row_ptr.push_back(0);
        if (l.kind == LayerKind::Dense) {
            for (std::size_t o = 0; o < out.size(); ++o) {
                for (std::size_t j = 0; j < in.size(); ++j) {
                    pat->col_idx.push_back(j);
                    a.weight_index.push_back(w_off + o * in.size() + j);
                }
                pat->row_ptr.push_back(pat->col_idx.size());
                a.bias_index.push_back(b_off + o);
            }
        } else {
            const auto H = static_cast<long>(in.height), W = static_cast<long>(in.width);
            for (std::size_t o = 0; o < out.channels; ++o)
                for (std::size_t oy = 0; oy < out.height; ++oy)
                    for (std::size_t ox = 0; ox < out.width; ++ox) {
                        for (std::size_t c = 0; c < in.channels; ++c)
                            for (std::size_t ky = 0; ky < l.kernel_h; ++ky) {
                                const long iy = static_cast<long>(oy * l.stride + ky) - static_cast<long>(l.padding);
                                if (iy < 0 || iy >= H)
                                    continue;
                                for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                                    const long ix =
                                        static_cast<long>(ox * l.stride + kx) - static_cast<long>(l.padding);
                                    if (ix < 0 || ix >= W)
                                        continue;
                                    pat->col_idx.push_back((c * in.height + static_cast<std::size_t>(iy)) * in.width +
                                                           static_cast<std::size_t>(ix));
                                    a.weight_index.push_back(
                                        w_off + ((o * in.channels + c) * l.kernel_h + ky) * l.kernel_w + kx);
                                }
                            }
                        pat->row_ptr.push_back(pat->col_idx.size());
                        a.bias_index.push_back(b_off + o);
                    }
        }
        a.pattern = std::move(pat);
        low->steps.push_back({StepKind::Affine, low->affines.size(), out.size()});
        low->affines.push_back(std::move(a));
    }
    return low;
}

AffineMap AffineMap::make(PatternPtr pattern, Tensor weights, Tensor bias)
{
    if (weights.numel() != pattern->nnz() || bias.numel() != pattern->rows)
        throw DimensionError("affine map: values " + shape_string(weights.shape()) + " / bias " +
                             shape_string(bias.shape()) + " do not fit a " + std::to_string(pattern->rows) + "x" +
                             std::to_string(pattern->cols) + " pattern with " + std::to_string(pattern->nnz()) +
                             " non-zeros");
    AffineMap m;
    m.abs_weights = certsmooth::abs(weights);
    m.weights = std::move(weights);
    m.bias = std::move(bias);
    m.pattern = std::move(pattern);
    return m;
}

AffineMap AffineMap::from_dense(const Tensor& w, const Tensor& b)
{
    if (w.rank() != 2)
        throw DimensionError("affine map: weight must be a matrix, got " + shape_string(w.shape()));
    auto pat = std::make_shared<const SparsePattern>(SparsePattern::dense(w.shape()[0], w.shape()[1]));
    return make(std::move(pat), w.reshape({w.numel()}), b.reshape({b.numel()}));
}

Tensor AffineMap::apply(const Tensor& x) const { return add(sp_matmul(pattern, weights, x), bias); }

std::size_t LayerStack::output_dim() const
{
    std::size_t d = input_dim;
    for (const auto& s : steps)
        if (s.kind == StepKind::Affine)
            d = s.affine.out_dim();
    return d;
}

LayerStack LayerStack::with_affine(AffineMap map) const
{
    if (map.in_dim() != output_dim())
        throw DimensionError("with_affine: map expects " + std::to_string(map.in_dim()) + " inputs, stack produces " +
                             std::to_string(output_dim()));
    LayerStack s = *this;
    s.steps.push_back({StepKind::Affine, std::move(map)});
    return s;
}

LayerStack materialize(const Lowering& lowering, const Tensor& theta)
{
    LayerStack s;
    s.input_dim = lowering.input_dim;
    for (const auto& st : lowering.steps) {
        if (st.kind == StepKind::Relu) {
            s.steps.push_back({StepKind::Relu, {}});
            continue;
        }
        const auto& a = lowering.affines[st.affine];
        s.steps.push_back({StepKind::Affine, AffineMap::make(a.pattern, gather(theta, a.weight_index),
                                                             gather(theta, a.bias_index))});
    }
    return s;
}

Tensor forward(const LayerStack& stack, const Tensor& x)
{
    if (x.numel() != stack.input_dim)
        throw DimensionError("forward: network expects " + std::to_string(stack.input_dim) + " inputs, got " +
                             shape_string(x.shape()));
    Tensor v = x.rank() == 1 ? x : x.reshape({x.numel()});
    for (const auto& s : stack.steps)
        v = s.kind == StepKind::Affine ? s.affine.apply(v) : relu(v);
    return v;
}

std::size_t argmax(std::span<const Real> values)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best])
            best = i;
    return best;
}

Network::Network(ArchitectureSpec spec, ParamVector params)
    : spec_(std::move(spec)), params_(std::move(params)), lowering_(lower(spec_))
{
    const auto expected = param_count(spec_);
    if (params_.size() != expected)
        throw DimensionError("network '" + spec_.canonical() + "' needs " + std::to_string(expected) +
                             " parameters, got " + std::to_string(params_.size()));
}

Network::Network(ArchitectureSpec spec) : Network(spec, ParamVector(spec)) {}

void Network::set_params(std::span<const Real> theta)
{
    if (theta.size() != params_.size())
        throw DimensionError("set_params: expected " + std::to_string(params_.size()) + " values, got " +
                             std::to_string(theta.size()));
    std::copy(theta.begin(), theta.end(), params_.values.begin());
}

LayerStack Network::stack() const { return materialize(*lowering_, Tensor::vector(params_.values)); }

Tensor Network::forward(const Tensor& x) const { return certsmooth::forward(stack(), x); }

std::size_t Network::predict(const Tensor& x) const { return argmax(forward(x).data()); }

// --- initialization -------------------------------------------------------

InitScheme parse_init_scheme(std::string_view name)
{
    if (name == "kaiming-uniform")
        return InitScheme::KaimingUniform;
    if (name == "ibp-init")
        return InitScheme::IbpInit;
    throw std::invalid_argument("unknown init scheme '" + std::string(name) + "' (kaiming-uniform | ibp-init)");
}

std::string_view to_string(InitScheme scheme)
{
    return scheme == InitScheme::KaimingUniform ? "kaiming-uniform" : "ibp-init";
}

Fan layer_fan(const ArchitectureSpec& spec, std::size_t layer)
{
    auto shapes = spec.layer_shapes();
    const auto& l = spec.layers.at(layer);
    const FeatureShape in = layer == 0 ? spec.input : shapes[layer - 1];
    if (l.kind == LayerKind::Conv)
        return {in.channels * l.kernel_h * l.kernel_w, l.out_channels * l.kernel_h * l.kernel_w};
    if (l.kind == LayerKind::Dense)
        return {in.size(), l.out_features};
    throw std::invalid_argument("layer_fan: layer " + std::to_string(layer) + " has no parameters");
}

Real init_scale(const ArchitectureSpec& spec, std::size_t layer, InitScheme scheme)
{
    const Fan fan = layer_fan(spec, layer);
    const auto fin = static_cast<Real>(fan.in), fout = static_cast<Real>(fan.out);
    if (scheme == InitScheme::KaimingUniform)
        return std::sqrt(Real{6} / fin);
    std::size_t last_affine = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].is_affine())
            last_affine = i;
    if (layer == last_affine)
        return std::sqrt(Real{2} / (fin + fout));
    return std::sqrt(Real{2} * std::numbers::pi_v<Real>) / fin;
}

ParamVector init_params(const ArchitectureSpec& spec, InitScheme scheme, std::uint64_t seed)
{
    ParamVector p(spec);
    Rng rng = make_rng(seed, "init");
    for (const auto& s : p.table()) {
        auto values = p.slice(s);
        if (s.bias) {
            std::fill(values.begin(), values.end(), Real{0});
            continue;
        }
        const Real scale = init_scale(spec, s.layer, scheme);
        if (scheme == InitScheme::KaimingUniform) {
            std::uniform_real_distribution<double> dist(-scale, scale);
            for (auto& v : values)
                v = static_cast<Real>(dist(rng));
        } else {
            std::normal_distribution<double> dist(0.0, scale);
            for (auto& v : values)
                v = static_cast<Real>(dist(rng));
        }
    }
    return p;
}

// --- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Network& net, std::uint64_t seed)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw CheckpointError("cannot open checkpoint '" + path.string() + "' for writing");
    out << net.spec().canonical() << '\n' << "seed=" << seed << '\n';
    for (Real v : net.params().values) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                               static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
        out.write(bytes, 4);
    }
    if (!out)
        throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::string header, seed_line;
    if (!std::getline(in, header) || !std::getline(in, seed_line))
        throw CheckpointError("checkpoint '" + path.string() + "': missing header lines");
    if (seed_line.rfind("seed=", 0) != 0)
        throw CheckpointError("checkpoint '" + path.string() + "': expected 'seed=' line, got '" + seed_line + "'");
    std::uint64_t seed = 0;
    try {
        seed = std::stoull(seed_line.substr(5));
    } catch (const std::exception&) {
        throw CheckpointError("checkpoint '" + path.string() + "': bad seed '" + seed_line + "'");
    }
    ArchitectureSpec spec;
    try {
        spec = ArchitectureSpec::parse(header);
    } catch (const ArchitectureError& e) {
        throw CheckpointError("checkpoint '" + path.string() + "': " + e.what());
    }
    std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const std::size_t expected = param_count(spec);
    if (bytes.size() != 4 * expected)
        throw CheckpointError("checkpoint '" + path.string() + "': architecture needs " + std::to_string(expected) +
                              " parameters, file holds " + std::to_string(bytes.size() / 4) +
                              (bytes.size() % 4 ? " (+ trailing bytes)" : ""));
    ParamVector p(spec);
    for (std::size_t i = 0; i < expected; ++i) {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b)
            bits = (bits << 8) | static_cast<unsigned char>(bytes[4 * i + static_cast<std::size_t>(b)]);
        p.values[i] = static_cast<Real>(std::bit_cast<float>(bits));
    }
    return {Network(std::move(spec), std::move(p)), seed};
}

}  // namespace certsmooth
