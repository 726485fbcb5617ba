#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "certsmooth/network.hpp"
#include "certsmooth/rng.hpp"

using namespace certsmooth;

namespace {

ParamVector random_params(const ArchitectureSpec& spec, std::uint64_t seed)
{
    ParamVector p(spec);
    Rng rng = make_rng(seed, "test-params");
    std::normal_distribution<double> normal(0.0, 0.5);
    for (auto& v : p.values)
        v = static_cast<Real>(normal(rng));
    return p;
}

std::vector<Real> random_image(std::size_t n, std::uint64_t seed)
{
    Rng rng = make_rng(seed, "test-image");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Real> x(n);
    for (auto& v : x)
        v = static_cast<Real>(unit(rng));
    return x;
}

// Direct nested-loop convolution, written independently of the lowering.
std::vector<Real> conv_reference(const std::vector<Real>& x, FeatureShape in, const LayerSpec& l,
                                 std::span<const Real> w, std::span<const Real> b)
{
    const std::size_t oh = (in.height + 2 * l.padding - l.kernel_h) / l.stride + 1;
    const std::size_t ow = (in.width + 2 * l.padding - l.kernel_w) / l.stride + 1;
    std::vector<Real> y(l.out_channels * oh * ow);
    for (std::size_t o = 0; o < l.out_channels; ++o)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                Real acc = b[o];
                for (std::size_t c = 0; c < in.channels; ++c)
                    for (std::size_t ky = 0; ky < l.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                            const long yy = static_cast<long>(i * l.stride + ky) - static_cast<long>(l.padding);
                            const long xx = static_cast<long>(j * l.stride + kx) - static_cast<long>(l.padding);
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(in.height) ||
                                xx >= static_cast<long>(in.width))
                                continue;
                            acc += w[((o * in.channels + c) * l.kernel_h + ky) * l.kernel_w + kx] *
                                   x[(c * in.height + static_cast<std::size_t>(yy)) * in.width +
                                     static_cast<std::size_t>(xx)];
                        }
                y[(o * oh + i) * ow + j] = acc;
            }
    return y;
}

// Straight-line evaluator over the architecture (no lowering).
std::vector<Real> reference_forward(const ArchitectureSpec& spec, const ParamVector& p, std::vector<Real> x)
{
    FeatureShape cur = spec.input;
    std::size_t slice = 0;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::Relu) {
            for (auto& v : x)
                v = std::max(v, Real{0});
        } else if (l.kind == LayerKind::Flatten) {
            cur = {1, 1, cur.size()};
        } else if (l.kind == LayerKind::Conv) {
            x = conv_reference(x, cur, l, p.slice(p.table()[slice]), p.slice(p.table()[slice + 1]));
            slice += 2;
            cur = {l.out_channels, (cur.height + 2 * l.padding - l.kernel_h) / l.stride + 1,
                   (cur.width + 2 * l.padding - l.kernel_w) / l.stride + 1};
        } else {
            auto w = p.slice(p.table()[slice]);
            auto b = p.slice(p.table()[slice + 1]);
            slice += 2;
            std::vector<Real> y(l.out_features);
            for (std::size_t o = 0; o < l.out_features; ++o) {
                Real acc = b[o];
                for (std::size_t i = 0; i < x.size(); ++i)
                    acc += w[o * x.size() + i] * x[i];
                y[o] = acc;
            }
            x = y;
            cur = {1, 1, l.out_features};
        }
    }
    return x;
}

}  // namespace

TEST_CASE("architecture strings round-trip")
{
    const auto tiny = ArchitectureSpec::parse("cnn3-tiny in=1x28x28 classes=10");
    CHECK(tiny.canonical() == "cnn3-tiny in=1x28x28 classes=10");
    CHECK(tiny.layers == ArchitectureSpec::cnn3_tiny().layers);
    const auto custom = ArchitectureSpec::parse("custom in=5 classes=3 layers=dense:8,relu,dense:3");
    CHECK(custom.canonical() == "custom in=5 classes=3 layers=dense:8,relu,dense:3");
    const auto conv = ArchitectureSpec::parse("net in=2x6x6 classes=2 layers=conv:3:3x3:1:1,relu,flatten,dense:2");
    CHECK(ArchitectureSpec::parse(conv.canonical()).canonical() == conv.canonical());

    CHECK_THROWS_AS(ArchitectureSpec::parse("custom in=5 classes=3 layers=dense:8,relu,dense:4"), ArchitectureError);
    CHECK_THROWS_AS(ArchitectureSpec::parse("custom in=5 classes=3 layers=dense:3,relu"), ArchitectureError);
    CHECK_THROWS_AS(ArchitectureSpec::parse("mystery in=5 classes=3"), ArchitectureError);
    CHECK_THROWS_AS(ArchitectureSpec::parse("custom in=2x2 classes=3 layers=dense:3"), ArchitectureError);
    CHECK_THROWS_AS(ArchitectureSpec::parse("net in=1x3x3 classes=2 layers=conv:1:5x5:1:0,flatten,dense:2"),
                    ArchitectureError);
}

TEST_CASE("cnn3-tiny has about 1.1k parameters")
{
    CHECK(param_count(ArchitectureSpec::cnn3_tiny()) == 1108);
    const auto shapes = ArchitectureSpec::cnn3_tiny().layer_shapes();
    CHECK(shapes[0] == FeatureShape{2, 14, 14});
    CHECK(shapes[2] == FeatureShape{2, 7, 7});
}

TEST_CASE("parameter vector flatten and unflatten round-trip")
{
    const auto spec = ArchitectureSpec::cnn3_tiny();
    const auto p = random_params(spec, 3);
    const auto q = ParamVector::flatten(spec, p.unflatten());
    CHECK(q.values == p.values);
    CHECK(p.table().size() == 6);
    CHECK(p.table()[0].count == 2 * 1 * 5 * 5);
    CHECK(p.table()[1].count == 2);
}

TEST_CASE("forward examples")
{
    const auto spec = ArchitectureSpec::parse("custom in=2 classes=1 layers=dense:1");
    Network net(spec, ParamVector::flatten(spec, {{1, -1}, {0}}));
    CHECK(net.forward(Tensor::vector({3, 5})).item() == doctest::Approx(-2));

    Network zero(ArchitectureSpec::cnn3_tiny());
    const Tensor y = zero.forward(Tensor::full({784}, 0.5));
    CHECK(y.numel() == 10);
    for (Real v : y.data())
        CHECK(v == 0);

    const auto conv = ArchitectureSpec::parse("c in=1x3x3 classes=9 layers=conv:1:1x1:1:0,flatten");
    Network cn(conv, ParamVector::flatten(conv, {{2}, {0}}));
    const Tensor feature_map = cn.forward(Tensor::full({9}, 1));
    for (Real v : feature_map.data())
        CHECK(v == 2);

    CHECK_THROWS_AS(net.forward(Tensor::vector({1, 2, 3})), DimensionError);
}

TEST_CASE("predict breaks ties toward the lowest index")
{
    CHECK(argmax(std::vector<Real>{0.1, 0.9}) == 1);
    CHECK(argmax(std::vector<Real>{0.5, 0.5}) == 0);
    CHECK(argmax(std::vector<Real>{3, -1, 2}) == 0);
}

TEST_CASE("lowered forward equals the straight-line evaluator")
{
    for (const auto& spec : {ArchitectureSpec::cnn3_tiny(), ArchitectureSpec::cnn3(),
                             ArchitectureSpec::parse("n in=2x7x5 classes=3 layers=conv:3:3x2:2:1,relu,conv:2:2x2:1:0,"
                                                     "relu,flatten,dense:4,relu,dense:3")}) {
        for (std::uint64_t s = 0; s < 20; ++s) {
            const auto p = random_params(spec, s);
            const auto x = random_image(spec.input.size(), s);
            const auto ref = reference_forward(spec, p, x);
            const Tensor y = Network(spec, p).forward(Tensor::vector(x));
            REQUIRE(y.numel() == ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i)
                CHECK(std::abs(y[i] - ref[i]) <= 1e-12 * (1 + std::abs(ref[i])));
        }
    }
}

TEST_CASE("convolution lowered to an affine map equals the nested-loop convolution")
{
    const auto spec = ArchitectureSpec::parse("c in=2x9x8 classes=80 layers=conv:4:3x3:2:1");
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto p = random_params(spec, 100 + s);
        const auto x = random_image(spec.input.size(), 100 + s);
        const auto stack = Network(spec, p).stack();
        REQUIRE(stack.steps.size() == 1);
        const Tensor y = stack.steps[0].affine.apply(Tensor::vector(x));
        const auto ref = conv_reference(x, spec.input, spec.layers[0], p.slice(p.table()[0]), p.slice(p.table()[1]));
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(y[i] - ref[i]) <= 1e-12);
    }
}

TEST_CASE("initialization schemes")
{
    const auto spec = ArchitectureSpec::cnn3_tiny();
    CHECK(init_params(spec, InitScheme::IbpInit, 9).values == init_params(spec, InitScheme::IbpInit, 9).values);
    CHECK(init_params(spec, InitScheme::IbpInit, 9).values != init_params(spec, InitScheme::IbpInit, 10).values);

    const auto k = init_params(spec, InitScheme::KaimingUniform, 4);
    for (const auto& s : k.table()) {
        if (s.bias)
            continue;
        const Real limit = std::sqrt(Real{6} / static_cast<Real>(layer_fan(spec, s.layer).in));
        CHECK(init_scale(spec, s.layer, InitScheme::KaimingUniform) == doctest::Approx(limit));
        for (Real v : k.slice(s))
            CHECK(std::abs(v) <= limit);
    }

    // sample std per layer, pooled over enough seeds for >= 1e4 draws per layer
    const auto big = ArchitectureSpec::mlp(200, {100}, 10);
    const auto ibp = init_params(big, InitScheme::IbpInit, 1);
    for (const auto& s : ibp.table()) {
        auto v = ibp.slice(s);
        if (s.bias) {
            for (Real b : v)
                CHECK(b == 0);
            continue;
        }
        std::vector<Real> pool(v.begin(), v.end());
        for (std::uint64_t seed = 2; pool.size() < 10000; ++seed) {
            const auto extra = init_params(big, InitScheme::IbpInit, seed);
            auto e = extra.slice(s);
            pool.insert(pool.end(), e.begin(), e.end());
        }
        double ss = 0;
        for (Real w : pool)
            ss += static_cast<double>(w) * w;
        const double sd = std::sqrt(ss / static_cast<double>(pool.size()));
        const double target = init_scale(big, s.layer, InitScheme::IbpInit);
        CHECK(std::abs(sd - target) <= 0.1 * target);
    }
    // hidden layer: sqrt(2 pi) / fan_in; output layer: Xavier normal
    CHECK(init_scale(big, 0, InitScheme::IbpInit) == doctest::Approx(std::sqrt(2 * M_PI) / 200));
    CHECK(init_scale(big, 2, InitScheme::IbpInit) == doctest::Approx(std::sqrt(2.0 / 110)));
}

TEST_CASE("checkpoints round-trip and validate the parameter count")
{
    const auto dir = std::filesystem::temp_directory_path() / "certsmooth_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto spec = ArchitectureSpec::cnn3_tiny();
    Network net(spec, init_params(spec, InitScheme::KaimingUniform, 5));
    save_checkpoint(dir / "a.ckpt", net, 5);
    const auto ck = load_checkpoint(dir / "a.ckpt");
    CHECK(ck.seed == 5);
    CHECK(ck.network.spec().canonical() == spec.canonical());
    for (std::size_t i = 0; i < net.params().size(); ++i)
        CHECK(ck.network.params().values[i] == static_cast<Real>(static_cast<float>(net.params().values[i])));

    {
        std::ifstream in(dir / "a.ckpt", std::ios::binary);
        std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        content.resize(content.size() - 4);
        std::ofstream out(dir / "b.ckpt", std::ios::binary);
        out << content;
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "b.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
    std::filesystem::remove_all(dir);
}
