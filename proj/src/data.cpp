#include "certsmooth/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "certsmooth/rng.hpp"

namespace certsmooth {

Tensor Dataset::input(std::size_t i) const
{
    auto im = image(i);
    return Tensor({dim()}, std::vector<Real>(im.begin(), im.end()));
}

void Dataset::validate() const
{
    if (pixels.size() != labels.size() * dim())
        throw std::invalid_argument("dataset: " + std::to_string(pixels.size()) + " pixel values for " +
                                    std::to_string(labels.size()) + " samples of size " + std::to_string(dim()));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= classes)
            throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " of sample " +
                                        std::to_string(i) + " is not below " + std::to_string(classes));
    for (Real p : pixels)
        if (!(p >= 0 && p <= 1))
            throw std::invalid_argument("dataset: pixel value outside [0,1]");
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw FormatError("cannot open '" + p.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::filesystem::path& p)
{
    if (b.size() < off + 4)
        throw FormatError("'" + p.string() + "': truncated header at offset " + std::to_string(off));
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v)
{
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes)
{
    auto ib = read_file(images);
    auto lb = read_file(labels);

    const auto imagic = be32(ib, 0, images);
    if (imagic != 0x803)
        throw FormatError("'" + images.string() + "': bad magic at offset 0 (expected 0x00000803)");
    const std::size_t count = be32(ib, 4, images), rows = be32(ib, 8, images), cols = be32(ib, 12, images);
    const std::size_t need = 16 + count * rows * cols;
    if (ib.size() < need)
        throw FormatError("'" + images.string() + "': truncated pixel data at offset " + std::to_string(ib.size()) +
                          " (expected " + std::to_string(need) + " bytes)");

    if (be32(lb, 0, labels) != 0x801)
        throw FormatError("'" + labels.string() + "': bad magic at offset 0 (expected 0x00000801)");
    const std::size_t lcount = be32(lb, 4, labels);
    if (lcount != count)
        throw FormatError("'" + labels.string() + "': count at offset 4 is " + std::to_string(lcount) +
                          " but the image file holds " + std::to_string(count));
    if (lb.size() < 8 + count)
        throw FormatError("'" + labels.string() + "': truncated label data at offset " + std::to_string(lb.size()));

    Dataset ds;
    ds.shape = {1, rows, cols};
    ds.classes = classes;
    ds.pixels.resize(count * rows * cols);
    for (std::size_t i = 0; i < ds.pixels.size(); ++i)
        ds.pixels[i] = static_cast<Real>(ib[16 + i]) / Real{255};
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = lb[8 + i];
        if (ds.labels[i] >= classes)
            throw FormatError("'" + labels.string() + "': label " + std::to_string(ds.labels[i]) + " at offset " +
                              std::to_string(8 + i) + " is not below " + std::to_string(classes));
    }
    return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels)
{
    std::ofstream io(images, std::ios::binary | std::ios::trunc);
    std::ofstream lo(labels, std::ios::binary | std::ios::trunc);
    if (!io || !lo)
        throw FormatError("cannot write '" + images.string() + "' / '" + labels.string() + "'");
    put_be32(io, 0x803);
    put_be32(io, static_cast<std::uint32_t>(ds.size()));
    put_be32(io, static_cast<std::uint32_t>(ds.shape.channels * ds.shape.height));
    put_be32(io, static_cast<std::uint32_t>(ds.shape.width));
    for (Real p : ds.pixels)
        io.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp<Real>(p, 0, 1) * 255))));
    put_be32(lo, 0x801);
    put_be32(lo, static_cast<std::uint32_t>(ds.size()));
    for (auto l : ds.labels)
        lo.put(static_cast<char>(static_cast<unsigned char>(l)));
}

Dataset load_idx_dir(const std::filesystem::path& dir, bool train, std::size_t classes)
{
    const std::string prefix = train ? "train" : "t10k";
    return load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"), classes);
}

SyntheticKind parse_synthetic_kind(std::string_view name)
{
    if (name == "two-gaussians")
        return SyntheticKind::TwoGaussians;
    if (name == "ring")
        return SyntheticKind::Ring;
    throw std::invalid_argument("unknown synthetic dataset '" + std::string(name) + "' (two-gaussians | ring)");
}

Dataset synthetic(SyntheticKind kind, std::size_t n, std::size_t dim, std::uint64_t seed)
{
    if (n % 2 != 0)
        throw std::invalid_argument("synthetic: n must be even, got " + std::to_string(n));
    if (dim == 0 || (kind == SyntheticKind::Ring && dim < 2))
        throw std::invalid_argument("synthetic: dimension " + std::to_string(dim) + " too small");
    Rng rng = make_rng(seed, "synthetic");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);

    Dataset ds;
    ds.shape = {1, 1, dim};
    ds.classes = 2;
    ds.pixels.resize(n * dim);
    ds.labels.resize(n);
    std::vector<double> z(dim);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % 2;
        ds.labels[i] = label;
        if (kind == SyntheticKind::TwoGaussians) {
            const double m = (label ? 1.0 : -1.0) / std::sqrt(static_cast<double>(dim));
            for (auto& v : z)
                v = m + 0.3 * normal(rng);
        } else {
            const double r = label ? 1.5 : 0.5;
            const double phi = angle(rng);
            for (auto& v : z)
                v = 0.1 * normal(rng);
            z[0] += r * std::cos(phi);
            z[1] += r * std::sin(phi);
        }
        for (std::size_t k = 0; k < dim; ++k)
            ds.pixels[i * dim + k] = static_cast<Real>(std::clamp(0.5 + 0.25 * z[k], 0.0, 1.0));
    }
    return ds;
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed)
{
    if (n > ds.size())
        throw std::invalid_argument("subset: requested " + std::to_string(n) + " of " + std::to_string(ds.size()) +
                                    " samples");
    std::vector<std::vector<std::size_t>> by_class(ds.classes);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[ds.labels[i]].push_back(i);

    // largest-remainder allocation, ties to the lower class
    std::vector<std::size_t> take(ds.classes);
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < ds.classes; ++c) {
        const double exact = static_cast<double>(n) * static_cast<double>(by_class[c].size()) /
                             static_cast<double>(std::max<std::size_t>(ds.size(), 1));
        take[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += take[c];
        rem.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k)
        if (take[rem[k % rem.size()].second] < by_class[rem[k % rem.size()].second].size()) {
            ++take[rem[k % rem.size()].second];
            ++assigned;
        }

    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < ds.classes; ++c) {
        auto idx = by_class[c];
        Rng rng = make_rng(seed, "subset", c);
        std::shuffle(idx.begin(), idx.end(), rng);
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
    }
    std::sort(chosen.begin(), chosen.end());

    Dataset out;
    out.shape = ds.shape;
    out.classes = ds.classes;
    for (auto i : chosen) {
        auto im = ds.image(i);
        out.pixels.insert(out.pixels.end(), im.begin(), im.end());
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end)
{
    end = std::min(end, ds.size());
    begin = std::min(begin, end);
    Dataset out;
    out.shape = ds.shape;
    out.classes = ds.classes;
    out.pixels.assign(ds.pixels.begin() + static_cast<std::ptrdiff_t>(begin * ds.dim()),
                      ds.pixels.begin() + static_cast<std::ptrdiff_t>(end * ds.dim()));
    out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      ds.labels.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), seed_(seed)
{
    if (batch_size == 0)
        throw std::invalid_argument("batch size must be positive");
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::size_t index) const
{
    std::vector<std::size_t> perm(count_);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(seed_, "data", index);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < count_; b += batch_size_)
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                         perm.begin() + static_cast<std::ptrdiff_t>(std::min(count_, b + batch_size_)));
    return out;
}

}  // namespace certsmooth
