#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "certsmooth/network.hpp"
#include "certsmooth/tensor.hpp"

namespace certsmooth {

/// Images in [0,1] (count x channels x h x w, row-major) plus class labels.
struct Dataset {
    FeatureShape shape;
    std::size_t classes = 0;
    std::vector<Real> pixels;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return shape.size(); }
    std::span<const Real> image(std::size_t i) const { return {pixels.data() + i * dim(), dim()}; }
    Tensor input(std::size_t i) const;

    /// Throws std::invalid_argument if counts, labels or pixel ranges are off.
    void validate() const;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Big-endian IDX: images magic 0x803, count, rows, cols, bytes; labels magic
/// 0x801, count, bytes. Pixels are divided by 255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes = 10);
void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels);

/// `train-images-idx3-ubyte` / `t10k-images-idx3-ubyte` (and the label files) in dir.
Dataset load_idx_dir(const std::filesystem::path& dir, bool train, std::size_t classes = 10);

enum class SyntheticKind { TwoGaussians, Ring };
SyntheticKind parse_synthetic_kind(std::string_view name);

/// Balanced two-class data, label i % 2 for sample i. A latent point z is
/// mapped to pixels by clamp(0.5 + 0.25 z, 0, 1).
///   two-gaussians: z ~ N(+-1/sqrt(dim) * ones, 0.3^2 I)
///   ring: z = r (cos phi, sin phi, 0, ...) + N(0, 0.1^2 I), r = 0.5 or 1.5, dim >= 2
Dataset synthetic(SyntheticKind kind, std::size_t n, std::size_t dim, std::uint64_t seed);

/// Class-stratified subsample of n items (largest-remainder allocation), in
/// original order.
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

/// Samples [begin, end) of ds.
Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end);

/// Seeded per-epoch permutation split into batches; the last batch may be short.
class BatchIterator {
public:
    BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::vector<std::size_t>> epoch(std::size_t index) const;
    std::size_t batches_per_epoch() const { return (count_ + batch_size_ - 1) / batch_size_; }

private:
    std::size_t count_;
    std::size_t batch_size_;
    std::uint64_t seed_;
};

}  // namespace certsmooth
