#pragma once
// Plain-text `key = value` run configuration with documented defaults,
// `--set key=value` overrides and a resolved snapshot that re-runs identically.
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "certsmooth/data.hpp"
#include "certsmooth/network.hpp"
#include "certsmooth/training.hpp"

namespace certsmooth {

/// Invalid configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
    std::string name;
    std::string fallback;  // "" with required = true means no default
    std::string doc;
    bool required = false;
};

/// Every accepted key, in snapshot order.
const std::vector<ConfigKey>& config_keys();

class RunConfig {
public:
    /// Lines `key = value`; `#` starts a comment; blank lines are ignored.
    static RunConfig parse(std::string_view text, const std::string& origin = "config");
    static RunConfig load(const std::filesystem::path& path);

    /// `key=value`; later settings win.
    void set(std::string_view assignment);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return entries_.contains(key); }
    /// Explicit value or the default; "auto" defaults resolve against the method.
    std::string get(const std::string& key) const;

    /// Every key with its effective value; feeding it back gives the same run.
    std::string snapshot() const;

private:
    std::map<std::string, std::string> entries_;
};

struct DataSpec {
    std::string source = "mnist";  // mnist | synthetic
    std::filesystem::path dir;
    std::size_t train_subset = 0;
    std::size_t test_subset = 0;
    SyntheticKind synthetic_kind = SyntheticKind::TwoGaussians;
    std::size_t synthetic_train = 1000;
    std::size_t synthetic_test = 200;
    std::size_t synthetic_dim = 4;
    std::uint64_t seed = 0;
};

struct ResolvedRun {
    TrainConfig train;
    ArchitectureSpec arch;
    InitScheme init = InitScheme::IbpInit;
    std::filesystem::path warm_start;  // empty = fresh initialization
    DataSpec data;
    std::filesystem::path out_dir;
    std::size_t checkpoint_every = 0;
};

ResolvedRun resolve(const RunConfig& cfg);

/// Train and test split of a data spec.
std::pair<Dataset, Dataset> load_data(const DataSpec& spec);

/// Relative paths are tried against the working directory, then the source tree.
std::filesystem::path locate(const std::filesystem::path& p);

/// Checkpoint used as the default PGPE warm start.
std::filesystem::path reference_checkpoint();

// Field parsers shared with the command line; errors name the field.
Real parse_real(const std::string& field, const std::string& text);
std::size_t parse_count(const std::string& field, const std::string& text);
std::vector<std::size_t> parse_count_list(const std::string& field, const std::string& text);
std::vector<Real> parse_real_list(const std::string& field, const std::string& text);
bool parse_bool(const std::string& field, const std::string& text);

}  // namespace certsmooth
