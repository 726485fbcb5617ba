#include "certsmooth/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "certsmooth/rng.hpp"

namespace certsmooth {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

const ConfigKey* find_key(const std::string& name)
{
    for (const auto& k : config_keys())
        if (k.name == name)
            return &k;
    return nullptr;
}

std::vector<std::string> split(const std::string& text, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur, sep))
        if (!trim(cur).empty())
            out.push_back(trim(cur));
    return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys()
{
    static const std::vector<ConfigKey> keys = {
        {"arch", "cnn3-tiny", "architecture, e.g. `cnn3-tiny` or `custom in=4 classes=2 layers=dense:16,relu,dense:2`"},
        {"init", "ibp-init", "ibp-init | kaiming-uniform"},
        {"warm_start", "auto", "checkpoint to start from; `none`; `auto` = reference PGD checkpoint for pgpe"},
        {"data", "mnist", "mnist | synthetic"},
        {"data_dir", "data/mnist5k", "directory with train-/t10k- IDX files"},
        {"train_subset", "0", "stratified training subset size, 0 = all"},
        {"test_subset", "0", "stratified test subset size, 0 = all"},
        {"synthetic_kind", "two-gaussians", "two-gaussians | ring"},
        {"synthetic_train", "1000", "synthetic training samples"},
        {"synthetic_test", "200", "synthetic test samples"},
        {"synthetic_dim", "4", "synthetic input dimension"},
        {"method", "grad", "grad | pgpe | rgs | pgd"},
        {"relaxation", "ibp", "ibp | hbox | crown-ibp | deeppoly | alpha1"},
        {"eps", "", "target L-inf radius for training and evaluation", true},
        {"anneal_epochs", "0", "linear eps ramp length in epochs, 0 = off"},
        {"epochs", "1", "training epochs"},
        {"batch_size", "auto", "samples per step; auto = 512 for pgpe, else 256"},
        {"lr", "auto", "Adam learning rate; auto = 3e-4 for pgpe, else 5e-5"},
        {"lr_decay", "auto", "factor at each milestone; auto = 0.4 for pgpe, else 0.2"},
        {"lr_milestones", "", "comma-separated epochs"},
        {"grad_clip", "10", "gradient norm clip, 0 = off"},
        {"seed", "0", "master seed"},
        {"chunk_size", "16", "samples per tape (fixes the gradient reduction order)"},
        {"max_batches", "0", "batches per epoch, 0 = all"},
        {"population", "256", "PGPE population size (even)"},
        {"sigma0", "1e-3", "initial PGPE standard deviation"},
        {"lr_sigma", "1e-5", "Adam learning rate of the PGPE standard deviation"},
        {"sigma_decay", "0.4", "PGPE sigma factor at sigma milestones, RGS sigma factor at lr milestones"},
        {"sigma_milestones", "auto", "comma-separated epochs; auto = lr_milestones"},
        {"rank_shaping", "false", "PGPE centered-rank fitness shaping"},
        {"rgs_population", "2", "RGS gradient samples per step"},
        {"rgs_sigma", "1e-3", "RGS standard deviation"},
        {"train_pgd_steps", "40", "PGD steps during adversarial training"},
        {"train_pgd_restarts", "1", "PGD restarts during adversarial training"},
        {"pgd_step_fraction", "0.25", "PGD step size as a fraction of eps"},
        {"eval_relaxation", "deeppoly", "relaxation used for certified accuracy"},
        {"eval_pgd_steps", "40", "PGD steps during evaluation"},
        {"eval_pgd_restarts", "5", "PGD restarts during evaluation"},
        {"eval_samples", "0", "test samples evaluated, 0 = all"},
        {"eval_every", "1", "evaluate every n epochs, 0 = only after the last"},
        {"workers", "0", "threads, 0 = CERTSMOOTH_WORKERS or all cores"},
        {"out_dir", "runs/latest", "output directory"},
        {"checkpoint_every", "0", "extra checkpoint every n epochs, 0 = off"},
    };
    return keys;
}

RunConfig RunConfig::parse(std::string_view text, const std::string& origin)
{
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        if (trim(line).empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(no) + ": expected `key = value`");
        cfg.set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path.string());
}

void RunConfig::set(std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
        throw ConfigError("override '" + std::string(assignment) + "': expected key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value)
{
    if (!find_key(key))
        throw ConfigError("unknown config field '" + key + "'");
    entries_[key] = value;
}

std::string RunConfig::get(const std::string& key) const
{
    const ConfigKey* k = find_key(key);
    if (!k)
        throw ConfigError("unknown config field '" + key + "'");
    std::string v = has(key) ? entries_.at(key) : k->fallback;
    if (v.empty() && k->required)
        throw ConfigError(key + ": required field missing (" + k->doc + ")");
    if (v != "auto")
        return v;
    const bool pgpe = get("method") == "pgpe";
    if (key == "batch_size")
        return pgpe ? "512" : "256";
    if (key == "lr")
        return pgpe ? "3e-4" : "5e-5";
    if (key == "lr_decay")
        return pgpe ? "0.4" : "0.2";
    if (key == "sigma_milestones")
        return get("lr_milestones");
    if (key == "warm_start")
        return pgpe ? reference_checkpoint().string() : "none";
    throw ConfigError(key + ": 'auto' is not allowed here");
}

std::string RunConfig::snapshot() const
{
    std::string out = "# resolved configuration\n";
    for (const auto& k : config_keys())
        out += k.name + " = " + get(k.name) + "\n";
    return out;
}

// --- field parsers --------------------------------------------------------------

Real parse_real(const std::string& field, const std::string& text)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(v))
            throw std::invalid_argument(text);
        return static_cast<Real>(v);
    } catch (const std::exception&) {
        throw ConfigError(field + ": '" + text + "' is not a finite number");
    }
}

std::size_t parse_count(const std::string& field, const std::string& text)
{
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size())
        throw ConfigError(field + ": '" + text + "' is not a non-negative integer");
    return v;
}

std::vector<std::size_t> parse_count_list(const std::string& field, const std::string& text)
{
    std::vector<std::size_t> out;
    for (const auto& item : split(text, ','))
        out.push_back(parse_count(field, item));
    return out;
}

std::vector<Real> parse_real_list(const std::string& field, const std::string& text)
{
    std::vector<Real> out;
    for (const auto& item : split(text, ',')) {
        const auto parts = split(item, ':');
        if (parts.size() == 3) {  // lo:hi:count
            const Real lo = parse_real(field, parts[0]), hi = parse_real(field, parts[1]);
            const std::size_t n = parse_count(field, parts[2]);
            if (n < 2)
                throw ConfigError(field + ": range '" + item + "' needs at least 2 points");
            // weighted form: symmetric ranges hit 0 exactly
            for (std::size_t k = 0; k < n; ++k) {
                const Real t = static_cast<Real>(k) / static_cast<Real>(n - 1);
                out.push_back(lo * (1 - t) + hi * t);
            }
        } else {
            out.push_back(parse_real(field, item));
        }
    }
    return out;
}

bool parse_bool(const std::string& field, const std::string& text)
{
    if (text == "true" || text == "1" || text == "yes" || text == "on")
        return true;
    if (text == "false" || text == "0" || text == "no" || text == "off")
        return false;
    throw ConfigError(field + ": '" + text + "' is not a boolean");
}

// --- resolution -----------------------------------------------------------------

std::filesystem::path locate(const std::filesystem::path& p)
{
    if (p.is_absolute() || std::filesystem::exists(p))
        return p;
    const auto alt = std::filesystem::path(CERTSMOOTH_SOURCE_DIR) / p;
    return std::filesystem::exists(alt) ? alt : p;
}

std::filesystem::path reference_checkpoint()
{
    return std::filesystem::path(CERTSMOOTH_SOURCE_DIR) / "data" / "reference" / "cnn3-tiny-pgd.ckpt";
}

ResolvedRun resolve(const RunConfig& cfg)
{
    auto real = [&](const char* k) { return parse_real(k, cfg.get(k)); };
    auto count = [&](const char* k) { return parse_count(k, cfg.get(k)); };
    auto wrap = [](const char* k, auto fn) {
        try {
            return fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(std::string(k) + ": " + e.what());
        }
    };

    ResolvedRun r;
    TrainConfig& t = r.train;
    t.method = wrap("method", [&] { return parse_train_method(cfg.get("method")); });
    t.relaxation = wrap("relaxation", [&] { return parse_relaxation(cfg.get("relaxation")); });
    t.eps = real("eps");
    if (t.eps < 0)
        throw ConfigError("eps: must be non-negative");
    t.anneal_epochs = count("anneal_epochs");
    t.epochs = count("epochs");
    if (t.epochs == 0)
        throw ConfigError("epochs: must be positive");
    if (t.anneal_epochs > t.epochs)
        throw ConfigError("anneal_epochs: exceeds epochs");
    t.batch_size = count("batch_size");
    if (t.batch_size == 0)
        throw ConfigError("batch_size: must be positive");
    t.lr = real("lr");
    if (!(t.lr > 0))
        throw ConfigError("lr: must be positive");
    t.lr_decay = real("lr_decay");
    t.lr_milestones = parse_count_list("lr_milestones", cfg.get("lr_milestones"));
    t.grad_clip = real("grad_clip");
    t.seed = count("seed");
    t.chunk_size = count("chunk_size");
    if (t.chunk_size == 0)
        throw ConfigError("chunk_size: must be positive");
    t.max_batches = count("max_batches");
    t.population = count("population");
    if (t.population == 0 || t.population % 2)
        throw ConfigError("population: must be even and positive");
    t.sigma0 = real("sigma0");
    if (!(t.sigma0 > 0))
        throw ConfigError("sigma0: must be positive");
    t.lr_sigma = real("lr_sigma");
    t.sigma_decay = real("sigma_decay");
    t.sigma_milestones = parse_count_list("sigma_milestones", cfg.get("sigma_milestones"));
    t.rank_shaping = parse_bool("rank_shaping", cfg.get("rank_shaping"));
    t.rgs_population = count("rgs_population");
    if (t.rgs_population == 0)
        throw ConfigError("rgs_population: must be positive");
    t.rgs_sigma = real("rgs_sigma");
    if (t.rgs_sigma < 0)
        throw ConfigError("rgs_sigma: must be non-negative");
    const Real frac = real("pgd_step_fraction");
    t.train_pgd = {count("train_pgd_steps"), count("train_pgd_restarts"), frac};
    t.eval.relaxation = wrap("eval_relaxation", [&] { return parse_relaxation(cfg.get("eval_relaxation")); });
    t.eval.pgd = {count("eval_pgd_steps"), count("eval_pgd_restarts"), frac};
    t.eval.max_samples = count("eval_samples");
    t.eval.seed = t.seed;
    t.eval_every = count("eval_every");
    t.workers = count("workers");
    t.eval.workers = t.workers;

    if (t.method == TrainMethod::Grad || t.method == TrainMethod::Rgs)
        if (!is_differentiable(t.relaxation))
            throw ConfigError("relaxation: '" + cfg.get("relaxation") + "' is non-differentiable; use method=pgpe");

    r.arch = wrap("arch", [&] {
        const std::string a = cfg.get("arch");
        // bare preset names mean the MNIST shape
        if (a == "cnn3-tiny")
            return ArchitectureSpec::cnn3_tiny();
        if (a == "cnn3")
            return ArchitectureSpec::cnn3();
        return ArchitectureSpec::parse(a);
    });
    r.init = wrap("init", [&] { return parse_init_scheme(cfg.get("init")); });
    const std::string ws = cfg.get("warm_start");
    if (ws != "none" && !ws.empty()) {
        r.warm_start = locate(ws);
        if (!std::filesystem::exists(r.warm_start))
            throw ConfigError("warm_start: checkpoint '" + ws + "' not found");
    }

    DataSpec& d = r.data;
    d.source = cfg.get("data");
    if (d.source != "mnist" && d.source != "synthetic")
        throw ConfigError("data: '" + d.source + "' is not mnist or synthetic");
    d.dir = locate(cfg.get("data_dir"));
    d.train_subset = count("train_subset");
    d.test_subset = count("test_subset");
    d.synthetic_kind = wrap("synthetic_kind", [&] { return parse_synthetic_kind(cfg.get("synthetic_kind")); });
    d.synthetic_train = count("synthetic_train");
    d.synthetic_test = count("synthetic_test");
    d.synthetic_dim = count("synthetic_dim");
    d.seed = t.seed;

    r.out_dir = cfg.get("out_dir");
    r.checkpoint_every = count("checkpoint_every");
    return r;
}

std::pair<Dataset, Dataset> load_data(const DataSpec& spec)
{
    Dataset train, test;
    if (spec.source == "synthetic") {
        train = synthetic(spec.synthetic_kind, spec.synthetic_train, spec.synthetic_dim, derive_seed(spec.seed, "train"));
        test = synthetic(spec.synthetic_kind, spec.synthetic_test, spec.synthetic_dim, derive_seed(spec.seed, "test"));
    } else {
        train = load_idx_dir(spec.dir, true);
        test = load_idx_dir(spec.dir, false);
    }
    if (spec.train_subset && spec.train_subset < train.size())
        train = subset(train, spec.train_subset, spec.seed);
    if (spec.test_subset && spec.test_subset < test.size())
        test = subset(test, spec.test_subset, spec.seed);
    return {std::move(train), std::move(test)};
}

}  // namespace certsmooth
