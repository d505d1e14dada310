// fbm: train, evaluate, and inspect Fourier Basis Mapping forecasters.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 data or I/O error,
// 3 numeric abort. Reports go to stdout, diagnostics to stderr.

#include "fbm/checkpoint.hpp"
#include "fbm/data.hpp"
#include "fbm/errors.hpp"
#include "fbm/fourier.hpp"
#include "fbm/kernels.hpp"
#include "fbm/models.hpp"
#include "fbm/presets.hpp"
#include "fbm/rng.hpp"
#include "fbm/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

/// A configuration error that also prints the subcommand usage.
class UsageError : public fbm::ConfigError {
public:
    using fbm::ConfigError::ConfigError;
};

// ---------------------------------------------------------------------------
// Manifest

struct Manifest {
    std::string path;
    std::string text;
    std::vector<std::string> args; // "--key=value", in file order
};

Manifest read_manifest(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw fbm::DataError("cannot open manifest '" + path + "'");
    }
    Manifest m;
    m.path = path;
    std::ostringstream all;
    all << in.rdbuf();
    m.text = all.str();
    std::istringstream lines(m.text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(lines, line)) {
        ++number;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw fbm::ConfigError("manifest '" + path + "' line " + std::to_string(number) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        while (!key.empty() && key.front() == '-') {
            key.erase(key.begin());
        }
        if (key.empty() || key == "manifest") {
            throw fbm::ConfigError("manifest '" + path + "' line " + std::to_string(number) + ": invalid key");
        }
        m.args.push_back("--" + key + "=" + value);
    }
    return m;
}

/// Removes --manifest from argv and splices the file's flags in right after
/// the subcommand words, so explicit flags (later) override file values.
std::vector<std::string> expand_manifest(std::vector<std::string> args, std::optional<Manifest>& manifest)
{
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        std::size_t erase = 0;
        if (args[i] == "--manifest") {
            if (i + 1 >= args.size()) {
                throw UsageError("--manifest requires a file path");
            }
            path = args[i + 1];
            erase = 2;
        } else if (args[i].rfind("--manifest=", 0) == 0) {
            path = args[i].substr(11);
            erase = 1;
        } else {
            continue;
        }
        if (manifest) {
            throw UsageError("--manifest given more than once");
        }
        manifest = read_manifest(path);
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + erase));
        break;
    }
    if (manifest) {
        std::size_t words = 0;
        while (words < args.size() && !args[words].empty() && args[words][0] != '-') {
            ++words;
        }
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(words), manifest->args.begin(), manifest->args.end());
    }
    return args;
}

// ---------------------------------------------------------------------------
// Shared options

struct DataOptions {
    std::string path;
    std::string columns;
    std::string split_mode = "auto";
};

void add_data_options(CLI::App& cmd, DataOptions& o, bool required)
{
    auto* data = cmd.add_option("--data", o.path, "CSV time series (first column may be a timestamp)");
    if (required) {
        data->required();
    }
    cmd.add_option("--columns", o.columns, "comma-separated value columns (default: all)");
    cmd.add_option("--split-mode", o.split_mode, "auto | ratio | ett-hourly | ett-15min")
        ->check(CLI::IsMember({"auto", "ratio", "ett-hourly", "ett-15min"}));
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

fbm::data::SplitSpec split_spec(const DataOptions& o)
{
    if (o.split_mode == "ratio") return fbm::data::SplitSpec::ratios(0.65, 0.15, 0.2);
    if (o.split_mode == "ett-hourly") return fbm::data::SplitSpec::ett_months(1);
    if (o.split_mode == "ett-15min") return fbm::data::SplitSpec::ett_months(4);
    return fbm::data::detect_split(o.path);
}

std::string split_mode_name(const fbm::data::SplitSpec& s)
{
    if (s.mode == fbm::data::SplitSpec::Mode::ratio) return "ratio";
    return s.steps_per_hour == 1 ? "ett-hourly" : "ett-15min";
}

/// A z-scored series with its splits; windows reference `series`.
struct Prepared {
    fbm::data::Dataset series;
    fbm::data::ZScore z;
    fbm::data::SplitSpec spec;
    fbm::data::Splits splits;
};

std::unique_ptr<Prepared> prepare(const fbm::data::Dataset& raw, const fbm::data::SplitSpec& spec, std::size_t T,
                                  std::size_t L)
{
    auto p = std::make_unique<Prepared>();
    p->spec = spec;
    p->splits = fbm::data::split(raw.N(), spec, T, L);
    p->z = fbm::data::zscore_fit(raw, p->splits.train);
    p->series = fbm::data::zscore_apply(raw, p->z);
    return p;
}

std::unique_ptr<Prepared> prepare(const DataOptions& o, std::size_t T, std::size_t L)
{
    return prepare(fbm::data::load_csv(o.path, split_list(o.columns)), split_spec(o), T, L);
}

fbm::data::Range split_range(const Prepared& p, const std::string& name)
{
    if (name == "train") return p.splits.train;
    if (name == "val") return p.splits.val;
    return p.splits.test;
}

// ---------------------------------------------------------------------------
// Synthetic sources

/// Train/val/test sources for a synthetic task; the series (case 2) backs the windows.
struct SyntheticTask {
    std::unique_ptr<Prepared> series;
    std::unique_ptr<fbm::data::PairWindows> pairs[3];
};

SyntheticTask synthetic_task(const std::string& name, std::size_t count, std::uint64_t seed)
{
    SyntheticTask task;
    if (name == "case1") {
        task.pairs[0] = std::make_unique<fbm::data::PairWindows>(fbm::train::make_case1(count, seed));
        task.pairs[1] = std::make_unique<fbm::data::PairWindows>(fbm::train::make_case1(count / 5 + 1, seed + 1));
        task.pairs[2] = std::make_unique<fbm::data::PairWindows>(fbm::train::make_case1(count / 5 + 1, seed + 2));
    } else {
        const std::size_t steps = count + fbm::train::kCaseLength + fbm::train::kCaseTwoTarget;
        task.series = prepare(fbm::train::make_case2(steps, seed), fbm::data::SplitSpec::ratios(0.65, 0.15, 0.2),
                              fbm::train::kCaseLength, fbm::train::kCaseTwoTarget);
    }
    return task;
}

// ---------------------------------------------------------------------------
// Model options

struct ModelOptions {
    std::string variant = "fbm-l";
    std::string preset;
    std::size_t T = 336;
    std::size_t L = 96;
    std::string backbone;
    std::string scales;
    std::size_t P = 0;
    std::size_t h1 = 0;
    std::size_t h2 = 0;
    std::size_t K = 0;
    bool centralize = true;
    bool relu = true;
    bool seasonal = true;
    bool interaction = false;
    std::size_t C1 = 0;
    std::size_t C2 = 0;
    std::size_t h3 = 0;
    std::size_t inter_K = 0;
    std::size_t nl_h1 = 0;
    std::size_t nl_h2 = 0;
    bool nl_activations = true;

    std::vector<std::pair<std::string, CLI::Option*>> opts;

    bool given(const std::string& name) const
    {
        for (const auto& [n, o] : opts) {
            if (n == name) return o->count() > 0;
        }
        return false;
    }
};

void add_model_options(CLI::App& cmd, ModelOptions& o)
{
    auto add = [&](const std::string& name, auto& field, const std::string& help) {
        o.opts.emplace_back(name, cmd.add_option("--" + name, field, help));
    };
    add("variant", o.variant, "fbm-l | fbm-nl | fbm-np | fbm-s");
    add("preset", o.preset, "dataset preset for FBM-S blocks and lr (ETTh1, ETTm1, PEMS08, ...)");
    add("T", o.T, "look-back window length (even)");
    add("L", o.L, "forecast horizon");
    add("trend-backbone", o.backbone, "linear | mlp | transformer");
    add("scales", o.scales, "trend scales, e.g. d0 or d0,d1,d2");
    add("P", o.P, "patch count");
    add("h1", o.h1, "trend initial projection width");
    add("h2", o.h2, "trend hidden or feed-forward width");
    add("K", o.K, "trend attention stacks");
    add("centralize", o.centralize, "centralize patches in the trend path");
    add("relu", o.relu, "ReLU after the trend initial projection");
    add("seasonal", o.seasonal, "FBM-S seasonal block");
    add("interaction", o.interaction, "FBM-S interaction block");
    add("C1", o.C1, "interaction input mask (most recent steps)");
    add("C2", o.C2, "interaction output mask (leading horizon steps)");
    add("h3", o.h3, "interaction token width");
    add("interaction-K", o.inter_K, "interaction attention stacks");
    add("nl-h1", o.nl_h1, "FBM-NL first hidden width");
    add("nl-h2", o.nl_h2, "FBM-NL second hidden width");
    add("nl-activations", o.nl_activations, "ReLU between FBM-NL layers");
}

std::optional<fbm::presets::Preset> lookup_preset(const ModelOptions& o)
{
    if (o.preset.empty()) {
        return std::nullopt;
    }
    auto p = fbm::presets::find(o.preset);
    if (!p) {
        std::string names;
        for (const auto& q : fbm::presets::all()) {
            names += (names.empty() ? "" : ", ") + q.name;
        }
        throw fbm::ConfigError("unknown preset '" + o.preset + "' (known: " + names + ")");
    }
    return p;
}

/// Defaults, then the preset, then explicit flags. A preset without --variant selects FBM-S.
fbm::models::ModelSpec build_spec(const ModelOptions& o, std::size_t D)
{
    using namespace fbm;
    const auto preset = lookup_preset(o);
    const models::Variant v =
        preset && !o.given("variant") ? models::Variant::S : models::parse_variant(o.variant);
    models::ModelSpec s = models::default_spec(v, o.T, o.L, D);
    if (preset && v == models::Variant::S) {
        s = presets::spec_for(*preset, o.T, o.L, D);
    }
    if (o.given("trend-backbone")) s.trend.backbone = blocks::parse_backbone(o.backbone);
    if (o.given("scales")) s.trend.kernels = models::parse_scales(o.scales);
    if (o.given("P")) s.trend.P = o.P;
    if (o.given("h1")) s.trend.h1 = o.h1;
    if (o.given("h2")) s.trend.h2 = o.h2;
    if (o.given("K")) s.trend.K = o.K;
    if (o.given("centralize")) s.trend.centralize = o.centralize;
    if (o.given("relu")) s.trend.relu = o.relu;
    if (o.given("seasonal")) s.seasonal = o.seasonal;
    if (o.given("interaction")) s.interaction = o.interaction;
    if (o.given("C1")) s.inter.C1 = o.C1;
    if (o.given("C2")) s.inter.C2 = o.C2;
    if (o.given("h3")) s.inter.h3 = o.h3;
    if (o.given("interaction-K")) s.inter.K = o.inter_K;
    if (o.given("nl-h1")) s.nl_h1 = o.nl_h1;
    if (o.given("nl-h2")) s.nl_h2 = o.nl_h2;
    if (o.given("nl-activations")) s.nl_activations = o.nl_activations;
    s.validate();
    return s;
}

ordered_json spec_json(const fbm::models::ModelSpec& s)
{
    ordered_json j = ordered_json::object();
    for (const auto& [key, value] : fbm::checkpoint::parse_header(s.header())) {
        j[key] = value;
    }
    return j;
}

ordered_json counts_json(const std::vector<fbm::models::BlockCount>& counts)
{
    ordered_json blocks = ordered_json::array();
    std::size_t total = 0;
    for (const auto& c : counts) {
        blocks.push_back({{"block", c.block}, {"parameters", c.count}});
        total += c.count;
    }
    return {{"blocks", blocks}, {"total", total}};
}

fbm::blocks::Route parse_route(const std::string& text)
{
    return text == "dense" ? fbm::blocks::Route::dense : fbm::blocks::Route::spectral;
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
    int threads = 1;
    std::optional<Manifest> manifest;
};

struct TrainOptions {
    DataOptions data;
    ModelOptions model;
    std::string synth;
    std::size_t synth_count = 1000;
    double lr = 1e-4;
    CLI::Option* lr_opt = nullptr;
    std::size_t batch = 128;
    std::size_t epochs = 30;
    std::size_t patience = 5;
    std::uint64_t seed = 1;
    std::size_t stride = 1;
    std::string out = "run";
    std::string predictions;
    std::string route = "spectral";
    bool quiet = false;
};

int cmd_train(const TrainOptions& o, const Common& common)
{
    using namespace fbm;
    if (o.data.path.empty() == o.synth.empty()) {
        throw UsageError("train needs exactly one of --data or --synth");
    }
    const auto preset = lookup_preset(o.model);
    double lr = o.lr;
    if (o.lr_opt->count() == 0 && preset) {
        lr = preset->lr;
    }

    ModelOptions mo = o.model;
    SyntheticTask task;
    std::unique_ptr<Prepared> prepared;
    if (!o.synth.empty()) {
        task = synthetic_task(o.synth, o.synth_count, o.seed);
        mo.T = fbm::train::kCaseLength;
        mo.L = o.synth == "case1" ? fbm::train::kCaseLength : fbm::train::kCaseTwoTarget;
        if ((o.model.given("T") && o.model.T != mo.T) || (o.model.given("L") && o.model.L != mo.L)) {
            throw ConfigError("synthetic task " + o.synth + " fixes T=" + std::to_string(mo.T) +
                              " and L=" + std::to_string(mo.L));
        }
    } else {
        fourier::require_even_length(mo.T);
        prepared = prepare(o.data, mo.T, mo.L);
    }
    const Prepared* series = prepared ? prepared.get() : task.series.get();
    const std::size_t D = series ? series->series.D() : 1;
    const models::ModelSpec spec = build_spec(mo, D);

    std::unique_ptr<data::SeriesWindows> windows[3];
    const data::WindowSource* sources[3];
    if (series) {
        windows[0] = std::make_unique<data::SeriesWindows>(series->series, series->splits.train, spec.T, spec.L);
        windows[1] = std::make_unique<data::SeriesWindows>(series->series, series->splits.val, spec.T, spec.L);
        windows[2] = std::make_unique<data::SeriesWindows>(series->series, series->splits.test, spec.T, spec.L);
        for (int i = 0; i < 3; ++i) sources[i] = windows[i].get();
    } else {
        for (int i = 0; i < 3; ++i) sources[i] = task.pairs[i].get();
    }
    const data::SubsetWindows train_windows = data::SubsetWindows::strided(*sources[0], o.stride);

    models::ForecastModel model(spec, o.seed);
    model.set_route(parse_route(o.route));

    train::TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.patience = o.patience;
    cfg.lr = lr;
    cfg.batch_size = o.batch;
    cfg.seed = o.seed;
    cfg.log = o.quiet ? nullptr : &std::cout;

    ordered_json config;
    config["command"] = "train";
    config["data"] = o.data.path.empty() ? ordered_json(nullptr) : ordered_json(o.data.path);
    config["columns"] = o.data.columns;
    config["synth"] = o.synth.empty() ? ordered_json(nullptr) : ordered_json(o.synth);
    config["split_mode"] = series ? ordered_json(split_mode_name(series->spec)) : ordered_json("fixed");
    config["preset"] = o.model.preset;
    config["lr"] = lr;
    config["batch"] = o.batch;
    config["epochs"] = o.epochs;
    config["patience"] = o.patience;
    config["seed"] = o.seed;
    config["train_stride"] = o.stride;
    config["route"] = o.route;
    config["threads"] = common.threads;
    config["windows"] = {{"train", train_windows.count()}, {"val", sources[1]->count()}, {"test", sources[2]->count()}};
    config["model"] = spec_json(spec);
    config["parameters"] = counts_json(model.describe());
    config["manifest"] = common.manifest ? ordered_json{{"path", common.manifest->path}, {"text", common.manifest->text}}
                                         : ordered_json(nullptr);

    std::cerr << "training " << spec.summary() << " on " << train_windows.count() << " windows" << std::endl;
    train::RunReport report = train::fit(model, train_windows, *sources[1], sources[2], cfg);
    report.config = config;

    fs::create_directories(o.out);
    model.save((fs::path(o.out) / "model.ckpt").string());
    const ordered_json j = report.to_json();
    {
        std::ofstream f(fs::path(o.out) / "report.json");
        if (!f) {
            throw DataError("cannot write '" + (fs::path(o.out) / "report.json").string() + "'");
        }
        f << j.dump(2) << "\n";
    }
    if (!o.predictions.empty()) {
        train::write_predictions(o.predictions, model, *sources[2], o.batch);
    }
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

struct EvalOptions {
    DataOptions data;
    std::string checkpoint;
    std::string synth;
    std::size_t synth_count = 1000;
    std::uint64_t seed = 1;
    std::string split = "test";
    std::size_t batch = 128;
    std::string predictions;
    std::string route = "spectral";
};

int cmd_eval(const EvalOptions& o)
{
    using namespace fbm;
    if (o.data.path.empty() == o.synth.empty()) {
        throw UsageError("eval needs exactly one of --data or --synth");
    }
    models::ForecastModel model = models::ForecastModel::load(o.checkpoint);
    model.set_route(parse_route(o.route));
    const auto& spec = model.spec();

    SyntheticTask task;
    std::unique_ptr<Prepared> prepared;
    const data::WindowSource* source = nullptr;
    std::unique_ptr<data::SeriesWindows> windows;
    const int which = o.split == "train" ? 0 : (o.split == "val" ? 1 : 2);
    if (!o.synth.empty()) {
        task = synthetic_task(o.synth, o.synth_count, o.seed);
    } else {
        data::Dataset raw = data::load_csv(o.data.path, split_list(o.data.columns));
        if (raw.D() != spec.D) {
            throw ConfigError("dataset has D=" + std::to_string(raw.D()) + " channels but the checkpoint expects D=" +
                              std::to_string(spec.D));
        }
        prepared = prepare(raw, split_spec(o.data), spec.T, spec.L);
    }
    const Prepared* series = prepared ? prepared.get() : task.series.get();
    if (series) {
        if (series->series.D() != spec.D) {
            throw ConfigError("dataset has D=" + std::to_string(series->series.D()) +
                              " channels but the checkpoint expects D=" + std::to_string(spec.D));
        }
        windows = std::make_unique<data::SeriesWindows>(series->series, split_range(*series, o.split), spec.T, spec.L);
        source = windows.get();
    } else {
        source = task.pairs[which].get();
        if (source->T() != spec.T || source->L() != spec.L || source->D() != spec.D) {
            throw ConfigError("synthetic task shape does not match the checkpoint (" + spec.summary() + ")");
        }
    }
    const train::Metrics m = train::evaluate(model, *source, o.batch);
    if (!o.predictions.empty()) {
        train::write_predictions(o.predictions, model, *source, o.batch);
    }
    ordered_json j;
    j["split"] = o.split;
    j["windows"] = source->count();
    j["mse"] = m.mse;
    j["mae"] = m.mae;
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

struct FeaturesOptions {
    DataOptions data;
    std::size_t T = 336;
    std::size_t start = 0;
    std::size_t kernel = 1;
    std::string out = "features";
};

int cmd_features(const FeaturesOptions& o)
{
    using namespace fbm;
    fourier::require_even_length(o.T);
    const data::Dataset ds = data::load_csv(o.data.path, split_list(o.data.columns));
    if (o.start + o.T > ds.N()) {
        throw DataError("window [" + std::to_string(o.start) + ", " + std::to_string(o.start + o.T) +
                        ") exceeds the series of " + std::to_string(ds.N()) + " steps");
    }
    Tensor windows({ds.D(), o.T});
    for (std::size_t d = 0; d < ds.D(); ++d) {
        for (std::size_t n = 0; n < o.T; ++n) {
            windows[d * o.T + n] = ds.at(d, o.start + n);
        }
    }
    const models::InstanceStats stats = models::standardize_rows(windows);
    const fourier::Bases bases = fourier::build_bases(o.T, 0);
    std::vector<std::string> written;
    for (std::size_t d = 0; d < ds.D(); ++d) {
        const auto spectrum = fourier::rdft({stats.standardized.data().data() + d * o.T, o.T});
        Tensor G = fourier::basis_expand(spectrum, bases, true);
        if (o.kernel > 1) {
            G = fourier::downsample(G, o.kernel);
        }
        const std::string path = o.out + ".ch" + std::to_string(d) + ".csv";
        std::ofstream f(path);
        if (!f) {
            throw DataError("cannot write '" + path + "'");
        }
        f.precision(17);
        const std::size_t rows = G.dim(0);
        const std::size_t cols = G.dim(1);
        f << "n";
        for (std::size_t c = 0; c < cols; ++c) {
            f << ",f" << c;
        }
        f << "\n";
        for (std::size_t r = 0; r < rows; ++r) {
            f << r;
            for (std::size_t c = 0; c < cols; ++c) {
                f << ',' << G[r * cols + c];
            }
            f << "\n";
        }
        written.push_back(path);
    }
    ordered_json j;
    j["channels"] = ds.columns;
    j["files"] = written;
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

struct SpectrumOptions {
    DataOptions data;
    std::size_t T = 336;
    std::size_t L = 96;
    std::size_t stride = 1;
    std::string out = "spectrum.csv";
};

double percentile(std::vector<double>& v, double q)
{
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

int cmd_spectrum(const SpectrumOptions& o)
{
    using namespace fbm;
    fourier::require_even_length(o.T);
    if (o.stride == 0) {
        throw ConfigError("--stride must be positive");
    }
    const auto p = prepare(o.data, o.T, o.L);
    const data::SeriesWindows all(p->series, p->splits.train, o.T, o.L);
    const data::SubsetWindows windows = data::SubsetWindows::strided(all, o.stride);
    const std::size_t D = windows.D();
    const std::size_t M = windows.count();
    const std::size_t half = o.T / 2;

    Tensor rows({M * D, o.T});
    std::vector<double> y(D * o.L);
    for (std::size_t i = 0; i < M; ++i) {
        windows.fill(i, rows.data().data() + i * D * o.T, y.data());
    }
    Tensor re, im;
    fourier::rdft_rows(rows, re, im);
    const std::size_t bins = half + 1;

    std::ofstream f(o.out);
    if (!f) {
        throw DataError("cannot write '" + o.out + "'");
    }
    f.precision(12);
    f << "channel,k,mean_amp,lo95,hi95\n";
    std::vector<double> amp(M);
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t k = 1; k <= half; ++k) {
            const double scale = fourier::bin_weight(k, o.T) / static_cast<double>(o.T);
            double sum = 0.0;
            for (std::size_t i = 0; i < M; ++i) {
                const std::size_t r = i * D + d;
                amp[i] = scale * std::hypot(re[r * bins + k], im[r * bins + k]);
                sum += amp[i];
            }
            const double mean = sum / static_cast<double>(M);
            const double lo = percentile(amp, 0.025);
            const double hi = percentile(amp, 0.975);
            f << p->series.columns[d] << ',' << k << ',' << mean << ',' << lo << ',' << hi << '\n';
        }
    }
    if (!f) {
        throw DataError("failed writing '" + o.out + "'");
    }
    ordered_json j;
    j["windows"] = M;
    j["channels"] = D;
    j["bins"] = half;
    j["file"] = o.out;
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

struct WeightsOptions {
    std::string checkpoint;
    std::string block = "seasonal";
    std::string out = "weights.csv";
};

int cmd_weights_export(const WeightsOptions& o)
{
    using namespace fbm;
    const models::ForecastModel model = models::ForecastModel::load(o.checkpoint);
    const auto& spec = model.spec();
    const std::string name = o.block == "seasonal" ? "seasonal.W" : "linear.W";
    const ad::Parameter* W = model.parameters().find(name);
    if (W == nullptr) {
        throw ConfigError("checkpoint (" + spec.summary() + ") has no " + o.block + " weights");
    }
    std::ofstream f(o.out);
    if (!f) {
        throw DataError("cannot write '" + o.out + "'");
    }
    f.precision(17);
    const std::size_t rows = W->value.dim(0);
    const std::size_t cols = W->value.dim(1);
    if (o.block == "seasonal") {
        // rows = n (time), cols = k = 1..T/2
        f << "n";
        for (std::size_t c = 0; c < cols; ++c) f << ",k" << c + 1;
    } else {
        // rows = flattened feature (n * T/2 + k - 1), cols = horizon step
        f << "feature";
        for (std::size_t c = 0; c < cols; ++c) f << ",v" << c;
    }
    f << "\n";
    for (std::size_t r = 0; r < rows; ++r) {
        f << r;
        for (std::size_t c = 0; c < cols; ++c) {
            f << ',' << W->value[r * cols + c];
        }
        f << "\n";
    }
    if (!f) {
        throw DataError("failed writing '" + o.out + "'");
    }
    ordered_json j;
    j["block"] = o.block;
    j["shape"] = {rows, cols};
    j["file"] = o.out;
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

struct InspectOptions {
    DataOptions data;
    std::size_t T = 336;
    std::size_t L = 96;
};

int cmd_data_inspect(const InspectOptions& o)
{
    using namespace fbm;
    const data::Dataset ds = data::load_csv(o.data.path, split_list(o.data.columns));
    ordered_json j;
    j["name"] = ds.name;
    j["D"] = ds.D();
    j["N"] = ds.N();
    if (!ds.timestamps.empty()) {
        j["first_timestamp"] = ds.timestamps.front();
        j["last_timestamp"] = ds.timestamps.back();
    }
    const data::SplitSpec spec = split_spec(o.data);
    j["split_mode"] = split_mode_name(spec);
    try {
        const data::Splits s = data::split(ds.N(), spec, o.T, o.L);
        j["splits"] = {{"train", {s.train.begin, s.train.end}},
                       {"val", {s.val.begin, s.val.end}},
                       {"test", {s.test.begin, s.test.end}}};
    } catch (const DataError& e) {
        j["splits"] = {{"error", e.what()}};
    }
    ordered_json channels = ordered_json::array();
    for (std::size_t d = 0; d < ds.D(); ++d) {
        double mean = 0.0;
        double lo = ds.at(d, 0);
        double hi = lo;
        for (std::size_t n = 0; n < ds.N(); ++n) {
            mean += ds.at(d, n);
            lo = std::min(lo, ds.at(d, n));
            hi = std::max(hi, ds.at(d, n));
        }
        mean /= static_cast<double>(ds.N());
        double var = 0.0;
        for (std::size_t n = 0; n < ds.N(); ++n) {
            var += (ds.at(d, n) - mean) * (ds.at(d, n) - mean);
        }
        channels.push_back({{"name", ds.columns[d]},
                            {"mean", mean},
                            {"sd", std::sqrt(var / static_cast<double>(ds.N()))},
                            {"min", lo},
                            {"max", hi}});
    }
    j["channels"] = channels;
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

struct DescribeOptions {
    ModelOptions model;
    std::size_t D = 1;
    std::string checkpoint;
    bool instantiate = false;
};

int cmd_model_describe(const DescribeOptions& o)
{
    using namespace fbm;
    ordered_json j;
    if (!o.checkpoint.empty()) {
        const models::ForecastModel model = models::ForecastModel::load(o.checkpoint);
        j["spec"] = spec_json(model.spec());
        j["parameters"] = counts_json(model.describe());
    } else {
        const models::ModelSpec spec = build_spec(o.model, o.D);
        j["spec"] = spec_json(spec);
        if (o.instantiate) {
            const models::ForecastModel model(spec, 1);
            j["parameters"] = counts_json(model.describe());
        } else {
            j["parameters"] = counts_json(models::expected_counts(spec));
        }
    }
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

struct SynthOptions {
    int which = 1;
    std::size_t steps = 4000;
    std::uint64_t seed = 1;
    std::size_t k = 4;
    std::string out = "synthetic.csv";
};

int cmd_synth(const SynthOptions& o)
{
    using namespace fbm;
    data::Dataset ds;
    if (o.which == 2) {
        ds = train::make_case2(o.steps, o.seed);
    } else {
        // Every 336-step window of this series is a case I input: one active bin, seeded phase.
        const std::size_t T = train::kCaseLength;
        if (o.k == 0 || 2 * o.k >= T) {
            throw ConfigError("case 1 frequency must lie in [1, 168)");
        }
        Pcg32 rng(o.seed);
        const std::size_t delta = rng.below(static_cast<std::uint32_t>(T));
        ds.name = "case1";
        ds.columns = {"value"};
        ds.values = Tensor({1, o.steps});
        for (std::size_t n = 0; n < o.steps; ++n) {
            ds.values[n] = std::cos(2.0 * std::numbers::pi * static_cast<double>(o.k) *
                                    static_cast<double>((n + delta) % T) / static_cast<double>(T));
        }
    }
    std::ofstream f(o.out);
    if (!f) {
        throw DataError("cannot write '" + o.out + "'");
    }
    f.precision(17);
    f << "step,value\n";
    for (std::size_t n = 0; n < ds.N(); ++n) {
        f << 's' << n << ',' << ds.values[n] << '\n';
    }
    if (!f) {
        throw DataError("failed writing '" + o.out + "'");
    }
    ordered_json j;
    j["case"] = o.which;
    j["steps"] = ds.N();
    j["file"] = o.out;
    std::cout << j.dump(2) << std::endl;
    return kOk;
}

int report_error(const char* kind, const std::exception& e, int code)
{
    std::cerr << "fbm: " << kind << ": " << e.what() << std::endl;
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Fourier Basis Mapping forecasting"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    Common common;
    auto add_threads = [&](CLI::App* cmd) {
        cmd->add_option("--threads", common.threads, "OpenMP threads (1 keeps runs bit-reproducible)")
            ->check(CLI::PositiveNumber);
    };

    TrainOptions train_o;
    auto* train = app.add_subcommand("train", "train a model and write model.ckpt and report.json");
    add_data_options(*train, train_o.data, false);
    add_model_options(*train, train_o.model);
    train->add_option("--synth", train_o.synth, "train on a synthetic task instead of --data")
        ->check(CLI::IsMember({"case1", "case2"}));
    train->add_option("--synth-count", train_o.synth_count, "synthetic training windows");
    train_o.lr_opt = train->add_option("--lr", train_o.lr, "Adam learning rate (default: preset lr, else 1e-4)");
    train->add_option("--batch", train_o.batch, "batch size");
    train->add_option("--epochs", train_o.epochs, "maximum epochs");
    train->add_option("--patience", train_o.patience, "early-stopping patience (0 disables)");
    train->add_option("--seed", train_o.seed, "seed for initialization, shuffling, and synthetic data");
    train->add_option("--train-stride", train_o.stride, "use every n-th training window");
    train->add_option("--out", train_o.out, "output directory");
    train->add_option("--predictions", train_o.predictions, "write test-split predictions CSV");
    train->add_option("--route", train_o.route, "spectral | dense")->check(CLI::IsMember({"spectral", "dense"}));
    train->add_flag("--quiet", train_o.quiet, "suppress per-epoch lines on stdout");
    add_threads(train);

    EvalOptions eval_o;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    add_data_options(*eval, eval_o.data, false);
    eval->add_option("--checkpoint", eval_o.checkpoint, "model checkpoint")->required();
    eval->add_option("--synth", eval_o.synth, "evaluate on a synthetic task")->check(CLI::IsMember({"case1", "case2"}));
    eval->add_option("--synth-count", eval_o.synth_count, "synthetic training windows used at train time");
    eval->add_option("--seed", eval_o.seed, "seed of the synthetic task");
    eval->add_option("--split", eval_o.split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--batch", eval_o.batch, "batch size");
    eval->add_option("--predictions", eval_o.predictions, "write predictions CSV");
    eval->add_option("--route", eval_o.route, "spectral | dense")->check(CLI::IsMember({"spectral", "dense"}));
    add_threads(eval);

    FeaturesOptions features_o;
    auto* features = app.add_subcommand("features", "dump the time-frequency features of one window per channel");
    add_data_options(*features, features_o.data, true);
    features->add_option("--T", features_o.T, "window length");
    features->add_option("--start", features_o.start, "first step of the window");
    features->add_option("--kernel", features_o.kernel, "down-sampling kernel 1, 2 or 4")
        ->check(CLI::IsMember({1, 2, 4}));
    features->add_option("--out", features_o.out, "output prefix; writes <out>.ch<d>.csv");
    add_threads(features);

    SpectrumOptions spectrum_o;
    auto* spectrum = app.add_subcommand("spectrum", "amplitude distribution per channel over training windows");
    add_data_options(*spectrum, spectrum_o.data, true);
    spectrum->add_option("--T", spectrum_o.T, "window length");
    spectrum->add_option("--L", spectrum_o.L, "horizon, which fixes the training windows");
    spectrum->add_option("--stride", spectrum_o.stride, "use every n-th window");
    spectrum->add_option("--out", spectrum_o.out, "output CSV");
    add_threads(spectrum);

    WeightsOptions weights_o;
    auto* weights = app.add_subcommand("weights", "export learned weights");
    weights->require_subcommand(1);
    auto* weights_export = weights->add_subcommand("export", "write a weight matrix as CSV");
    weights_export->add_option("--checkpoint", weights_o.checkpoint, "model checkpoint")->required();
    weights_export->add_option("--block", weights_o.block, "seasonal | linear")
        ->check(CLI::IsMember({"seasonal", "linear"}));
    weights_export->add_option("--out", weights_o.out, "output CSV");

    InspectOptions inspect_o;
    auto* inspect = app.add_subcommand("data-inspect", "print channel statistics and split ranges");
    add_data_options(*inspect, inspect_o.data, true);
    inspect->add_option("--T", inspect_o.T, "window length");
    inspect->add_option("--L", inspect_o.L, "horizon");

    DescribeOptions describe_o;
    auto* describe = app.add_subcommand("model-describe", "print parameter counts per block");
    add_model_options(*describe, describe_o.model);
    describe->add_option("--D", describe_o.D, "channel count");
    describe->add_option("--checkpoint", describe_o.checkpoint, "describe a saved model instead");
    describe->add_flag("--instantiate", describe_o.instantiate, "build the model and count its tensors");

    SynthOptions synth_o;
    auto* synth = app.add_subcommand("synth", "write a synthetic series CSV");
    synth->add_option("--case", synth_o.which, "1 or 2")->check(CLI::IsMember({1, 2}));
    synth->add_option("--steps", synth_o.steps, "series length");
    synth->add_option("--seed", synth_o.seed, "phase seed");
    synth->add_option("--k", synth_o.k, "case 1 frequency bin at length 336");
    synth->add_option("--out", synth_o.out, "output CSV");

    CLI::App* active = &app;
    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_manifest(std::move(args), common.manifest);
        std::reverse(args.begin(), args.end());
        try {
            app.parse(args);
        } catch (const CLI::CallForHelp&) {
            throw;
        } catch (const CLI::ParseError&) {
            for (auto* sub : app.get_subcommands()) {
                active = sub;
                for (auto* inner : sub->get_subcommands()) {
                    active = inner;
                }
            }
            throw;
        }
        for (auto* sub : app.get_subcommands()) {
            active = sub;
        }
        fbm::kernels::set_threads(common.threads);

        if (train->parsed()) return cmd_train(train_o, common);
        if (eval->parsed()) return cmd_eval(eval_o);
        if (features->parsed()) return cmd_features(features_o);
        if (spectrum->parsed()) return cmd_spectrum(spectrum_o);
        if (weights_export->parsed()) return cmd_weights_export(weights_o);
        if (inspect->parsed()) return cmd_data_inspect(inspect_o);
        if (describe->parsed()) return cmd_model_describe(describe_o);
        if (synth->parsed()) return cmd_synth(synth_o);
        return kConfig;
    } catch (const CLI::CallForHelp&) {
        std::cout << active->help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "fbm: " << e.what() << "\n\n" << active->help();
        return kConfig;
    } catch (const UsageError& e) {
        std::cerr << "fbm: " << e.what() << "\n\n" << active->help();
        return kConfig;
    } catch (const fbm::ConfigError& e) {
        return report_error("configuration error", e, kConfig);
    } catch (const fbm::DimensionError& e) {
        return report_error("configuration error", e, kConfig);
    } catch (const fbm::NumericError& e) {
        return report_error("numeric error", e, kNumeric);
    } catch (const fbm::DataError& e) {
        return report_error("data error", e, kData);
    } catch (const fbm::FormatError& e) {
        return report_error("format error", e, kData);
    } catch (const fs::filesystem_error& e) {
        return report_error("i/o error", e, kData);
    } catch (const std::exception& e) {
        return report_error("error", e, kData);
    }
}
