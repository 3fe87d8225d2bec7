#include "mfx/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "mfx/error.hpp"
#include "mfx/model.hpp"

namespace mfx {

namespace {

// Kept in sync with configs/default.cfg (a unit test compares the two).
constexpr std::string_view kDefaultConfig = R"(# Desk-scale expansion experiment.

[data]
kind = synthetic-blobs
shape = 1x8x8
classes = 10
modes_per_class = 4
spread = 1.5
generator_seed = 2024
train_size = 2000
val_size = 1000

[model]
architecture = C1(8)-MaxPool(2)-F1(64)

[optim]
kind = adamw
lr = 0.001
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
weight_decay = 0.0001
batch_size = 64

[protocol]
experiment_seed = 7
seeds = 0, 1, 2
patience = 5
max_epochs = 200
epochs = 30
layer = 0
factors = 1.25, 1.5, 2, 3, 4
noise = 0
split = equal
preservation_tolerance = 1e-5

[manifold]
q = 0.4
n = 250
metric_batch_size = 128
metric_batch_index = 0
stride = 5
sweep_q = 0.1, 0.2, 0.4
sweep_n = 50, 100, 250
threads = 1

[proxies]
list = all

[output]
dir = out
)";

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

class Reader {
public:
    explicit Reader(const ConfigFile& file) : file_(file) {}

    bool has(std::string_view section, std::string_view key) {
        seen_.emplace(std::string(section), std::string(key));
        return file_.has(section, key);
    }

    std::string text(std::string_view section, std::string_view key, std::string fallback) {
        return has(section, key) ? file_.get(section, key) : fallback;
    }

    double real(std::string_view section, std::string_view key, double fallback) {
        if (!has(section, key)) return fallback;
        return to_real(section, key, file_.get(section, key));
    }

    std::uint64_t integer(std::string_view section, std::string_view key, std::uint64_t fallback) {
        if (!has(section, key)) return fallback;
        return to_integer(section, key, file_.get(section, key));
    }

    std::vector<double> reals(std::string_view section, std::string_view key, std::vector<double> fallback) {
        if (!has(section, key)) return fallback;
        std::vector<double> out;
        for (const auto& item : split_list(file_.get(section, key), ',')) out.push_back(to_real(section, key, item));
        return out;
    }

    std::vector<std::uint64_t> integers(std::string_view section, std::string_view key,
                                        std::vector<std::uint64_t> fallback) {
        if (!has(section, key)) return fallback;
        std::vector<std::uint64_t> out;
        for (const auto& item : split_list(file_.get(section, key), ','))
            out.push_back(to_integer(section, key, item));
        return out;
    }

    // Every key present in the file must have been consumed.
    void reject_unknown() const {
        for (const auto& [section, keys] : file_.sections())
            for (const auto& [key, value] : keys)
                if (!seen_.count({section, key}))
                    throw InvalidArgument("config: unknown key [" + section + "] " + key);
    }

    [[noreturn]] static void bad(std::string_view section, std::string_view key, std::string_view value,
                                 std::string_view expected) {
        throw InvalidArgument("config: [" + std::string(section) + "] " + std::string(key) + " = '" +
                              std::string(value) + "' is not " + std::string(expected));
    }

private:
    static double to_real(std::string_view section, std::string_view key, const std::string& v) {
        double out = 0.0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out))
            bad(section, key, v, "a finite number");
        return out;
    }
    static std::uint64_t to_integer(std::string_view section, std::string_view key, const std::string& v) {
        std::uint64_t out = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || v.empty())
            bad(section, key, v, "a non-negative integer");
        return out;
    }

    const ConfigFile& file_;
    std::set<std::pair<std::string, std::string>> seen_;
};

Shape parse_shape(const std::string& text) {
    Shape out;
    for (const auto& part : split_list(text, 'x')) {
        std::size_t d = 0;
        const auto res = std::from_chars(part.data(), part.data() + part.size(), d);
        if (res.ec != std::errc{} || res.ptr != part.data() + part.size() || d == 0)
            Reader::bad("data", "shape", text, "a shape like 3x32x32");
        out.push_back(d);
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text, std::string_view origin) {
    ConfigFile cfg;
    cfg.origin_ = std::string(origin);
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string raw; std::getline(in, raw);) {
        ++line_no;
        const std::string line = trim(raw);
        auto where = [&] { return std::string(origin) + ":" + std::to_string(line_no) + ": "; };
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw InvalidArgument(where() + "unterminated section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (section.empty()) throw InvalidArgument(where() + "empty section name");
            cfg.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument(where() + "expected 'key = value'");
        std::string key = trim(std::string_view(line).substr(0, eq));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw InvalidArgument(where() + "missing key");
        auto& keys = cfg.sections_[section];
        if (keys.count(key)) throw InvalidArgument(where() + "duplicate key '" + key + "'");
        keys.emplace(std::move(key), std::move(value));
    }
    return cfg;
}

bool ConfigFile::has(std::string_view section, std::string_view key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.find(key) != s->second.end();
}

const std::string& ConfigFile::get(std::string_view section, std::string_view key) const {
    auto s = sections_.find(section);
    if (s != sections_.end()) {
        auto k = s->second.find(key);
        if (k != s->second.end()) return k->second;
    }
    throw InvalidArgument(origin_ + ": missing key [" + std::string(section) + "] " + std::string(key));
}

void ConfigFile::set(const std::string& section, const std::string& key, std::string value) {
    sections_[section][key] = std::move(value);
}

std::string_view builtin_config(std::string_view name) {
    if (name == "default") return kDefaultConfig;
    return {};
}

ExperimentConfig to_experiment_config(const ConfigFile& file) {
    Reader r(file);
    ExperimentConfig c;

    const std::string kind = r.text("data", "kind", "synthetic-blobs");
    if (kind == "synthetic-blobs") {
        c.data.kind = DatasetKind::SyntheticBlobs;
    } else if (kind == "cifar-binary") {
        c.data.kind = DatasetKind::CifarBinary;
        c.data.shape = {3, 32, 32};
    } else {
        Reader::bad("data", "kind", kind, "cifar-binary or synthetic-blobs");
    }
    if (r.has("data", "paths"))
        for (const auto& p : split_list(file.get("data", "paths"), ','))
            if (!p.empty()) c.data.paths.emplace_back(p);
    c.data.label_bytes = r.integer("data", "label_bytes", c.data.label_bytes);
    if (r.has("data", "shape")) c.data.shape = parse_shape(file.get("data", "shape"));
    c.data.num_classes = r.integer("data", "classes", c.data.num_classes);
    c.data.modes_per_class = r.integer("data", "modes_per_class", c.data.modes_per_class);
    c.data.spread = r.real("data", "spread", c.data.spread);
    c.data.generator_seed = r.integer("data", "generator_seed", c.data.generator_seed);
    c.data.train_size = r.integer("data", "train_size", c.data.train_size);
    c.data.val_size = r.integer("data", "val_size", c.data.val_size);

    c.architecture = r.text("model", "architecture", c.architecture);

    if (r.has("optim", "kind")) c.optimizer.kind = parse_optimizer_kind(file.get("optim", "kind"));
    c.optimizer.learning_rate = r.real("optim", "lr", c.optimizer.learning_rate);
    c.optimizer.beta1 = r.real("optim", "beta1", c.optimizer.beta1);
    c.optimizer.beta2 = r.real("optim", "beta2", c.optimizer.beta2);
    c.optimizer.epsilon = r.real("optim", "eps", c.optimizer.epsilon);
    c.optimizer.weight_decay = r.real("optim", "weight_decay", c.optimizer.weight_decay);
    c.batch_size = r.integer("optim", "batch_size", c.batch_size);

    c.experiment_seed = r.integer("protocol", "experiment_seed", c.experiment_seed);
    c.seeds = r.integers("protocol", "seeds", c.seeds);
    c.patience = r.integer("protocol", "patience", c.patience);
    c.max_epochs = r.integer("protocol", "max_epochs", c.max_epochs);
    c.epochs = r.integer("protocol", "epochs", c.epochs);
    c.layer = r.integer("protocol", "layer", c.layer);
    c.factors = r.reals("protocol", "factors", c.factors);
    c.noise = r.real("protocol", "noise", c.noise);
    if (r.has("protocol", "split")) c.split = parse_outgoing_split(file.get("protocol", "split"));
    c.preservation_tolerance = r.real("protocol", "preservation_tolerance", c.preservation_tolerance);

    c.q = r.real("manifold", "q", c.q);
    c.n = r.integer("manifold", "n", c.n);
    c.metric_batch_size = r.integer("manifold", "metric_batch_size", c.metric_batch_size);
    c.metric_batch_index = r.integer("manifold", "metric_batch_index", c.metric_batch_index);
    c.metric_stride = r.integer("manifold", "stride", c.metric_stride);
    c.sweep_q = r.reals("manifold", "sweep_q", c.sweep_q);
    {
        const auto ns = r.integers("manifold", "sweep_n", {});
        if (!ns.empty()) c.sweep_n.assign(ns.begin(), ns.end());
    }
    c.threads = static_cast<unsigned>(r.integer("manifold", "threads", c.threads));

    if (r.has("proxies", "list")) c.proxies = parse_proxy_list(file.get("proxies", "list"));
    c.out_dir = r.text("output", "dir", c.out_dir.string());

    r.reject_unknown();
    validate(c);
    return c;
}

void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& what) { throw InvalidArgument("config: " + what); };
    if (c.data.kind == DatasetKind::CifarBinary && c.data.paths.empty()) fail("[data] paths is required for cifar-binary");
    if (c.data.num_classes < 2) fail("[data] classes must be at least 2");
    if (c.batch_size == 0) fail("[optim] batch_size must be positive");
    if (!(c.optimizer.learning_rate > 0.0)) fail("[optim] lr must be positive");
    if (c.seeds.empty()) fail("[protocol] seeds must not be empty");
    if (c.epochs < 1) fail("[protocol] epochs (T) must be at least 1");
    if (c.max_epochs < 1) fail("[protocol] max_epochs must be at least 1");
    if (c.factors.empty()) fail("[protocol] factors must not be empty");
    for (double f : c.factors)
        if (!(f > 1.0)) fail("[protocol] factors must all exceed 1");
    if (!(c.noise >= 0.0)) fail("[protocol] noise must be non-negative");
    if (c.noise > 0.0 && c.split == OutgoingSplit::Equal)
        fail("[protocol] noise > 0 with split = equal is not function-preserving");
    if (!(c.q > 0.0 && c.q < 1.0)) fail("[manifold] q must lie in (0, 1)");
    for (double q : c.sweep_q)
        if (!(q > 0.0 && q < 1.0)) fail("[manifold] sweep_q values must lie in (0, 1)");
    if (c.n < 1) fail("[manifold] n must be positive");
    for (auto n : c.sweep_n)
        if (n < 1) fail("[manifold] sweep_n values must be positive");
    if (c.metric_batch_size < 1) fail("[manifold] metric_batch_size must be positive");
    if ((c.metric_batch_index + 1) * c.metric_batch_size > c.data.train_size)
        fail("[manifold] metric batch lies outside the training set");

    // The widened layer must exist and must not be the classifier.
    const Model model = compile(parse_architecture(c.architecture, c.data.shape, c.data.num_classes));
    if (c.layer + 1 >= model.param_layers().size())
        fail("[protocol] layer " + std::to_string(c.layer) + " is not a hidden parameterized layer of " +
             c.architecture);
}

ExperimentConfig parse_experiment_config(std::string_view text, std::string_view origin) {
    return to_experiment_config(ConfigFile::parse(text, origin));
}

ConfigFile load_config_file(const std::string& name_or_path) {
    const std::filesystem::path p(name_or_path);
    if (std::filesystem::is_regular_file(p)) return ConfigFile::parse(read_file(p), name_or_path);
    const auto builtin = builtin_config(name_or_path);
    if (!builtin.empty()) return ConfigFile::parse(builtin, name_or_path);
    throw Error("config '" + name_or_path + "' is neither a readable file nor a built-in config name");
}

ExperimentConfig load_experiment_config(const std::string& name_or_path) {
    return to_experiment_config(load_config_file(name_or_path));
}

}  // namespace mfx
