#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mfx/dataset.hpp"
#include "mfx/expand.hpp"
#include "mfx/optimizer.hpp"
#include "mfx/proxies.hpp"

namespace mfx {

// Raw parsed file: section -> key -> value. Grammar, one item per line:
//
//   # comment            (also ';')
//   [section]
//   key = value          (whitespace around key and value is trimmed)
//
// Keys before the first section header belong to section "". A repeated key
// within a section is an error.
class ConfigFile {
public:
    static ConfigFile parse(std::string_view text, std::string_view origin = "<config>");

    bool has(std::string_view section, std::string_view key) const;
    const std::string& get(std::string_view section, std::string_view key) const;
    const std::map<std::string, std::map<std::string, std::string, std::less<>>, std::less<>>& sections() const {
        return sections_;
    }
    // Sets or replaces a value (used for command-line overrides).
    void set(const std::string& section, const std::string& key, std::string value);

private:
    std::string origin_;
    std::map<std::string, std::map<std::string, std::string, std::less<>>, std::less<>> sections_;
};

struct ExperimentConfig {
    DatasetSource data;
    std::string architecture = "C1(8)-MaxPool(2)-F1(64)";

    OptimizerSettings optimizer;
    std::size_t batch_size = 512;

    std::uint64_t experiment_seed = 7;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t patience = 5;
    std::size_t max_epochs = 200;
    std::size_t epochs = 30;  // T, post-expansion epochs
    std::size_t layer = 0;    // ordinal of the parameterized layer that is widened
    std::vector<double> factors{1.25, 1.5, 2.0, 3.0, 4.0};
    double noise = 0.0;
    OutgoingSplit split = OutgoingSplit::Equal;
    double preservation_tolerance = 1e-5;

    double q = 0.4;
    std::size_t n = 1000;
    std::size_t metric_batch_size = 512;
    std::size_t metric_batch_index = 0;
    std::size_t metric_stride = 5;  // 0 disables M_t tracking after t = 0
    std::vector<double> sweep_q{0.1, 0.2, 0.4};
    std::vector<std::size_t> sweep_n{100, 250, 500, 1000};
    unsigned threads = 1;

    std::vector<ProxyKind> proxies{std::begin(kZeroCostProxies), std::end(kZeroCostProxies)};

    std::filesystem::path out_dir = "out";
};

// Throws InvalidArgument naming the section/key on unknown keys, malformed
// values or violated invariants.
ExperimentConfig to_experiment_config(const ConfigFile& file);
ExperimentConfig parse_experiment_config(std::string_view text, std::string_view origin = "<config>");

// `name_or_path` is either a readable file or the name of a built-in config
// ("default").
ExperimentConfig load_experiment_config(const std::string& name_or_path);
ConfigFile load_config_file(const std::string& name_or_path);

std::string_view builtin_config(std::string_view name);  // empty if unknown

void validate(const ExperimentConfig& config);

}  // namespace mfx
