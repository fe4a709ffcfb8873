/// @file commands.hpp
/// The operations behind every CLI verb and API job. Both front ends pass a JSON config to
/// run_command, so a verb and its API twin write the same bytes.

#ifndef IPDM_COMMANDS_HPP
#define IPDM_COMMANDS_HPP

#include "ipdm/context.hpp"
#include "ipdm/ingest.hpp"
#include "ipdm/model.hpp"
#include "ipdm/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ipdm
{

/// ingest, preprocess, analyze-element, generate, train, train-interventions, verify, validate
const std::vector<std::string>& command_kinds();

struct CommandOutput
{
    std::vector<std::string> artifacts;  ///< file names inside the output directory, sorted
    std::vector<std::string> warnings;
    nlohmann::json summary = nlohmann::json::object();
};

/// Throws invalid_input for unknown kinds, unknown keys or mistyped values.
void validate_command(const std::string& kind, const nlohmann::json& config);

/// Runs `kind` with `config` and writes its artifacts into `out`.
CommandOutput run_command(const std::string& kind, const nlohmann::json& config, const std::filesystem::path& out,
                          const RunContext& ctx = {});

/// A directory holding either a synthetic dataset (observed.csv) or a preprocessed store
/// (index.json).
struct LoadedData
{
    Dataset data;
    std::optional<SyntheticDataset> synthetic;
};
LoadedData load_data_dir(const std::filesystem::path& dir);

/// Default starting parameters for a category of `data`.
ModelParams initial_params(const LoadedData& data, const std::string& category);

struct AnalysisPoint
{
    double year = 0.0;
    std::string kind;  ///< observation, filtered, smoothed, forecast
    double condition = 0.0;  ///< condition units
    double band_low = 0.0;
    double band_high = 0.0;
    std::optional<double> speed;  ///< transformed units / yr
    std::optional<double> speed_sd;
    std::optional<double> acceleration;
    std::optional<double> acceleration_sd;
    std::string inspector;
};

struct ElementAnalysis
{
    std::string element_id;
    int horizon = 0;
    std::vector<AnalysisPoint> points;
};

/// Filtered, smoothed and forecast states of one element with +-2 sd bands in condition units.
/// Observations carry +-2 sigma_v error bars.
ElementAnalysis analyze_element(const ElementSeries& series, const ModelParams& params, int horizon);
std::string analysis_csv(const ElementAnalysis& a);
nlohmann::json analysis_json(const ElementAnalysis& a);

} // namespace ipdm

#endif // IPDM_COMMANDS_HPP
