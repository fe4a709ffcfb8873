/// @file synth.hpp
/// Synthetic inspection datasets with known ground truth.

#ifndef IPDM_SYNTH_HPP
#define IPDM_SYNTH_HPP

#include "ipdm/context.hpp"
#include "ipdm/dataset.hpp"
#include "ipdm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ipdm
{

/// Deterministic state jump injected into one generated series.
struct SyntheticJump
{
    std::size_t series = 0;
    int year = 0;
    Vec3 delta = Vec3::Zero();
};

struct SynthConfig
{
    int time_span = 60;
    int series = 20000;
    int inspectors = 223;
    Range sigma_v{1.0, 6.0};
    Range mu_v{0.0, 0.0};
    double transform_n = 4.0;
    double sigma_w = 0.002;
    ConditionScale scale;
    Range initial_condition{75.0, 100.0};  ///< condition units
    Range initial_speed{-1.5, -0.1};       ///< transformed units / yr
    Range initial_accel{0.0, 0.0};         ///< transformed units / yr^2
    int interval_min = 1;
    int interval_max = 5;
    int offset_max = 3;
    double monotone_tolerance = 0.1;
    std::uint64_t seed = 0;
    std::vector<SyntheticJump> jumps;

    void validate() const;
};

/// Parses `key=value` text (see configs/full.cfg for the keys).
SynthConfig synth_config_from_text(const std::string& text, const std::string& source = "config");
SynthConfig load_synth_config(const std::filesystem::path& path);

struct SyntheticObservation
{
    int year = 0;
    double condition = 0.0;
    std::string inspector;
};

struct SyntheticSeries
{
    std::string id;
    /// True state at years 0..time_span (transformed units).
    std::vector<Vec3> true_states;
    std::vector<SyntheticObservation> observations;
};

struct SyntheticDataset
{
    SynthConfig config;
    std::vector<InspectorModel> inspectors;
    std::vector<SyntheticSeries> series;
    long long attempts = 0;
    long long rejected = 0;
    /// False after importing a directory without true_states.csv; such data is usable for
    /// training only.
    bool has_true_states = true;

    std::map<std::string, InspectorModel> inspector_truth() const;
    std::size_t observation_count() const;
};

SyntheticDataset generate(const SynthConfig& cfg, const RunContext& ctx = {});

/// Writes generated_meta.csv, true_states.csv, observed.csv, inspector_ids.csv and
/// true_inspectors.csv into `dir`.
void export_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir);
SyntheticDataset import_dataset(const std::filesystem::path& dir);

/// Training view: one ElementSeries per synthetic series.
Dataset to_dataset(const SyntheticDataset& ds, const std::string& category = "synthetic");

/// Ground-truth parameters in the form the estimators produce.
ModelParams truth_params(const SyntheticDataset& ds);

inline const std::vector<std::string>& synth_artifact_names()
{
    static const std::vector<std::string> names{"generated_meta.csv", "true_states.csv", "observed.csv",
                                                "inspector_ids.csv", "true_inspectors.csv"};
    return names;
}

} // namespace ipdm

#endif // IPDM_SYNTH_HPP
