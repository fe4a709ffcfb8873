/// @file dataset.hpp
/// Element-level inspection series, the unit every estimator consumes.

#ifndef IPDM_DATASET_HPP
#define IPDM_DATASET_HPP

#include <optional>
#include <string>
#include <vector>

namespace ipdm
{

struct Inspection
{
    double year = 0.0;
    std::optional<double> condition;  ///< empty when the rating is missing
    std::string inspector;            ///< empty when unknown
    bool out_of_scale = false;        ///< rating outside the condition scale at ingest
};

struct ElementSeries
{
    std::string id;
    std::string category = "default";
    std::vector<Inspection> inspections;  ///< time sorted
    std::vector<double> attributes;       ///< raw structural attributes (may be empty)
};

struct Dataset
{
    std::vector<ElementSeries> elements;
    std::vector<std::string> attribute_names;
    /// Kernel group of every attribute dimension (one-hot columns share a group); empty means
    /// one group per dimension.
    std::vector<int> attribute_groups;

    std::size_t size() const { return elements.size(); }
    bool empty() const { return elements.empty(); }
    std::size_t inspection_count() const;
};

} // namespace ipdm

#endif // IPDM_DATASET_HPP
