/// @file ingest.hpp
/// Real inspection databases: CSV ingestion into a bridge -> category -> element hierarchy,
/// per-bridge persistence and navigation.

#ifndef IPDM_INGEST_HPP
#define IPDM_INGEST_HPP

#include "ipdm/dataset.hpp"
#include "ipdm/domain.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ipdm
{

/// Column names (as they appear in the CSV header) for each role.
struct ColumnMapping
{
    std::string condition;
    std::string inspector;
    std::string year;
    std::string structure;
    std::optional<std::string> category;
    std::optional<std::string> element;
    std::optional<std::string> material;
    std::optional<std::string> age;
    std::vector<std::string> attributes;

    /// `role=column` lines; `attributes` takes a comma separated list.
    static ColumnMapping from_text(const std::string& text, const std::string& source = "mapping");
    static ColumnMapping load(const std::filesystem::path& path);
    void validate() const;
};

struct ElementRecord
{
    std::string id;
    std::vector<Inspection> inspections;  ///< sorted by year (stable)
    std::vector<std::optional<double>> attributes;  ///< mapped attribute columns, first inspection
    std::optional<std::string> material;
    std::optional<double> age;  ///< structure age at the first inspection
};

struct CategoryNode
{
    std::map<std::string, ElementRecord> elements;
};

struct BridgeNode
{
    std::map<std::string, CategoryNode> categories;

    std::size_t element_count() const;
    std::size_t inspection_count() const;
};

struct NetworkStore
{
    std::map<std::string, BridgeNode> bridges;
    std::vector<std::string> attribute_names;
    std::set<std::string> inspectors;

    std::size_t element_count() const;
    std::size_t inspection_count() const;
};

struct IngestSummary
{
    std::size_t rows = 0;      ///< data rows read
    std::size_t stored = 0;    ///< rows kept
    std::size_t missing = 0;   ///< kept with an empty condition
    std::size_t flagged = 0;   ///< kept with a condition outside the scale
    std::size_t skipped = 0;   ///< unparseable rows
    std::vector<std::string> messages;  ///< one per skipped row, with its line number
};

struct IngestResult
{
    NetworkStore store;
    IngestSummary summary;
};

IngestResult read_csv(const std::filesystem::path& path, const ColumnMapping& mapping,
                      const ConditionScale& scale = {});

/// Inspector id given to rows with an empty inspector column (uses the registry fallback sigma).
inline constexpr const char* kUnknownInspector = "unknown";

/// Separator of the composite element id `bridge~category~element`.
inline constexpr char kIdSeparator = '~';
std::string element_key(const std::string& bridge, const std::string& category, const std::string& element);

/// Writes index.json plus one bridge_NNNN.json per bridge into `dir`.
void preprocess(const NetworkStore& store, const std::filesystem::path& dir);

struct StoreIndexEntry
{
    std::string id;
    std::string file;
    std::size_t categories = 0;
    std::size_t elements = 0;
    std::size_t inspections = 0;
};

struct StoreIndex
{
    std::vector<StoreIndexEntry> bridges;
    std::vector<std::string> attribute_names;
    std::vector<std::string> inspectors;
};

StoreIndex load_index(const std::filesystem::path& dir);
/// Reads only the artifact of `bridge`.
BridgeNode load_bridge(const std::filesystem::path& dir, const std::string& bridge);
NetworkStore load_store(const std::filesystem::path& dir);

std::string bridge_to_json(const std::string& id, const BridgeNode& bridge);
BridgeNode bridge_from_json(const std::string& text, const std::string& source, std::string* id = nullptr);

struct Listing
{
    std::string level;  ///< "bridges", "categories" or "elements"
    std::vector<std::pair<std::string, std::size_t>> children;  ///< id + element or inspection count
};

/// path = {} -> bridges, {b} -> categories, {b, s} -> elements.
Listing navigate(const NetworkStore& store, const std::vector<std::string>& path);

/// Element series ready for the filter; throws not-found naming the missing level.
ElementSeries element_series(const NetworkStore& store, const std::string& bridge, const std::string& category,
                             const std::string& element);
/// Same, for a composite `bridge~category~element` id.
ElementSeries element_series(const NetworkStore& store, const std::string& key);

/// Finds the element when only bridge and element are known (searches categories in order).
ElementSeries find_element(const NetworkStore& store, const std::string& bridge, const std::string& element);

/// Flattens the store into a training dataset. Numeric attributes (age, mapped attributes) and a
/// one-hot material encoding form the kernel attribute vector; elements with a missing numeric
/// attribute get no attributes.
Dataset store_to_dataset(const NetworkStore& store);

std::string summary_to_text(const IngestSummary& s);

} // namespace ipdm

#endif // IPDM_INGEST_HPP
