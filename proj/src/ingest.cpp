#include "ipdm/ingest.hpp"

#include "ipdm/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ipdm
{

using nlohmann::json;

namespace
{

constexpr int kStoreVersion = 1;

std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');)
    {
        item = trim(item);
        if (!item.empty())
            out.push_back(item);
    }
    return out;
}

} // namespace

ColumnMapping ColumnMapping::from_text(const std::string& text, const std::string& source)
{
    ColumnMapping m;
    for (const auto& [key, value] : parse_key_values(text, source))
    {
        if (key == "condition")
            m.condition = value;
        else if (key == "inspector")
            m.inspector = value;
        else if (key == "year")
            m.year = value;
        else if (key == "structure")
            m.structure = value;
        else if (key == "category")
            m.category = value;
        else if (key == "element")
            m.element = value;
        else if (key == "material")
            m.material = value;
        else if (key == "age")
            m.age = value;
        else if (key == "attributes")
            m.attributes = split_list(value);
        else
            throw Error(ErrorKind::schema, source + ": unknown mapping role '" + key + "'");
    }
    m.validate();
    return m;
}

ColumnMapping ColumnMapping::load(const std::filesystem::path& path)
{
    return from_text(read_file(path), path.string());
}

void ColumnMapping::validate() const
{
    const std::pair<const char*, const std::string*> required[] = {
        {"condition", &condition}, {"inspector", &inspector}, {"year", &year}, {"structure", &structure}};
    for (const auto& [role, column] : required)
        if (column->empty())
            throw Error(ErrorKind::invalid_input, std::string("column mapping is missing the mandatory role '") + role + "'");
}

std::size_t BridgeNode::element_count() const
{
    std::size_t n = 0;
    for (const auto& [id, c] : categories)
        n += c.elements.size();
    return n;
}

std::size_t BridgeNode::inspection_count() const
{
    std::size_t n = 0;
    for (const auto& [id, c] : categories)
        for (const auto& [eid, e] : c.elements)
            n += e.inspections.size();
    return n;
}

std::size_t NetworkStore::element_count() const
{
    std::size_t n = 0;
    for (const auto& [id, b] : bridges)
        n += b.element_count();
    return n;
}

std::size_t NetworkStore::inspection_count() const
{
    std::size_t n = 0;
    for (const auto& [id, b] : bridges)
        n += b.inspection_count();
    return n;
}

std::string element_key(const std::string& bridge, const std::string& category, const std::string& element)
{
    return bridge + kIdSeparator + category + kIdSeparator + element;
}

IngestResult read_csv(const std::filesystem::path& path, const ColumnMapping& mapping, const ConditionScale& scale)
{
    mapping.validate();
    scale.validate();
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::io, "cannot open " + path.string());

    IngestResult result;
    IngestSummary& summary = result.summary;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line))
        return result;
    ++line_no;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        line.erase(0, 3);
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header)
        h = trim(h);

    auto column = [&](const std::string& name, const char* role) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw Error(ErrorKind::schema, path.string() + ": column '" + name + "' mapped to role '" + role +
                                               "' is not in the header");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_cond = column(mapping.condition, "condition");
    const std::size_t c_insp = column(mapping.inspector, "inspector");
    const std::size_t c_year = column(mapping.year, "year");
    const std::size_t c_struct = column(mapping.structure, "structure");
    std::optional<std::size_t> c_cat, c_elem, c_mat, c_age;
    if (mapping.category)
        c_cat = column(*mapping.category, "category");
    if (mapping.element)
        c_elem = column(*mapping.element, "element");
    if (mapping.material)
        c_mat = column(*mapping.material, "material");
    if (mapping.age)
        c_age = column(*mapping.age, "age");
    std::vector<std::size_t> c_attr;
    for (const auto& a : mapping.attributes)
        c_attr.push_back(column(a, "attributes"));
    result.store.attribute_names = mapping.attributes;

    struct Pending
    {
        Inspection inspection;
        std::vector<std::optional<double>> attributes;
        std::optional<std::string> material;
        std::optional<double> age;
    };
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<Pending>>>> rows;

    auto skip = [&](const std::string& why) {
        ++summary.skipped;
        summary.messages.push_back(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };

    while (std::getline(in, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (trim(line).empty())
            continue;
        ++summary.rows;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != header.size())
        {
            skip("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
            continue;
        }
        const std::string year_text = trim(f[c_year]);
        const auto year = parse_int(year_text);
        if (!year || year_text.size() != 4 || *year < 1000)
        {
            skip("year '" + year_text + "' is not a 4-digit integer");
            continue;
        }
        const std::string structure = trim(f[c_struct]);
        if (structure.empty())
        {
            skip("empty structure id");
            continue;
        }
        Pending p;
        p.inspection.year = static_cast<double>(*year);
        p.inspection.inspector = trim(f[c_insp]);
        if (p.inspection.inspector.empty())
            p.inspection.inspector = kUnknownInspector;
        const std::string cond_text = trim(f[c_cond]);
        if (!cond_text.empty())
        {
            const auto cond = parse_double(cond_text);
            if (!cond || !std::isfinite(*cond))
            {
                skip("condition '" + cond_text + "' is not a number");
                continue;
            }
            p.inspection.condition = *cond;
            p.inspection.out_of_scale = *cond < scale.lower || *cond > scale.upper;
        }
        bool bad = false;
        for (std::size_t k = 0; k < c_attr.size() && !bad; ++k)
        {
            const std::string t = trim(f[c_attr[k]]);
            if (t.empty())
            {
                p.attributes.push_back(std::nullopt);
                continue;
            }
            const auto v = parse_double(t);
            if (!v || !std::isfinite(*v))
            {
                skip("attribute '" + mapping.attributes[k] + "' value '" + t + "' is not a number");
                bad = true;
            }
            else
                p.attributes.push_back(*v);
        }
        if (bad)
            continue;
        if (c_age)
        {
            const std::string t = trim(f[*c_age]);
            if (!t.empty())
            {
                const auto v = parse_double(t);
                if (!v || !std::isfinite(*v))
                {
                    skip("age '" + t + "' is not a number");
                    continue;
                }
                p.age = *v;
            }
        }
        if (c_mat)
        {
            const std::string t = trim(f[*c_mat]);
            if (!t.empty())
                p.material = t;
        }
        std::string category = c_cat ? trim(f[*c_cat]) : std::string();
        if (category.empty())
            category = "default";
        std::string element = c_elem ? trim(f[*c_elem]) : std::string();
        if (element.empty())
            element = "1";

        if (!p.inspection.condition)
            ++summary.missing;
        else if (p.inspection.out_of_scale)
            ++summary.flagged;
        ++summary.stored;
        result.store.inspectors.insert(p.inspection.inspector);
        rows[structure][category][element].push_back(std::move(p));
    }

    for (auto& [bid, cats] : rows)
        for (auto& [cid, elems] : cats)
            for (auto& [eid, list] : elems)
            {
                std::stable_sort(list.begin(), list.end(),
                                 [](const Pending& a, const Pending& b) { return a.inspection.year < b.inspection.year; });
                ElementRecord rec;
                rec.id = eid;
                rec.attributes = list.front().attributes;
                rec.material = list.front().material;
                rec.age = list.front().age;
                for (auto& p : list)
                    rec.inspections.push_back(std::move(p.inspection));
                result.store.bridges[bid].categories[cid].elements.emplace(eid, std::move(rec));
            }
    return result;
}

// ---------------------------------------------------------------------------------------------

std::string bridge_to_json(const std::string& id, const BridgeNode& bridge)
{
    json cats = json::array();
    for (const auto& [cid, cat] : bridge.categories)
    {
        json elems = json::array();
        for (const auto& [eid, e] : cat.elements)
        {
            json ins = json::array();
            for (const auto& i : e.inspections)
                ins.push_back(json::array({i.year, i.condition ? json(*i.condition) : json(nullptr), i.inspector,
                                           i.out_of_scale}));
            json attrs = json::array();
            for (const auto& a : e.attributes)
                attrs.push_back(a ? json(*a) : json(nullptr));
            elems.push_back({{"id", eid},
                             {"material", e.material ? json(*e.material) : json(nullptr)},
                             {"age", e.age ? json(*e.age) : json(nullptr)},
                             {"attributes", attrs},
                             {"inspections", ins}});
        }
        cats.push_back({{"id", cid}, {"elements", elems}});
    }
    json j{{"format", "ipdm-store-bridge"}, {"version", kStoreVersion}, {"id", id}, {"categories", cats}};
    return j.dump(1) + "\n";
}

BridgeNode bridge_from_json(const std::string& text, const std::string& source, std::string* id)
{
    try
    {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "ipdm-store-bridge" || j.at("version").get<int>() != kStoreVersion)
            throw Error(ErrorKind::schema, source + ": not a version " + std::to_string(kStoreVersion) + " bridge artifact");
        if (id)
            *id = j.at("id").get<std::string>();
        BridgeNode b;
        for (const auto& c : j.at("categories"))
        {
            CategoryNode& cat = b.categories[c.at("id").get<std::string>()];
            for (const auto& e : c.at("elements"))
            {
                ElementRecord rec;
                rec.id = e.at("id").get<std::string>();
                if (!e.at("material").is_null())
                    rec.material = e.at("material").get<std::string>();
                if (!e.at("age").is_null())
                    rec.age = e.at("age").get<double>();
                for (const auto& a : e.at("attributes"))
                    rec.attributes.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
                for (const auto& i : e.at("inspections"))
                {
                    Inspection ins;
                    ins.year = i.at(0).get<double>();
                    if (!i.at(1).is_null())
                        ins.condition = i.at(1).get<double>();
                    ins.inspector = i.at(2).get<std::string>();
                    ins.out_of_scale = i.at(3).get<bool>();
                    rec.inspections.push_back(std::move(ins));
                }
                cat.elements.emplace(rec.id, std::move(rec));
            }
        }
        return b;
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorKind::schema, source + ": " + e.what());
    }
}

void preprocess(const NetworkStore& store, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    json bridges = json::array();
    std::size_t k = 0;
    for (const auto& [id, b] : store.bridges)
    {
        char name[32];
        std::snprintf(name, sizeof name, "bridge_%06zu.json", k++);
        write_file_atomic(dir / name, bridge_to_json(id, b));
        bridges.push_back({{"id", id},
                           {"file", name},
                           {"categories", b.categories.size()},
                           {"elements", b.element_count()},
                           {"inspections", b.inspection_count()}});
    }
    json index{{"format", "ipdm-store-index"},
               {"version", kStoreVersion},
               {"attribute_names", store.attribute_names},
               {"inspectors", std::vector<std::string>(store.inspectors.begin(), store.inspectors.end())},
               {"bridges", bridges}};
    write_file_atomic(dir / "index.json", index.dump(1) + "\n");
}

StoreIndex load_index(const std::filesystem::path& dir)
{
    const auto path = dir / "index.json";
    try
    {
        const json j = json::parse(read_file(path));
        if (j.at("format").get<std::string>() != "ipdm-store-index" || j.at("version").get<int>() != kStoreVersion)
            throw Error(ErrorKind::schema, path.string() + ": not a version " + std::to_string(kStoreVersion) + " store index");
        StoreIndex idx;
        idx.attribute_names = j.at("attribute_names").get<std::vector<std::string>>();
        idx.inspectors = j.at("inspectors").get<std::vector<std::string>>();
        for (const auto& b : j.at("bridges"))
            idx.bridges.push_back({b.at("id").get<std::string>(), b.at("file").get<std::string>(),
                                   b.at("categories").get<std::size_t>(), b.at("elements").get<std::size_t>(),
                                   b.at("inspections").get<std::size_t>()});
        return idx;
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorKind::schema, path.string() + ": " + e.what());
    }
}

BridgeNode load_bridge(const std::filesystem::path& dir, const std::string& bridge)
{
    const StoreIndex idx = load_index(dir);
    for (const auto& b : idx.bridges)
        if (b.id == bridge)
        {
            const auto path = dir / b.file;
            return bridge_from_json(read_file(path), path.string());
        }
    throw Error(ErrorKind::not_found, "bridge '" + bridge + "' not found");
}

NetworkStore load_store(const std::filesystem::path& dir)
{
    const StoreIndex idx = load_index(dir);
    NetworkStore store;
    store.attribute_names = idx.attribute_names;
    store.inspectors.insert(idx.inspectors.begin(), idx.inspectors.end());
    for (const auto& b : idx.bridges)
    {
        const auto path = dir / b.file;
        store.bridges.emplace(b.id, bridge_from_json(read_file(path), path.string()));
    }
    return store;
}

// ---------------------------------------------------------------------------------------------

Listing navigate(const NetworkStore& store, const std::vector<std::string>& path)
{
    Listing out;
    if (path.empty())
    {
        out.level = "bridges";
        for (const auto& [id, b] : store.bridges)
            out.children.emplace_back(id, b.element_count());
        return out;
    }
    const auto b = store.bridges.find(path[0]);
    if (b == store.bridges.end())
        throw Error(ErrorKind::not_found, "bridge '" + path[0] + "' not found");
    if (path.size() == 1)
    {
        out.level = "categories";
        for (const auto& [id, c] : b->second.categories)
            out.children.emplace_back(id, c.elements.size());
        return out;
    }
    const auto c = b->second.categories.find(path[1]);
    if (c == b->second.categories.end())
        throw Error(ErrorKind::not_found, "category '" + path[1] + "' not found");
    if (path.size() == 2)
    {
        out.level = "elements";
        for (const auto& [id, e] : c->second.elements)
            out.children.emplace_back(id, e.inspections.size());
        return out;
    }
    throw Error(ErrorKind::invalid_input, "navigation path has too many components");
}

namespace
{

ElementSeries to_series(const std::string& bridge, const std::string& category, const ElementRecord& rec)
{
    ElementSeries s;
    s.id = element_key(bridge, category, rec.id);
    s.category = category;
    s.inspections = rec.inspections;
    return s;
}

} // namespace

ElementSeries element_series(const NetworkStore& store, const std::string& bridge, const std::string& category,
                             const std::string& element)
{
    navigate(store, {bridge, category});
    const auto& cat = store.bridges.at(bridge).categories.at(category);
    const auto e = cat.elements.find(element);
    if (e == cat.elements.end())
        throw Error(ErrorKind::not_found, "element '" + element + "' not found");
    return to_series(bridge, category, e->second);
}

ElementSeries element_series(const NetworkStore& store, const std::string& key)
{
    const auto a = key.find(kIdSeparator);
    const auto b = a == std::string::npos ? a : key.find(kIdSeparator, a + 1);
    if (b == std::string::npos)
        throw Error(ErrorKind::not_found, "element '" + key + "' not found");
    try
    {
        return element_series(store, key.substr(0, a), key.substr(a + 1, b - a - 1), key.substr(b + 1));
    }
    catch (const Error& e)
    {
        // the caller asked for an element; report it at that level and keep the detail
        if (e.kind() != ErrorKind::not_found || std::string_view(e.what()).starts_with("element"))
            throw;
        throw Error(ErrorKind::not_found, "element '" + key + "' not found (" + e.what() + ")");
    }
}

ElementSeries find_element(const NetworkStore& store, const std::string& bridge, const std::string& element)
{
    navigate(store, {bridge});
    for (const auto& [cid, cat] : store.bridges.at(bridge).categories)
        if (auto e = cat.elements.find(element); e != cat.elements.end())
            return to_series(bridge, cid, e->second);
    throw Error(ErrorKind::not_found, "element '" + element + "' not found");
}

Dataset store_to_dataset(const NetworkStore& store)
{
    std::set<std::string> materials;
    bool has_age = false;
    for (const auto& [bid, b] : store.bridges)
        for (const auto& [cid, c] : b.categories)
            for (const auto& [eid, e] : c.elements)
            {
                if (e.material)
                    materials.insert(*e.material);
                has_age = has_age || e.age.has_value();
            }

    Dataset out;
    int group = 0;
    if (has_age)
    {
        out.attribute_names.push_back("age");
        out.attribute_groups.push_back(group++);
    }
    for (const auto& a : store.attribute_names)
    {
        out.attribute_names.push_back(a);
        out.attribute_groups.push_back(group++);
    }
    for (const auto& m : materials)
    {
        out.attribute_names.push_back("material=" + m);
        out.attribute_groups.push_back(group);
    }

    for (const auto& [bid, b] : store.bridges)
        for (const auto& [cid, c] : b.categories)
            for (const auto& [eid, e] : c.elements)
            {
                ElementSeries s = to_series(bid, cid, e);
                std::vector<double> attrs;
                bool complete = true;
                if (has_age)
                {
                    complete = complete && e.age.has_value();
                    attrs.push_back(e.age.value_or(0.0));
                }
                for (const auto& a : e.attributes)
                {
                    complete = complete && a.has_value();
                    attrs.push_back(a.value_or(0.0));
                }
                for (const auto& m : materials)
                    attrs.push_back(e.material && *e.material == m ? 1.0 : 0.0);
                if (complete && !attrs.empty())
                    s.attributes = std::move(attrs);
                out.elements.push_back(std::move(s));
            }
    return out;
}

std::string summary_to_text(const IngestSummary& s)
{
    std::ostringstream os;
    os << "rows=" << s.rows << "\nstored=" << s.stored << "\nmissing=" << s.missing << "\nflagged=" << s.flagged
       << "\nskipped=" << s.skipped << "\n";
    for (const auto& m : s.messages)
        os << "# " << m << "\n";
    return os.str();
}

} // namespace ipdm
