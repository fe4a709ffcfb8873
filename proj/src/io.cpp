#include "ipdm/io.hpp"

#include "ipdm/domain.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace ipdm
{

std::string format_double(double v)
{
    if (v == 0.0)
        return "0";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view text)
{
    const std::string t = trim(text);
    if (t.empty())
        return std::nullopt;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (*first == '+')
        ++first;
    double v = 0.0;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last)
        return std::nullopt;
    return v;
}

std::optional<long long> parse_int(std::string_view text)
{
    const std::string t = trim(text);
    if (t.empty())
        return std::nullopt;
    long long v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
        return std::nullopt;
    return v;
}

std::string trim(std::string_view text)
{
    const auto ws = " \t\r\n";
    const auto b = text.find_first_not_of(ws);
    if (b == std::string_view::npos)
        return {};
    const auto e = text.find_last_not_of(ws);
    return std::string(text.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(std::string_view line, char sep)
{
    if (!line.empty() && line.back() == '\r')
        line.remove_suffix(1);
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i)
    {
        const char c = line[i];
        if (quoted)
        {
            if (c == '"')
            {
                if (i + 1 < line.size() && line[i + 1] == '"')
                {
                    cur += '"';
                    ++i;
                }
                else
                    quoted = false;
            }
            else
                cur += c;
        }
        else if (c == '"')
            quoted = true;
        else if (c == sep)
        {
            out.push_back(std::move(cur));
            cur.clear();
        }
        else
            cur += c;
    }
    out.push_back(std::move(cur));
    return out;
}

std::string csv_field(std::string_view value, char sep)
{
    const bool needs = value.find(sep) != std::string_view::npos || value.find('"') != std::string_view::npos ||
                       value.find('\n') != std::string_view::npos ||
                       (!value.empty() && (value.front() == ' ' || value.back() == ' '));
    if (!needs)
        return std::string(value);
    std::string out = "\"";
    for (char c : value)
    {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content)
{
    std::error_code ec;
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path(), ec);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(ErrorKind::io, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out)
            throw Error(ErrorKind::io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& source)
{
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        const std::string t = trim(line);
        if (t.empty())
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::schema, source + ":" + std::to_string(lineno) + ": expected key=value");
        out.emplace_back(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    }
    return out;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size())
{
    for (std::size_t i = 0; i < header.size(); ++i)
    {
        if (i)
            out_ += ',';
        out_ += csv_field(header[i]);
    }
    out_ += '\n';
}

void CsvWriter::add(const std::vector<std::string>& cells)
{
    if (cells.size() != columns_)
        throw Error(ErrorKind::invalid_input, "CSV row has " + std::to_string(cells.size()) + " cells, expected " +
                                                  std::to_string(columns_));
    for (std::size_t i = 0; i < cells.size(); ++i)
    {
        if (i)
            out_ += ',';
        out_ += csv_field(cells[i]);
    }
    out_ += '\n';
    ++rows_;
}

std::optional<std::size_t> CsvTable::find_column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name)
            return i;
    return std::nullopt;
}

std::size_t CsvTable::column(std::string_view name) const
{
    if (auto c = find_column(name))
        return *c;
    throw Error(ErrorKind::schema, source.string() + ": missing column '" + std::string(name) + "'");
}

CsvTable read_csv_table(const std::filesystem::path& path, const std::vector<std::string>& required)
{
    CsvTable table;
    table.source = path;
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::io, "cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line))
    {
        ++lineno;
        if (!have_header)
        {
            if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
                line.erase(0, 3);
            table.header = split_csv_line(line);
            for (auto& h : table.header)
                h = trim(h);
            have_header = true;
            continue;
        }
        if (trim(line).empty())
            continue;
        auto cells = split_csv_line(line);
        if (cells.size() != table.header.size())
            throw Error(ErrorKind::schema, path.string() + ":" + std::to_string(lineno) + ": expected " +
                                               std::to_string(table.header.size()) + " fields, found " +
                                               std::to_string(cells.size()));
        table.rows.push_back(std::move(cells));
        table.line_numbers.push_back(lineno);
    }
    if (!have_header)
        throw Error(ErrorKind::schema, path.string() + ": missing header row");
    for (const auto& r : required)
        table.column(r);
    return table;
}

} // namespace ipdm
