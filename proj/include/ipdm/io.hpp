/// @file io.hpp
/// Small file and CSV helpers shared by the persistence code.

#ifndef IPDM_IO_HPP
#define IPDM_IO_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ipdm
{

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::string trim(std::string_view text);

/// Splits one CSV record (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> split_csv_line(std::string_view line, char sep = ',');

/// Quotes a field when it contains the separator, quotes or whitespace at the ends.
std::string csv_field(std::string_view value, char sep = ',');

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Parses `key=value` lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                  const std::string& source);

class CsvWriter
{
public:
    explicit CsvWriter(std::vector<std::string> header);

    template <class... Fields>
    void row(const Fields&... fields)
    {
        std::vector<std::string> cells;
        (cells.push_back(to_cell(fields)), ...);
        add(cells);
    }
    void add(const std::vector<std::string>& cells);

    const std::string& str() const { return out_; }
    std::size_t rows() const { return rows_; }

private:
    static std::string to_cell(double v) { return format_double(v); }
    static std::string to_cell(int v) { return std::to_string(v); }
    static std::string to_cell(long v) { return std::to_string(v); }
    static std::string to_cell(unsigned long v) { return std::to_string(v); }
    static std::string to_cell(long long v) { return std::to_string(v); }
    static std::string to_cell(const std::string& v) { return v; }
    static std::string to_cell(const char* v) { return v; }

    std::size_t columns_;
    std::size_t rows_ = 0;
    std::string out_;
};

/// Header-indexed view of a CSV file.
struct CsvTable
{
    std::filesystem::path source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;

    /// Column index or a schema error naming the file.
    std::size_t column(std::string_view name) const;
    std::optional<std::size_t> find_column(std::string_view name) const;
};

CsvTable read_csv_table(const std::filesystem::path& path, const std::vector<std::string>& required = {});

} // namespace ipdm

#endif // IPDM_IO_HPP
