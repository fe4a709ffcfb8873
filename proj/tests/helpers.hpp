#ifndef IPDM_TEST_HELPERS_HPP
#define IPDM_TEST_HELPERS_HPP

#include "ipdm/io.hpp"

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace test
{

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir
{
public:
    explicit TempDir(const std::string& tag = "t")
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ipdm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

    std::filesystem::path write(const std::string& name, const std::string& content) const
    {
        auto p = path_ / name;
        std::filesystem::create_directories(p.parent_path());
        ipdm::write_file_atomic(p, content);
        return p;
    }

private:
    std::filesystem::path path_;
};

} // namespace test

#endif
