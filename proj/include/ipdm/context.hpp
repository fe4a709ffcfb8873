/// @file context.hpp
/// Progress reporting and cooperative cancellation for long-running operations.

#ifndef IPDM_CONTEXT_HPP
#define IPDM_CONTEXT_HPP

#include "ipdm/domain.hpp"

#include <functional>
#include <string>

namespace ipdm
{

struct RunContext
{
    std::function<void(double)> on_progress;
    std::function<bool()> should_cancel;
    std::function<void(const std::string&)> on_log;

    void progress(double fraction) const
    {
        if (on_progress)
            on_progress(fraction);
    }
    bool cancelled() const { return should_cancel && should_cancel(); }
    void check_cancelled() const
    {
        if (cancelled())
            throw Error(ErrorKind::cancelled, "operation cancelled");
    }
    void log(const std::string& line) const
    {
        if (on_log)
            on_log(line);
    }
};

} // namespace ipdm

#endif // IPDM_CONTEXT_HPP
