#include "ipdm/parallel.hpp"

#include <atomic>

namespace ipdm
{

namespace
{
std::atomic<unsigned> g_threads{0};
}

void set_thread_count(unsigned n) { g_threads.store(n); }

unsigned thread_count()
{
    const unsigned n = g_threads.load();
    if (n > 0)
        return n;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

double tree_sum(std::span<const double> values)
{
    if (values.empty())
        return 0.0;
    if (values.size() <= 8)
    {
        double s = 0.0;
        for (double v : values)
            s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return tree_sum(values.first(half)) + tree_sum(values.subspan(half));
}

} // namespace ipdm
