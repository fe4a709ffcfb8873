/// @file parallel.hpp
/// Minimal fork-join helpers. Work is split into contiguous chunks, results land in
/// index-addressed slots and reductions use a fixed pairwise tree, so outputs do not depend on
/// the number of threads.

#ifndef IPDM_PARALLEL_HPP
#define IPDM_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <span>
#include <thread>
#include <vector>

namespace ipdm
{

/// Process-wide worker count; 0 restores the hardware default.
void set_thread_count(unsigned n);
unsigned thread_count();

namespace detail
{
/// True on worker threads; nested loops then run inline.
inline thread_local bool in_worker = false;
} // namespace detail

template <class F>
void parallel_for(std::size_t n, F&& body)
{
    const std::size_t workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1 || detail::in_worker)
    {
        for (std::size_t i = 0; i < n; ++i)
            body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w)
    {
        pool.emplace_back([&, w] {
            detail::in_worker = true;
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            try
            {
                for (std::size_t i = begin; i < end; ++i)
                    body(i);
            }
            catch (...)
            {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

/// Pairwise (tree) sum with a fixed association order.
double tree_sum(std::span<const double> values);

} // namespace ipdm

#endif // IPDM_PARALLEL_HPP
