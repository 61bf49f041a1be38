#include "flowdro/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace flowdro::log {
namespace {

std::mutex g_mutex;
Sink g_sink;
std::atomic<std::size_t> g_count{0};

}  // namespace

Sink set_warning_sink(Sink sink)
{
    std::lock_guard lock(g_mutex);
    std::swap(g_sink, sink);
    return sink;
}

void warn(const std::string& message)
{
    ++g_count;
    std::lock_guard lock(g_mutex);
    if (g_sink) {
        g_sink(message);
    } else {
        std::cerr << "[flowdro] warning: " << message << '\n';
    }
}

std::size_t warning_count() { return g_count.load(); }

}  // namespace flowdro::log
