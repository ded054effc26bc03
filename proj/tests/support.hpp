#pragma once

#include "stablemv/parallel.hpp"

namespace testing_support {

// Pins the worker count for one scope.
struct ThreadGuard {
    explicit ThreadGuard(unsigned n) { stablemv::set_thread_count(n); }
    ~ThreadGuard() { stablemv::set_thread_count(0); }
    ThreadGuard(const ThreadGuard&) = delete;
    ThreadGuard& operator=(const ThreadGuard&) = delete;
};

}  // namespace testing_support
