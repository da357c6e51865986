#pragma once

#include <mutex>

namespace tesim::detail {

// FFTW's planner is not thread safe. Every plan create and destroy in this
// library takes this lock; executing an existing plan needs no lock.
std::mutex& fftw_plan_mutex();

} // namespace tesim::detail
