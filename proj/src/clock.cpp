#include "screenkit/clock.hpp"

#include <cmath>
#include <thread>

namespace screenkit {

namespace {

std::chrono::steady_clock::duration to_steady(double seconds) {
  return std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(seconds));
}

}  // namespace

void SteadyClock::sleep_until(double t) {
  if (!std::isfinite(t)) return;
  std::this_thread::sleep_until(epoch_ + to_steady(t));
}

void SteadyClock::wait_until(std::condition_variable& cv, std::unique_lock<std::mutex>& lock,
                             double t, const std::function<bool()>& pred) {
  if (std::isfinite(t)) {
    cv.wait_until(lock, epoch_ + to_steady(t), pred);
  } else {
    cv.wait(lock, pred);
  }
}

void SimulatedClock::sleep_until(double t) {
  if (!std::isfinite(t)) return;
  double cur = now_.load();
  while (cur < t && !now_.compare_exchange_weak(cur, t)) {
  }
}

void SimulatedClock::wait_until(std::condition_variable& cv, std::unique_lock<std::mutex>& lock,
                                double /*t*/, const std::function<bool()>& pred) {
  cv.wait(lock, pred);
}

void SimulatedClock::advance(double seconds) { sleep_until(now_.load() + seconds); }

}  // namespace screenkit
