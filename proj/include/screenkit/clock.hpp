#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>

namespace screenkit {

// Seconds since an arbitrary epoch. The simulated clock lets tests replay long
// rate-limited runs instantly.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
  virtual void sleep_until(double t) = 0;
  // Blocks until pred() holds or time t passes. A simulated clock only wakes on
  // pred(); its time moves solely through sleep_until.
  virtual void wait_until(std::condition_variable& cv, std::unique_lock<std::mutex>& lock,
                          double t, const std::function<bool()>& pred) = 0;
};

class SteadyClock final : public Clock {
 public:
  SteadyClock() : epoch_(std::chrono::steady_clock::now()) {}

  double now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
  }
  void sleep_until(double t) override;
  void wait_until(std::condition_variable& cv, std::unique_lock<std::mutex>& lock, double t,
                  const std::function<bool()>& pred) override;

 private:
  std::chrono::steady_clock::time_point epoch_;
};

class SimulatedClock final : public Clock {
 public:
  explicit SimulatedClock(double start = 0.0) : now_(start) {}

  double now() const override { return now_.load(); }
  void sleep_until(double t) override;
  void wait_until(std::condition_variable& cv, std::unique_lock<std::mutex>& lock, double t,
                  const std::function<bool()>& pred) override;
  void advance(double seconds);

 private:
  std::atomic<double> now_;
};

}  // namespace screenkit
