#pragma once

#include <cstddef>
#include <deque>

namespace screenkit {

// Sliding-window limiter over request count and token volume. A dispatch at
// time d occupies the window until d + window_seconds.
class RateLimiter {
 public:
  RateLimiter(std::size_t requests_per_window, std::size_t tokens_per_window,
              double window_seconds = 60.0);

  // Earliest time >= now at which a dispatch of `tokens` fits both budgets.
  // Returns +inf when `tokens` alone exceeds the token budget.
  double next_allowed(double now, std::size_t tokens);

  // Records a dispatch if it fits now; returns false otherwise.
  bool try_acquire(double now, std::size_t tokens);

  std::size_t requests_per_window() const noexcept { return max_requests_; }
  std::size_t tokens_per_window() const noexcept { return max_tokens_; }

 private:
  struct Entry {
    double time;
    std::size_t tokens;
  };

  void prune(double now);

  std::size_t max_requests_;
  std::size_t max_tokens_;
  double window_;
  std::deque<Entry> history_;
  std::size_t tokens_in_window_ = 0;
};

}  // namespace screenkit
