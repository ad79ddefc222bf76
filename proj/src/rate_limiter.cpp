#include "screenkit/rate_limiter.hpp"

#include <algorithm>
#include <limits>

#include "screenkit/error.hpp"

namespace screenkit {

RateLimiter::RateLimiter(std::size_t requests_per_window, std::size_t tokens_per_window,
                         double window_seconds)
    : max_requests_(requests_per_window), max_tokens_(tokens_per_window), window_(window_seconds) {
  if (max_requests_ == 0 || max_tokens_ == 0 || !(window_ > 0.0)) {
    fail(ErrorCode::InvalidArgument, "rate limits must be positive");
  }
}

void RateLimiter::prune(double now) {
  while (!history_.empty() && history_.front().time + window_ <= now) {
    tokens_in_window_ -= history_.front().tokens;
    history_.pop_front();
  }
}

double RateLimiter::next_allowed(double now, std::size_t tokens) {
  if (tokens > max_tokens_) return std::numeric_limits<double>::infinity();
  prune(now);
  double at = now;
  if (history_.size() >= max_requests_) {
    at = std::max(at, history_[history_.size() - max_requests_].time + window_);
  }
  if (tokens_in_window_ + tokens > max_tokens_) {
    std::size_t remaining = tokens_in_window_;
    for (const auto& e : history_) {
      remaining -= e.tokens;
      if (remaining + tokens <= max_tokens_) {
        at = std::max(at, e.time + window_);
        break;
      }
    }
  }
  return at;
}

bool RateLimiter::try_acquire(double now, std::size_t tokens) {
  if (next_allowed(now, tokens) > now) return false;
  history_.push_back({now, tokens});
  tokens_in_window_ += tokens;
  return true;
}

}  // namespace screenkit
