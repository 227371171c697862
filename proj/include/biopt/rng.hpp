#pragma once

#include <cstdint>

namespace biopt {

/* SplitMix64 finalizer; bijective on 64-bit words. */
uint64_t mix64(uint64_t x);

/* Stream tags used throughout so that independent random decisions never
   share a counter sequence. */
namespace stream {
constexpr uint64_t datagen = 0x01;
constexpr uint64_t batch_train = 0x02;
constexpr uint64_t batch_val = 0x03;
constexpr uint64_t block_u = 0x04;
constexpr uint64_t block_w = 0x05;
constexpr uint64_t noise = 0x06;
constexpr uint64_t init = 0x07;
constexpr uint64_t probe = 0x08;
}  // namespace stream

/* Counter-mode generator: every draw is a pure function of
   (seed, stream, step, draw index), so any batch or block decision can be
   reproduced without replaying prior history.  Stateless across steps by
   construction; identical on every platform (no libc distributions). */
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream_tag, uint64_t step);

  uint64_t next_u64();
  double next_double();    /* uniform [0,1) */
  double next_gaussian();  /* standard normal, Box-Muller */
  double next_student_t2();/* Student-t with 2 degrees of freedom */
  uint64_t next_below(uint64_t n); /* uniform on {0,...,n-1}, unbiased */

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace biopt
