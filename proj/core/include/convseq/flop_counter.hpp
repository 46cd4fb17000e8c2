#pragma once

#include <cstdint>

namespace convseq {

// Counts multiply-accumulates performed by forward contractions (matmul,
// convolution taps) on the current thread while an instance is alive.
// Elementwise work, softmax and normalization are not counted.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t macs() const;
  std::uint64_t flops() const { return 2 * macs(); }

  static void record(std::uint64_t macs);

 private:
  std::uint64_t start_;
  bool outer_active_;
};

}  // namespace convseq
