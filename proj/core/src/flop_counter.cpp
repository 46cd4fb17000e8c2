#include "convseq/flop_counter.hpp"

namespace convseq {
namespace {
thread_local std::uint64_t g_macs = 0;
thread_local bool g_active = false;
}  // namespace

FlopCounter::FlopCounter() : start_(g_macs), outer_active_(g_active) { g_active = true; }

FlopCounter::~FlopCounter() { g_active = outer_active_; }

std::uint64_t FlopCounter::macs() const { return g_macs - start_; }

void FlopCounter::record(std::uint64_t macs) {
  if (g_active) g_macs += macs;
}

}  // namespace convseq
