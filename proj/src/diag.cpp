#include "rearec/diag.hpp"

namespace rearec::diag {

namespace {
thread_local long g_count = 0;
thread_local std::string g_last;
}  // namespace

void warn(const std::string& message) {
  ++g_count;
  g_last = message;
}

long warning_count() { return g_count; }
std::string last_warning() { return g_last; }

void reset_warnings() {
  g_count = 0;
  g_last.clear();
}

}  // namespace rearec::diag
