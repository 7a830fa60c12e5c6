#pragma once

#include <string>

namespace rearec::diag {

// Soft-failure channel: contracts that clamp or degrade instead of throwing
// (probability floor, empty regularizer pair set) flag a warning here so
// callers and tests can observe them.

void warn(const std::string& message);

long warning_count();
std::string last_warning();
void reset_warnings();

}  // namespace rearec::diag
