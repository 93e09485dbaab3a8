#pragma once

#include <string>

namespace gracelab::store {

/// ISO-8601 UTC time with millisecond precision.
std::string utc_timestamp();

}  // namespace gracelab::store
