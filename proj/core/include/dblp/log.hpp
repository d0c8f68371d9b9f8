#pragma once

namespace dblp {

/// Sets the spdlog level from DBLP_LOG (trace, debug, info, warn, error,
/// critical, off). Unset means warn; an unknown value keeps warn and says so.
void init_logging();

}  // namespace dblp
