#include "dblp/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace dblp {

void init_logging() {
  auto logger = spdlog::stderr_color_mt("dblp");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::warn);

  const char* env = std::getenv("DBLP_LOG");
  if (env == nullptr || *env == '\0') return;
  const std::string value(env);
  const auto level = spdlog::level::from_str(value);
  // from_str maps anything unknown to off.
  if (level == spdlog::level::off && value != "off") {
    spdlog::warn("DBLP_LOG={} is not a log level; using warn", value);
    return;
  }
  spdlog::set_level(level);
}

}  // namespace dblp
