#pragma once

namespace ksestab {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from KSESTAB_LOG (error|warn|info|debug), default warn.
LogLevel log_level();

void klog(LogLevel level, const char* fmt, ...);

} // namespace ksestab
