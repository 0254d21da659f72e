#ifndef FACECAP_COMMON_LOG_HPP
#define FACECAP_COMMON_LOG_HPP

#include <iostream>
#include <string>

namespace facecap {

inline bool& log_warnings_enabled() {
    static bool enabled = true;
    return enabled;
}

inline void log_warn(const std::string& msg) {
    if (log_warnings_enabled()) std::cerr << "[facecap] warning: " << msg << "\n";
}

} // namespace facecap

#endif
