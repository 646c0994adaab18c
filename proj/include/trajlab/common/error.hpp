#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace trajlab {

/// Violation of an operation precondition or a domain invariant.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File, parse or serialization failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration key, value or section.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    format_into(os, rest...);
}
}  // namespace detail

template <typename... Parts>
std::string concat(const Parts&... parts) {
    std::ostringstream os;
    detail::format_into(os, parts...);
    return os.str();
}

template <typename... Parts>
[[noreturn]] void contract_fail(const Parts&... parts) {
    throw ContractError(concat(parts...));
}

template <typename... Parts>
void require(bool cond, const Parts&... parts) {
    if (!cond) contract_fail(parts...);
}

}  // namespace trajlab
