#pragma once

// Shared error type and small string helpers used across the library.

#include <sstream>
#include <stdexcept>
#include <string>

namespace unimse {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void str_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void str_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    str_append(os, rest...);
}

} // namespace detail

// Builds a message from heterogeneous parts: str("bad dim ", d, " for ", name).
template <typename... Parts>
std::string str(const Parts&... parts) {
    std::ostringstream os;
    detail::str_append(os, parts...);
    return os.str();
}

template <typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
    throw Error(str(parts...));
}

} // namespace unimse
