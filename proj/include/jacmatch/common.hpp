#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace jm {

// Error taxonomy mirrored by the CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvariantViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void strcat_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void strcat_into(std::ostringstream& os, T&& head, Rest&&... rest) {
    os << head;
    strcat_into(os, std::forward<Rest>(rest)...);
}

}  // namespace detail

template <typename... Args>
std::string strcat(Args&&... args) {
    std::ostringstream os;
    os.precision(17);
    detail::strcat_into(os, std::forward<Args>(args)...);
    return os.str();
}

}  // namespace jm

#define JM_CHECK(cond, ...)                                          \
    do {                                                             \
        if (!(cond)) throw std::runtime_error(jm::strcat(__VA_ARGS__)); \
    } while (0)

#define JM_CHECK_CONFIG(cond, ...)                                   \
    do {                                                             \
        if (!(cond)) throw jm::ConfigError(jm::strcat(__VA_ARGS__)); \
    } while (0)

#define JM_CHECK_NUMERIC(cond, ...)                                   \
    do {                                                              \
        if (!(cond)) throw jm::NumericError(jm::strcat(__VA_ARGS__)); \
    } while (0)
