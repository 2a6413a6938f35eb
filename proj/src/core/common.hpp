#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace avdit {

// Error taxonomy. The C API maps these onto status codes, the CLI onto
// exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

inline void check_contract(bool ok, const std::string& msg) {
    if (!ok) throw ContractError(msg);
}

inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

// Row-major strides for a shape.
inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

}  // namespace avdit
