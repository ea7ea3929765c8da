#pragma once

#include <stdexcept>
#include <string>

namespace rpt {

// Error taxonomy shared by all modules. The CLI maps ConfigError to exit
// code 2 and NumericError to exit code 3; everything else is a plain 1.

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LengthError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rpt
