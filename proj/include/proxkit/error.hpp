#pragma once

#include <stdexcept>

namespace proxkit {

// Thrown when an iterative routine fails to converge or a factorization
// breaks down. Contract violations use std::invalid_argument instead.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace proxkit
