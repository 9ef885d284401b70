#pragma once

#include <stdexcept>
#include <string>

namespace dhue {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument shapes disagree or violate a layout requirement (e.g. odd sizes for the DWT).
class ShapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// File exists but its contents are not what we expect (bad magic, version, JSON).
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};

// NaN/Inf showed up where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace dhue
